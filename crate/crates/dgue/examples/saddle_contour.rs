//! Traces the saddle curve z(lambda) = x + iy for a finite set of atoms and
//! prints it as CSV, together with the bands where y > 0.

use dgue::stieltjes::{contour_trace, solve_saddle, AtomicMeasure, DEFAULT_TOL};

fn main() -> dgue::Result<()> {
    let m = AtomicMeasure::from_points(&[-1.0, -1.0, 0.3, 1.0, 1.0, 2.0])?;
    let grid: Vec<f64> = (0..=80).map(|k| -4.0 + 0.1 * k as f64).collect();
    let trace = contour_trace(&m, &grid, DEFAULT_TOL)?;
    eprintln!(
        "bands {:?}, x increasing: {}",
        trace.bands,
        trace.x_strictly_increasing()
    );
    let s = solve_saddle(&m, 0.5, DEFAULT_TOL)?;
    eprintln!("saddle at lambda 0.5: {:.6}", s.z);
    print!("{}", trace.to_csv());
    Ok(())
}
