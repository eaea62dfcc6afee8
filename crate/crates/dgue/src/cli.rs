//! The `dgue` command line.
//!
//! Every artifact starts with its configuration: CSV and text outputs carry
//! it as `#` comment lines, JSON reports as a `config` field next to
//! `schema: 1`. The thread count and the output path are not part of the
//! configuration, so reruns at any parallelism produce identical bytes.
//!
//! Exit codes: 0 success, 2 usage, 3 numerical failure, 4 verification
//! failure.

use std::f64::consts::PI;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::berezin;
use crate::ensemble::{self, EnsembleSpec, H0Recipe, Law};
use crate::error::{Error, Result};
use crate::io::{comment_header, fmt_f64};
use crate::kernel::{self, Method, QuadratureSpec};
use crate::stieltjes::{self, AtomicMeasure, Limit, LimitMeasure, DEFAULT_TOL};
use crate::universality::{self, DensitySettings, FredholmSpec, SCHEMA};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DGUE_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dgue", version, about = "Deformed GUE laboratory")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output file. Relative paths resolve against $DGUE_OUT_DIR when set;
    /// without --out the artifact goes to $DGUE_OUT_DIR/<command>.<ext>, or
    /// to stdout if the variable is unset.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Eigenvalues of independent deformed GUE samples (CSV).
    Sample(SampleArgs),
    /// Limiting and finite-n densities of states on a grid (CSV).
    Density(DensityArgs),
    /// Correlation kernel on a product grid (CSV).
    Kernel(KernelArgs),
    /// Kernel rescaled around a bulk point (CSV grid or JSON report).
    Rescale(RescaleArgs),
    /// Monte Carlo gap probability against the sine-kernel Fredholm value (JSON).
    Gap(GapArgs),
    /// Oracle and identity suites; exit 4 on any failure (JSON).
    Verify(VerifyArgs),
    /// Table of the Grassmann and super-matrix identities; exit 4 on failure.
    BerezinCheck(BerezinArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Density(_) => "density",
            Command::Kernel(_) => "kernel",
            Command::Rescale(_) => "rescale",
            Command::Gap(_) => "gap",
            Command::Verify(_) => "verify",
            Command::BerezinCheck(_) => "berezin-check",
        }
    }
}

/// Deformation `H0` as given on the command line:
/// `zero`, `two-point:A`, `explicit:h1,h2,…`, `uniform:LO,HI`,
/// `gaussian:MU,SIGMA` or `discrete:X1@W1,X2@W2,…` (the last three draw
/// i.i.d. entries from the seed).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum H0Arg {
    Zero,
    Recipe(H0Recipe),
}

impl H0Arg {
    pub fn recipe(&self, n: usize) -> H0Recipe {
        match self {
            H0Arg::Zero => H0Recipe::zero(n),
            H0Arg::Recipe(r) => r.clone(),
        }
    }
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect()
}

fn finite(xs: &[f64]) -> std::result::Result<(), String> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err("values must be finite".into())
    }
}

pub fn parse_h0(s: &str) -> std::result::Result<H0Arg, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let law = |law: Law| -> std::result::Result<H0Arg, String> {
        law.validate().map_err(|e| e.to_string())?;
        Ok(H0Arg::Recipe(H0Recipe::Iid {
            law,
            seed_offset: 0,
        }))
    };
    let pair = |rest: &str| -> std::result::Result<(f64, f64), String> {
        match parse_floats(rest)?[..] {
            [x, y] => Ok((x, y)),
            _ => Err(format!("`{s}` needs two numbers")),
        }
    };
    match kind {
        "zero" | "gue" if rest.is_empty() => Ok(H0Arg::Zero),
        "two-point" => {
            let v = parse_floats(rest)?;
            finite(&v)?;
            match v[..] {
                [a] => Ok(H0Arg::Recipe(H0Recipe::TwoPoint { a })),
                _ => Err(format!("`{s}`: two-point takes one number")),
            }
        }
        "explicit" => {
            let h = parse_floats(rest)?;
            finite(&h)?;
            Ok(H0Arg::Recipe(H0Recipe::Explicit { h }))
        }
        "uniform" => {
            let (lo, hi) = pair(rest)?;
            law(Law::Uniform { lo, hi })
        }
        "gaussian" => {
            let (mu, sigma) = pair(rest)?;
            law(Law::Gaussian { mu, sigma })
        }
        "discrete" => {
            let atoms = rest
                .split(',')
                .map(|t| {
                    let (x, w) = t.split_once('@').ok_or(format!("`{t}` is not X@W"))?;
                    let x = x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number"))?;
                    let w = w.trim().parse::<f64>().map_err(|_| format!("`{w}` is not a number"))?;
                    Ok((x, w))
                })
                .collect::<std::result::Result<Vec<_>, String>>()?;
            law(Law::Discrete { atoms })
        }
        _ => Err(format!(
            "unknown deformation `{s}`; expected zero, two-point:A, explicit:h1,…, uniform:LO,HI, gaussian:MU,SIGMA or discrete:X@W,…"
        )),
    }
}

/// `LO:HI:COUNT`, equally spaced and inclusive; a single point when COUNT is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        (0..self.count)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (self.count - 1) as f64)
            .collect()
    }
}

pub fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts[..] else {
        return Err(format!("grid `{s}` is not LO:HI:COUNT"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("`{lo}` is not a number"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("`{hi}` is not a number"))?;
    let count: usize = count
        .parse()
        .map_err(|_| format!("`{count}` is not a count"))?;
    if !(lo.is_finite() && hi.is_finite()) || count == 0 || (count > 1 && lo >= hi) {
        return Err(format!("grid `{s}` needs finite LO < HI and COUNT >= 1"));
    }
    Ok(Grid { lo, hi, count })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Auto,
    Contour,
    Residue,
    Cd,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Auto => Method::Auto,
            MethodArg::Contour => Method::Contour,
            MethodArg::Residue => Method::Residue,
            MethodArg::Cd => Method::Cd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Ensemble parameters shared by the subcommands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EnsembleArgs {
    /// Matrix dimension.
    #[arg(long)]
    pub n: usize,
    /// Deformation H0.
    #[arg(long, default_value = "zero", value_parser = parse_h0)]
    pub h0: H0Arg,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EnsembleArgs {
    fn spec(&self) -> EnsembleSpec {
        EnsembleSpec::new(self.n, self.h0.recipe(self.n), self.seed)
    }

    /// The realized diagonal of H0 under the master seed.
    fn atoms(&self) -> Result<Vec<f64>> {
        ensemble::realize_h0(&self.h0.recipe(self.n), self.n, self.seed)
    }
}

/// Kernel evaluation parameters.
#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelOpts {
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// Nodes on the vertical line (default: chosen from n).
    #[arg(long)]
    pub line_nodes: Option<usize>,
    /// Nodes on the closed contour (default: chosen from n).
    #[arg(long)]
    pub contour_nodes: Option<usize>,
}

impl KernelOpts {
    fn quad(&self) -> QuadratureSpec {
        QuadratureSpec {
            line_nodes: self.line_nodes,
            contour_nodes: self.contour_nodes,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DensityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ensemble: EnsembleArgs,
    /// Spectral grid LO:HI:COUNT.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true, default_value = "-2.5:2.5:51")]
    pub grid: Grid,
    /// H0 draws averaged in rho_n for random deformations.
    #[arg(long, default_value_t = 16)]
    pub draws: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ensemble: EnsembleArgs,
    /// First argument grid LO:HI:COUNT.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true, default_value = "-1:1:9")]
    pub lambdas: Grid,
    /// Second argument grid LO:HI:COUNT.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true, default_value = "-1:1:9")]
    pub mus: Grid,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RescaleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ensemble: EnsembleArgs,
    /// Bulk point.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lambda0: f64,
    /// Offsets in mean spacings: `count` points evenly spread on [-half, half].
    #[arg(long, default_value_t = 2.0)]
    pub half: f64,
    #[arg(long, default_value_t = 9)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lambda0: f64,
    /// Interval length in mean spacings, centred at lambda0.
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    #[arg(long, default_value_t = 20_000)]
    pub trials: usize,
    /// H0 draws averaged in rho_n for random deformations.
    #[arg(long, default_value_t = 16)]
    pub draws: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Kernel, density and Fredholm oracles.
    Oracle,
    /// Grassmann and super-matrix identities.
    Berezin,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::Oracle)]
    pub suite: Suite,
    /// Dimension for the kernel oracles.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per identity.
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BerezinArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per identity.
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    pub format: TableFormat,
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(name: impl Into<String>, cases: usize, max_error: f64, tolerance: f64) -> Self {
        CheckRow {
            name: name.into(),
            cases,
            max_error,
            tolerance,
            // NaN errors fail
            passed: max_error <= tolerance,
        }
    }
}

/// A produced artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub contents: String,
    pub extension: &'static str,
    /// False when a verification inside the command failed.
    pub passed: bool,
}

impl Artifact {
    fn ok(contents: String, extension: &'static str) -> Self {
        Artifact {
            contents,
            extension,
            passed: true,
        }
    }
}

fn config_json(cmd: &Command) -> Value {
    let inner = serde_json::to_value(cmd).expect("config serializes");
    // {"sample": {...}} -> {"command": "sample", ...}
    let mut out = serde_json::Map::new();
    out.insert("command".into(), Value::String(cmd.name().into()));
    if let Value::Object(m) = inner {
        for (_, v) in m {
            if let Value::Object(fields) = v {
                out.extend(fields);
            }
        }
    }
    Value::Object(out)
}

fn csv_artifact(cmd: &Command, body: String) -> Artifact {
    let config = serde_json::to_string_pretty(&config_json(cmd)).expect("config serializes");
    Artifact::ok(comment_header(cmd.name(), &config) + &body, "csv")
}

fn json_artifact(cmd: &Command, report: Value, passed: bool) -> Artifact {
    let mut obj = match report {
        Value::Object(m) => m,
        other => {
            let mut m = serde_json::Map::new();
            m.insert("report".into(), other);
            m
        }
    };
    obj.insert("schema".into(), json!(SCHEMA));
    obj.insert("config".into(), config_json(cmd));
    let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("report serializes");
    text.push('\n');
    Artifact {
        contents: text,
        extension: "json",
        passed,
    }
}

/// Limiting measure matching a deformation recipe.
pub fn limit_of(recipe: &H0Recipe) -> Result<Limit> {
    let d = match recipe {
        H0Recipe::Explicit { h } => {
            return Ok(Limit::Atomic(AtomicMeasure::from_points(h)?));
        }
        H0Recipe::TwoPoint { a } => LimitMeasure::Atomic {
            atoms: vec![(-a, 0.5), (*a, 0.5)],
        },
        H0Recipe::Iid { law, .. } => match law {
            Law::Uniform { lo, hi } => LimitMeasure::Uniform { lo: *lo, hi: *hi },
            Law::Gaussian { mu, sigma } => LimitMeasure::Gaussian {
                mu: *mu,
                sigma: *sigma,
            },
            Law::Discrete { atoms } => LimitMeasure::Atomic {
                atoms: atoms.clone(),
            },
        },
    };
    Limit::from_descriptor(&d)
}

fn cmd_sample(cmd: &Command, a: &SampleArgs) -> Result<Artifact> {
    if a.trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let m = ensemble::sample_trials(&a.ensemble.spec(), a.trials)?;
    Ok(csv_artifact(cmd, ensemble::samples_csv(&m)))
}

fn cmd_density(cmd: &Command, a: &DensityArgs) -> Result<Artifact> {
    use rayon::prelude::*;
    let spec = a.ensemble.spec();
    let limit = limit_of(&spec.h0)?;
    let settings = DensitySettings {
        method: a.kernel.method.into(),
        quad: a.kernel.quad(),
        draws: a.draws,
    };
    let rows = a
        .grid
        .points()
        .par_iter()
        .map(|&l| {
            let (_, rho) = stieltjes::pastur_solve(&limit, l, DEFAULT_TOL)?;
            let (rho_n, _) = universality::ensemble_density(&spec, l, &settings)?;
            Ok((l, rho, rho_n))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut body = String::from("lambda,rho_limit,rho_n\n");
    for (l, r, rn) in rows {
        body.push_str(&format!("{},{},{}\n", fmt_f64(l), fmt_f64(r), fmt_f64(rn)));
    }
    Ok(csv_artifact(cmd, body))
}

fn cmd_kernel(cmd: &Command, a: &KernelArgs) -> Result<Artifact> {
    let h = a.ensemble.atoms()?;
    let rows = kernel::kernel_grid(
        &h,
        &a.lambdas.points(),
        &a.mus.points(),
        a.kernel.method.into(),
        &a.kernel.quad(),
    )?;
    Ok(csv_artifact(cmd, kernel::kernel_csv(&rows)))
}

fn cmd_rescale(cmd: &Command, a: &RescaleArgs) -> Result<Artifact> {
    if a.count == 0 || !(a.half >= 0.0) {
        return Err(Error::InvalidArgument(
            "need count >= 1 and half >= 0".into(),
        ));
    }
    let h = a.ensemble.atoms()?;
    let offsets = universality::symmetric_offsets(a.half, a.count);
    let grid = universality::rescale_kernel(
        &h,
        a.lambda0,
        &offsets,
        a.kernel.method.into(),
        &a.kernel.quad(),
    )?;
    match a.format {
        Format::Csv => Ok(csv_artifact(cmd, universality::grid_csv(&grid))),
        Format::Json => {
            let sup = universality::sine_sup_error(&grid)?;
            let report = json!({
                "n": grid.n,
                "lambda0": grid.lambda0,
                "rho_n": grid.rho_n,
                "offsets": grid.offsets,
                "sup_error": sup,
            });
            Ok(json_artifact(cmd, report, true))
        }
    }
}

fn cmd_gap(cmd: &Command, a: &GapArgs) -> Result<Artifact> {
    if !(a.length > 0.0) || a.trials < 2 {
        return Err(Error::InvalidArgument(
            "need length > 0 and trials >= 2".into(),
        ));
    }
    let settings = DensitySettings {
        method: a.kernel.method.into(),
        quad: a.kernel.quad(),
        draws: a.draws,
    };
    let report = universality::gap_compare(
        &a.ensemble.spec(),
        a.lambda0,
        -0.5 * a.length,
        0.5 * a.length,
        a.trials,
        &settings,
    )?;
    let mut value = serde_json::to_value(&report).expect("report serializes");
    value["within_3_sigma"] = json!(report.z.abs() <= 3.0);
    Ok(json_artifact(cmd, value, true))
}

/// Kernel, density and Fredholm oracles at dimension `n`.
pub fn oracle_suite(n: usize) -> Result<Vec<CheckRow>> {
    if n == 0 {
        return Err(Error::InvalidDimension("n must be positive".into()));
    }
    let quad = QuadratureSpec::default();
    let mut rows = Vec::new();

    let grid: Vec<f64> = (0..9).map(|k| -1.0 + 0.25 * k as f64).collect();
    let zeros = vec![0.0; n];
    let diag: Vec<f64> = grid
        .iter()
        .map(|&l| Ok(kernel::kernel_cd_gue(n, l, l)?.value.re))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for (i, &l) in grid.iter().enumerate() {
        for (j, &m) in grid.iter().enumerate() {
            let c = kernel::kernel_contour(&zeros, l, m, &quad)?.value;
            let cd = kernel::kernel_cd_gue(n, l, m)?.value;
            worst = worst.max(kernel::scaled_difference(c, cd, diag[i], diag[j]));
        }
    }
    rows.push(CheckRow::new(
        format!("GUE contour vs Christoffel-Darboux (n = {n})"),
        81,
        worst,
        1e-6,
    ));

    let m = n + n % 2;
    let h = ensemble::realize_h0(&H0Recipe::TwoPoint { a: 1.0 }, m, 0)?;
    let pts = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let diag: Vec<f64> = pts
        .iter()
        .map(|&l| Ok(kernel::kernel_contour(&h, l, l, &quad)?.value.re))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for (i, &l) in pts.iter().enumerate() {
        for (j, &mu) in pts.iter().enumerate() {
            let c = kernel::kernel_contour(&h, l, mu, &quad)?.value;
            let r = kernel::kernel_residue(&h, l, mu, &quad)?.value;
            worst = worst.max(kernel::scaled_difference(r, c, diag[i], diag[j]));
        }
    }
    rows.push(CheckRow::new(
        format!("two-point residue vs contour (n = {m})"),
        25,
        worst,
        1e-6,
    ));

    let mut worst: f64 = 0.0;
    let exact = 1.0 / (2.0 * PI).sqrt();
    for hh in [0.0, 5.0, -3.0] {
        for method in [Method::Contour, Method::Residue] {
            let rho = kernel::density_n(&[hh], hh, method, &quad)?;
            worst = worst.max((rho - exact).abs());
        }
    }
    rows.push(CheckRow::new(
        "one-atom density 1/sqrt(2 pi)",
        6,
        worst,
        1e-8,
    ));

    let dirac = AtomicMeasure::dirac(0.0);
    let mut worst: f64 = 0.0;
    for k in 0..41 {
        let l = -2.0 + 0.1 * k as f64;
        let (_, rho) = stieltjes::pastur_solve(&dirac, l, DEFAULT_TOL)?;
        let exact = (4.0 - l * l).max(0.0).sqrt() / (2.0 * PI);
        worst = worst.max((rho - exact).abs());
    }
    rows.push(CheckRow::new(
        "semicircle from the self-consistent equation",
        41,
        worst,
        1e-8,
    ));

    let mut worst: f64 = 0.0;
    for s in [0.25, 0.5, 1.0, 1.5, 2.0] {
        let lo = fredholm_order(s, 20)?;
        let hi = fredholm_order(s, 40)?;
        worst = worst.max((lo - hi).abs());
    }
    rows.push(CheckRow::new(
        "Fredholm gap, orders 20 vs 40",
        5,
        worst,
        1e-10,
    ));
    let s = 1e-3;
    let small = (universality::fredholm_gap(&FredholmSpec::new(0.0, s))? - (1.0 - s)).abs();
    rows.push(CheckRow::new(
        "Fredholm gap of a short interval = 1 - s",
        1,
        small,
        1e-5,
    ));
    Ok(rows)
}

fn fredholm_order(s: f64, order: usize) -> Result<f64> {
    universality::fredholm_gap(&FredholmSpec {
        a: 0.0,
        b: s,
        quad_order: order,
    })
}

fn berezin_rows(seed: u64, cases: usize) -> Result<Vec<CheckRow>> {
    Ok(berezin::identity_suite(seed, cases)?
        .into_iter()
        .map(|r| CheckRow::new(r.name, r.cases, r.max_error, r.tolerance))
        .collect())
}

fn cmd_verify(cmd: &Command, a: &VerifyArgs) -> Result<Artifact> {
    let mut rows = Vec::new();
    if matches!(a.suite, Suite::Oracle | Suite::All) {
        rows.extend(oracle_suite(a.n)?);
    }
    if matches!(a.suite, Suite::Berezin | Suite::All) {
        rows.extend(berezin_rows(a.seed, a.cases)?);
    }
    let passed = rows.iter().all(|r| r.passed);
    let report = json!({ "checks": rows, "passed": passed });
    Ok(json_artifact(cmd, report, passed))
}

fn cmd_berezin(cmd: &Command, a: &BerezinArgs) -> Result<Artifact> {
    let rows = berezin_rows(a.seed, a.cases)?;
    let passed = rows.iter().all(|r| r.passed);
    match a.format {
        TableFormat::Json => Ok(json_artifact(
            cmd,
            json!({ "checks": rows, "passed": passed }),
            passed,
        )),
        TableFormat::Csv => {
            let mut body = String::from("identity,cases,max_error,tolerance,status\n");
            for r in &rows {
                body.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.name.replace(',', ";"),
                    r.cases,
                    fmt_f64(r.max_error),
                    fmt_f64(r.tolerance),
                    status(r.passed)
                ));
            }
            let mut art = csv_artifact(cmd, body);
            art.passed = passed;
            Ok(art)
        }
        TableFormat::Text => {
            let config = serde_json::to_string(&config_json(cmd)).expect("config serializes");
            let mut body = comment_header(cmd.name(), &config);
            body.push_str(&format!(
                "{:<48} {:>5} {:>10} {:>10}  status\n",
                "identity", "cases", "max_error", "tolerance"
            ));
            for r in &rows {
                body.push_str(&format!(
                    "{:<48} {:>5} {:>10.2e} {:>10.0e}  {}\n",
                    r.name,
                    r.cases,
                    r.max_error,
                    r.tolerance,
                    status(r.passed)
                ));
            }
            Ok(Artifact {
                contents: body,
                extension: "txt",
                passed,
            })
        }
    }
}

fn status(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "FAIL"
    }
}

/// Runs one command and returns its artifact.
pub fn execute(cmd: &Command) -> Result<Artifact> {
    match cmd {
        Command::Sample(a) => cmd_sample(cmd, a),
        Command::Density(a) => cmd_density(cmd, a),
        Command::Kernel(a) => cmd_kernel(cmd, a),
        Command::Rescale(a) => cmd_rescale(cmd, a),
        Command::Gap(a) => cmd_gap(cmd, a),
        Command::Verify(a) => cmd_verify(cmd, a),
        Command::BerezinCheck(a) => cmd_berezin(cmd, a),
    }
}

/// Where the artifact goes; `None` means stdout.
pub fn output_path(
    out: Option<&Path>,
    out_dir: Option<&Path>,
    cmd: &str,
    ext: &str,
) -> Option<PathBuf> {
    match (out, out_dir) {
        (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(d)) => Some(d.join(format!("{cmd}.{ext}"))),
        (None, None) => None,
    }
}

fn write_artifact(path: Option<&Path>, art: &Artifact) -> Result<()> {
    use std::io::Write;
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
            std::fs::write(p, &art.contents).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })
        }
        None => std::io::stdout()
            .write_all(art.contents.as_bytes())
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

/// Exit code for an error: bad input is a usage error, the rest numerical.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() || matches!(e, Error::Io { .. }) {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn report_error(command: &str, e: &Error) -> i32 {
    let code = exit_code(e);
    let report = json!({
        "schema": SCHEMA,
        "status": "error",
        "command": command,
        "kind": e.kind(),
        "message": e.to_string(),
        "exit_code": code,
    });
    eprintln!("{report}");
    code
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let name = cli.command.name();
    let result = match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| execute(&cli.command))),
        None => execute(&cli.command),
    };
    let art = match result {
        Ok(a) => a,
        Err(e) => return report_error(name, &e),
    };
    let out_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    let path = output_path(cli.out.as_deref(), out_dir.as_deref(), name, art.extension);
    if let Err(e) = write_artifact(path.as_deref(), &art) {
        return report_error(name, &e);
    }
    if art.passed {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}
