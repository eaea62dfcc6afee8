//! Output formatting shared by the CSV and JSON writers.

use std::fmt::Write as _;

/// A float with 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Prefixes every line of `config` with `# ` to form a file header.
pub fn comment_header(command: &str, config: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# dgue {command}");
    for line in config.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}
