//! Fixed numeric formatting for CSV/text artifacts.

/// 17 significant digits in scientific notation; round-trips every `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Short fixed-point rendering for human-facing listings.
pub fn fmt_short(v: f64) -> String {
    format!("{v:.4}")
}
