//! Number rendering shared by every output file.

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses a number written by [`num`] (or any ordinary decimal form).
pub fn parse_num(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}
