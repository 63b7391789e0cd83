//! Locale-independent numeric formatting for emitted tables.
//!
//! All real-valued output goes through [`fmt_sig`] with ten significant
//! digits so golden files stay stable across platforms and so downstream
//! parsers never meet locale-dependent separators.

/// Format `x` in plain decimal with `digits` significant digits.
///
/// Uses `.` as the decimal separator unconditionally. Very large or very
/// small magnitudes (decimal exponent outside `[-9, 20]`) fall back to
/// scientific notation rather than emitting walls of zeros.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1, "need at least one significant digit");
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // Round in scientific form first to learn the decimal exponent.
    let sci = format!("{:.*e}", digits - 1, x);
    let epos = sci.find('e').expect("scientific form always has an exponent");
    let exp: i32 = sci[epos + 1..].parse().expect("exponent is an integer");
    if !(-9..=20).contains(&exp) {
        return sci;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Ten significant digits, the format of every real value in CSV output.
pub fn fmt_sig10(x: f64) -> String {
    fmt_sig(x, 10)
}
