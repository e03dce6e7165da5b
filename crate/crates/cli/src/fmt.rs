//! Output formatting shared by every writer.

/// Fixed 17-significant-digit scientific format; round-trips any f64.
/// Non-finite values print as NA.
pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "NA".to_string()
    }
}

pub fn opt_float(x: Option<f64>) -> String {
    match x {
        Some(v) => float(v),
        None => "NA".to_string(),
    }
}
