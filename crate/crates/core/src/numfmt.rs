//! Float formatting for emitted CSV: 17 significant digits, `.` decimal
//! separator, so every value parses back to the same f64.

/// Format `x` with 17 significant digits.
///
/// Plain decimal notation is used for magnitudes in `[1e-5, 1e17)`,
/// scientific notation otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding may carry into a new leading digit; still 17+ digits, still exact
        trim_zeros(s)
    } else {
        format!("{x:.16e}")
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0');
    let t = t.strip_suffix('.').unwrap_or(t);
    t.to_string()
}
