//! Fixed-precision decimal rendering for CSV output.

/// Formats `x` with `digits` significant digits the way C's `%.{digits}g`
/// does: fixed notation when the decimal exponent lies in
/// `[-4, digits)`, scientific otherwise, trailing zeros removed.
pub fn format_sig(x: f64, digits: usize) -> String {
    assert!(digits > 0, "at least one significant digit");
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.unsigned_abs())
    } else {
        let decimals = (digits as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

/// Nine significant digits, the precision of every CSV this crate writes.
pub fn sig9(x: f64) -> String {
    format_sig(x, 9)
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
