//! Deterministic float formatting for CSV and SVG output.

/// Format with `digits` significant digits, positional when the exponent
/// allows it, scientific otherwise; trailing zeros trimmed. Mirrors C's
/// `%g` so report files stay compact and parse back exactly to the
/// printed precision.
pub fn sig(v: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("numeric exponent");
    if exp < -4 || exp >= digits as i32 {
        return trim_zeros(mantissa) + "e" + &exp.to_string();
    }
    let neg = mantissa.starts_with('-');
    let digits_only: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if exp < 0 {
        out.push_str("0.");
        for _ in 0..(-exp - 1) {
            out.push('0');
        }
        out.push_str(&digits_only);
    } else {
        let point = (exp + 1) as usize;
        if point >= digits_only.len() {
            out.push_str(&digits_only);
            for _ in 0..point - digits_only.len() {
                out.push('0');
            }
        } else {
            out.push_str(&digits_only[..point]);
            out.push('.');
            out.push_str(&digits_only[point..]);
        }
    }
    trim_zeros(&out)
}

/// Fixed six decimal places. Used for wall-clock seconds in reports.
pub fn fixed6(v: f64) -> String {
    format!("{v:.6}")
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0');
    t.trim_end_matches('.').to_string()
}
