//! Files: CSV data, model containers, and training configuration.

pub mod config;
pub mod container;
pub mod csv;

/// Six significant digits, `%g` style. Used for human-facing reports.
pub fn format_report(x: f64) -> String {
    format_significant(x, 6)
}

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn format_payload(x: f64) -> String {
    format_significant(x, 17)
}

/// `%g`-style formatting with `digits` significant digits, independent of locale.
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    // Round first so that e.g. 9.9999996 with 6 digits lands on exponent 1.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
