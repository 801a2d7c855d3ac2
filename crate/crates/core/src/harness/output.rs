//! CSV and JSON emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub const METRICS_SCHEMA: &str = "fl-tradeoff-metrics/v1";
pub const METRICS_HEADER: &str = "scenario,seed,eps1,round,eps_p,eps_u,delta_extent,leak_bound,gate,c2,cb,p_exp";

/// `printf("%.9g")`: nine significant digits, trailing zeros removed,
/// exponent form outside `[1e-4, 1e9)`.
pub fn format_g(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Empty for missing values.
pub fn format_opt(x: Option<f64>) -> String {
    x.map(format_g).unwrap_or_default()
}

pub fn format_flag(x: Option<bool>) -> String {
    match x {
        Some(true) => "1".into(),
        Some(false) => "0".into(),
        None => String::new(),
    }
}

/// Writes `# schema: <schema>`, the header and `rows`.
pub fn write_csv(path: &Path, schema: &str, header: &str, rows: &[Vec<String>]) -> Result<()> {
    fs::write(path, render_csv(schema, header, rows))?;
    Ok(())
}

pub fn render_csv(schema: &str, header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    writeln!(out, "# schema: {schema}").expect("string write");
    writeln!(out, "{header}").expect("string write");
    for row in rows {
        writeln!(out, "{}", row.join(",")).expect("string write");
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_formatting() {
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (-2.5, "-2.5"),
            (1.0 / 3.0, "0.333333333"),
            (2.0 / 3.0, "0.666666667"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (99999999.95, "100000000"),
            (999999999.5, "1e+09"),
            (1e-300, "1e-300"),
            (std::f64::consts::PI, "3.14159265"),
            (0.0, "0"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x), want, "{x}");
        }
        assert_eq!(format_g(f64::NAN), "nan");
        assert_eq!(format_opt(None), "");
    }

    #[test]
    fn csv_layout() {
        let text = render_csv("s/v1", "a,b", &[vec!["1".into(), "".into()]]);
        assert_eq!(text, "# schema: s/v1\na,b\n1,\n");
    }
}
