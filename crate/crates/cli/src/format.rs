//! Locale-free number formatting and canonical JSON output.

use serde::Serialize;
use serde_json::{Number, Value};

/// C's `%.12g`.
pub fn g12(x: f64) -> String {
    fmt_g(x, 12)
}

pub fn fmt_g(x: f64, prec: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = prec.max(1);
    // the exponent after rounding to p significant digits
    let sci = format!("{:.*e}", p - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= p as i32 {
        let mant = strip_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rounds to 12 significant digits; the JSON writer then prints the
/// shortest representation of the rounded value.
pub fn round12(x: f64) -> f64 {
    g12(x).parse().unwrap_or(x)
}

fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            Number::from_f64(round12(x)).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with floats rounded to 12 significant digits and a trailing newline.
pub fn to_json<T: Serialize>(x: &T) -> String {
    let v = serde_json::to_value(x).unwrap_or(Value::Null);
    let mut s = serde_json::to_string_pretty(&canonical(v)).unwrap_or_default();
    s.push('\n');
    s
}

/// Quotes a CSV field when it holds a comma, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_line(fields: &[String]) -> String {
    let mut s = fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf() {
        let cases = [
            (1.0 / 9.0, "0.111111111111"),
            (1.0, "1"),
            (-3.336980123456789, "-3.33698012346"),
            (1e-5, "1e-05"),
            (1.5e-12, "1.5e-12"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (999999999999.9, "1e+12"),
            (0.5, "0.5"),
        ];
        for (x, want) in cases {
            assert_eq!(g12(x), want, "{x}");
        }
    }

    #[test]
    fn json_rounds_floats() {
        let s = to_json(&vec![0.1 + 0.2, 2.0]);
        assert!(s.contains("0.3"), "{s}");
        assert!(!s.contains("0.30000000000000004"));
    }

    proptest::proptest! {
        #[test]
        fn g12_is_rounding_to_twelve_digits(m in -1.0f64..1.0, e in -300i32..300) {
            let x = m * 10f64.powi(e);
            let want: f64 = format!("{:.11e}", x).parse().unwrap();
            proptest::prop_assert_eq!(g12(x).parse::<f64>().unwrap(), want);
            // fixed notation exactly when the rounded exponent is in [-4, 11]
            let sci = format!("{:.11e}", x);
            let exp: i32 = sci.split_once('e').unwrap().1.parse().unwrap();
            proptest::prop_assert_eq!(!g12(x).contains('e'), x == 0.0 || (-4..12).contains(&exp));
        }
    }

    #[test]
    fn csv_quotes_labels() {
        assert_eq!(csv_field("-2,-1"), "\"-2,-1\"");
        assert_eq!(csv_field("abc"), "abc");
    }
}
