//! Deterministic text output: floats with 17 significant digits, non-finite
//! values as `null`, object keys sorted.

use serde::Serialize;
use serde_json::{Map, Value};

use crate::linalg::{Mat, C64};

/// `{:.16e}`, or `None` for NaN and infinities.
pub fn fmt_f64(v: f64) -> Option<String> {
    v.is_finite().then(|| format!("{v:.16e}"))
}

/// CSV cell for a float; non-finite values become `nan`.
pub fn csv_f64(v: f64) -> String {
    fmt_f64(v).unwrap_or_else(|| "nan".to_string())
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |k: usize| "  ".repeat(k);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&fmt_f64(n.as_f64().expect("f64")).unwrap_or_else(|| "null".into()));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) => {
            if a.is_empty() {
                out.push_str("[]");
                return;
            }
            // short arrays of scalars stay on one line
            if a.len() <= 8 && a.iter().all(|x| !x.is_array() && !x.is_object()) {
                out.push('[');
                for (i, x) in a.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(x, indent, out);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(x, indent + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(m) => {
            if m.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(&m[*k], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Render a JSON value with the fixed float format.
pub fn render(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, 0, &mut out);
    out.push('\n');
    out
}

/// Serialize and render; NaN fields become `null`.
pub fn to_json_string<T: Serialize>(v: &T) -> serde_json::Result<String> {
    Ok(render(&serde_json::to_value(v)?))
}

pub fn complex_json(z: C64) -> Value {
    Value::Array(vec![z.re.into(), z.im.into()])
}

/// `{re: rows, im: rows}`, row-major.
pub fn mat_json(m: &Mat) -> Value {
    let part = |f: fn(&C64) -> f64| -> Value {
        Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| f(&m[(i, j)]).into()).collect())).collect())
    };
    let mut o = Map::new();
    o.insert("re".into(), part(|z| z.re));
    o.insert("im".into(), part(|z| z.im));
    Value::Object(o)
}

pub fn vec_json(v: &[C64]) -> Value {
    Value::Array(v.iter().map(|&z| complex_json(z)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_use_seventeen_digits_and_nan_is_null() {
        let v = json!({"b": 0.1, "a": [1, f64::NAN, 2.5e-300], "c": "x\"y"});
        let s = render(&v);
        assert_eq!(s, "{\n  \"a\": [1, null, 2.5000000000000000e-300],\n  \"b\": 1.0000000000000001e-1,\n  \"c\": \"x\\\"y\"\n}\n");
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64(), Some(0.1));
        assert_eq!(csv_f64(f64::INFINITY), "nan");
    }

    #[test]
    fn rendering_round_trips_exactly() {
        let xs = [std::f64::consts::PI, -1e-17, 123456789.123456789, f64::MIN_POSITIVE];
        let s = render(&json!(xs));
        let back: Vec<f64> = s.trim().trim_matches(|c| c == '[' || c == ']').split(", ").map(|t| t.parse().unwrap()).collect();
        assert_eq!(back, xs);
    }
}
