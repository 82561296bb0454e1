//! Deterministic serialization helpers: every float is written with 17
//! significant digits (`{:.16e}`) in both JSON and CSV, so outputs
//! round-trip exactly and golden files are byte-stable.

use serde::Serialize;
use serde_json::{Number, Value};

use crate::{AppError, Result};

/// Formats a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn rewrite_floats(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if !n.is_i64() && !n.is_u64() {
                if let Some(f) = n.as_f64() {
                    *n = Number::from_string_unchecked(fmt_float(f));
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(rewrite_floats),
        Value::Object(map) => map.values_mut().for_each(rewrite_floats),
        _ => {}
    }
}

fn to_rewritten_value<T: Serialize>(value: &T) -> Result<Value> {
    let mut v = serde_json::to_value(value)
        .map_err(|e| AppError::Input(format!("serialization failed: {e}")))?;
    rewrite_floats(&mut v);
    Ok(v)
}

/// Pretty JSON document with 17-significant-digit floats and a trailing
/// newline.
pub fn to_json_document<T: Serialize>(value: &T) -> Result<String> {
    let v = to_rewritten_value(value)?;
    let mut out = serde_json::to_string_pretty(&v)
        .map_err(|e| AppError::Input(format!("serialization failed: {e}")))?;
    out.push('\n');
    Ok(out)
}

/// One compact JSON line (no trailing newline) with 17-significant-digit
/// floats, for JSONL output.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let v = to_rewritten_value(value)?;
    serde_json::to_string(&v).map_err(|e| AppError::Input(format!("serialization failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[test]
    fn floats_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.powi(-40) + 1.0, -0.0, 6.02e23, 1e-308] {
            let parsed: f64 = fmt_float(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "value {v}");
        }
    }

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Mixed {
        count: usize,
        ratio: f64,
        values: Vec<f64>,
    }

    #[test]
    fn integers_stay_integers_and_floats_expand() {
        let m = Mixed { count: 7, ratio: 0.1, values: vec![1.0, 0.5] };
        let line = to_json_line(&m).unwrap();
        assert!(line.contains("\"count\":7"));
        assert!(line.contains("1.0000000000000001e-1"));
        let back: Mixed = serde_json::from_str(&line).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn document_is_stable() {
        let m = Mixed { count: 1, ratio: 0.25, values: vec![] };
        assert_eq!(to_json_document(&m).unwrap(), to_json_document(&m).unwrap());
    }
}
