//! Canonical request bytes and cache keys.
//!
//! Object keys are emitted in sorted order and every non-integer number is
//! rendered with 9 significant digits, so two requests that differ only in key
//! order or in float noise below that precision share a key.

use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SIGNIFICANT_DIGITS: usize = 9;

pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    write_value(value, &mut out);
    out
}

/// Hex SHA-256 over `endpoint`, a separator byte and the canonical request.
pub fn request_key(endpoint: &str, request: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(endpoint.as_bytes());
    hasher.update([0u8]);
    hasher.update(canonical_bytes(request));
    hex::encode(hasher.finalize())
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                out.extend_from_slice(format_float(f).as_bytes());
            }
        }
        Value::String(s) => {
            // serde_json string escaping is already deterministic.
            out.extend_from_slice(Value::String(s.clone()).to_string().as_bytes());
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend_from_slice(Value::String(k.clone()).to_string().as_bytes());
                out.push(b':');
                write_value(&map[k], out);
            }
            out.push(b'}');
        }
    }
}

fn format_float(f: f64) -> String {
    if f == 0.0 {
        // Collapse -0.0 and 0.0.
        return "0".to_string();
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn key_order_is_irrelevant() {
        let a: Value = serde_json::from_str(r#"{"prompt":"x","n":2,"top_p":0.9}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"top_p":0.9,"n":2,"prompt":"x"}"#).unwrap();
        assert_eq!(request_key("generate", &a), request_key("generate", &b));
    }

    #[test]
    fn endpoint_is_part_of_the_key() {
        let req = json!({"text": "hello"});
        assert_ne!(request_key("classify", &req), request_key("encode", &req));
    }

    #[test]
    fn float_rendering() {
        assert_eq!(format_float(0.1), "1.00000000e-1");
        assert_eq!(format_float(-0.0), "0");
        assert_eq!(
            canonical_bytes(&json!({"b": [1, 2.5], "a": null})),
            br#"{"a":null,"b":[1,2.50000000e0]}"#.to_vec()
        );
    }

    proptest! {
        #[test]
        fn noise_below_precision_shares_a_key(x in -1.0e3f64..1.0e3, k in 1u32..4) {
            // Perturb well below the 9th significant digit.
            let tiny = x * 1e-12 * k as f64;
            let a = json!({"embedding": [[x, 1.0]]});
            let b = json!({"embedding": [[x + tiny, 1.0]]});
            prop_assume!(format_float(x) == format_float(x + tiny));
            prop_assert_eq!(request_key("decode", &a), request_key("decode", &b));
        }
    }
}
