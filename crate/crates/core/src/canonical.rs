//! Canonical JSON text: sorted object keys, no insignificant whitespace and
//! every real number rendered with exactly four decimals.
//!
//! Parsing goes through `serde_json`; only emission is custom, because the
//! fixed-decimal rule cannot be expressed with `serde_json::Number`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub enum Canon {
    Null,
    Bool(bool),
    Int(i64),
    /// Finite real, printed with four decimals.
    Real(f64),
    Str(String),
    Array(Vec<Canon>),
    Object(BTreeMap<String, Canon>),
}

impl Canon {
    pub fn object() -> ObjectBuilder {
        ObjectBuilder(BTreeMap::new())
    }

    pub fn str(s: impl Into<String>) -> Canon {
        Canon::Str(s.into())
    }

    pub fn vec3(v: Vec3) -> Canon {
        Canon::Array(alloc::vec![Canon::Real(v.x), Canon::Real(v.y), Canon::Real(v.z)])
    }

    pub fn opt<T>(v: Option<T>, f: impl FnOnce(T) -> Canon) -> Canon {
        v.map(f).unwrap_or(Canon::Null)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        write(self, &mut out)?;
        Ok(out)
    }
}

pub struct ObjectBuilder(BTreeMap<String, Canon>);

impl ObjectBuilder {
    pub fn field(mut self, key: &str, value: Canon) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn build(self) -> Canon {
        Canon::Object(self.0)
    }
}

/// Renders `x` with four decimals; negative zero prints as `0.0000`.
pub fn format_real(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::invariant("non-finite number cannot be serialized"));
    }
    let s = format!("{x:.4}");
    Ok(if s == "-0.0000" { "0.0000".to_string() } else { s })
}

fn write(v: &Canon, out: &mut String) -> Result<()> {
    match v {
        Canon::Null => out.push_str("null"),
        Canon::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Canon::Int(i) => out.push_str(&i.to_string()),
        Canon::Real(x) => out.push_str(&format_real(*x)?),
        Canon::Str(s) => write_str(s, out),
        Canon::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write(item, out)?;
            }
            out.push(']');
        }
        Canon::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_str(k, out);
                out.push(':');
                write(item, out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

fn write_str(s: &str, out: &mut String) {
    // serde_json's string escaping is already deterministic.
    out.push_str(&serde_json::to_string(s).unwrap_or_default());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_and_reals_fixed() {
        let v = Canon::object()
            .field("z", Canon::Real(1.5))
            .field("a", Canon::Array(alloc::vec![Canon::Int(3), Canon::Null]))
            .field("m", Canon::str("q\"x"))
            .build();
        assert_eq!(v.to_text().unwrap(), r#"{"a":[3,null],"m":"q\"x","z":1.5000}"#);
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(format_real(-0.00001).unwrap(), "0.0000");
        assert_eq!(format_real(-1.23456).unwrap(), "-1.2346");
    }

    #[test]
    fn non_finite_is_refused() {
        assert!(Canon::Real(f64::NAN).to_text().is_err());
    }
}
