//! `--config` handling: a JSON object (inline or a file path) whose keys are
//! dotted paths into the command's typed configuration.

use cleanctg::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Reads the override document from a file when `spec` names one, else
/// parses it as inline JSON.
pub fn parse_overrides(spec: &str) -> Result<Map<String, Value>> {
    let text = if std::path::Path::new(spec).is_file() { std::fs::read_to_string(spec)? } else { spec.to_string() };
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Config("--config must be a JSON object".into())),
        Err(e) => Err(Error::Config(format!("--config is not valid JSON: {e}"))),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Sets every dotted path of `overrides` in `base`. Paths must name
/// existing fields.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, overrides: &Map<String, Value>) -> Result<T> {
    let mut root = serde_json::to_value(base)?;
    let mut leaves = Vec::new();
    flatten("", &Value::Object(overrides.clone()), &mut leaves);
    for (path, value) in leaves {
        let mut node = &mut root;
        for part in path.split('.') {
            node = match node {
                Value::Object(m) => m.get_mut(part),
                Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("unknown config field {path:?}")))?;
        }
        *node = value;
    }
    serde_json::from_value(root).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Inner {
        a: f64,
        v: Vec<u32>,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Outer {
        inner: Inner,
        seed: u64,
    }

    #[test]
    fn dotted_and_nested_paths() {
        let base = Outer { inner: Inner { a: 1.0, v: vec![1, 2] }, seed: 0 };
        let o = parse_overrides(r#"{"inner.a": 2.5, "inner": {"v": [7]}, "seed": 9}"#).unwrap();
        let got = apply(&base, &o).unwrap();
        assert_eq!(got, Outer { inner: Inner { a: 2.5, v: vec![7] }, seed: 9 });
        let o = parse_overrides(r#"{"inner.v.1": 5}"#).unwrap();
        assert_eq!(apply(&base, &o).unwrap().inner.v, vec![1, 5]);
    }

    #[test]
    fn rejects_unknown_and_mistyped() {
        let base = Outer { inner: Inner { a: 1.0, v: vec![] }, seed: 0 };
        assert!(matches!(apply(&base, &parse_overrides(r#"{"inner.b": 1}"#).unwrap()), Err(Error::Config(_))));
        assert!(matches!(apply(&base, &parse_overrides(r#"{"seed": "x"}"#).unwrap()), Err(Error::Config(_))));
        assert!(matches!(parse_overrides("[1]"), Err(Error::Config(_))));
        assert!(matches!(parse_overrides("{"), Err(Error::Config(_))));
    }
}
