//! Config loading with `--set` overrides applied before validation.

use std::path::Path;

use alqr_core::{Error, ExperimentConfig};
use serde_json::Value;

/// Parses `key=value`; the value is read as JSON when possible and as a
/// bare string otherwise.
pub fn parse_override(raw: &str) -> Result<(String, Value), Error> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("expected key=value, got `{raw}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config("--set", format!("empty key in `{raw}`")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), value))
}

fn pointer(segments: &[&str]) -> String {
    segments.iter().map(|s| format!("/{s}")).collect()
}

/// Sets `value` at a dotted `key`, creating intermediate objects.
pub fn apply_override(root: &mut Value, key: &str, value: Value) -> Result<(), Error> {
    let segments: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (depth, seg) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        let here = pointer(&segments[..=depth]);
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::config(here.clone(), "expected an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(here.clone(), format!("index out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::config(here, "cannot descend into a scalar")),
        };
    }
    unreachable!("split always yields at least one segment")
}

/// Deserializes a config, reporting failures with a JSON-pointer path.
pub fn from_value(value: Value) -> Result<ExperimentConfig, Error> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = json_pointer(e.path());
        Error::config(path, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{key}")),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn read_value(path: &Path) -> Result<Value, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config("/", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn override_parsing() {
        assert_eq!(parse_override("horizon=10").unwrap(), ("horizon".into(), json!(10)));
        assert_eq!(
            parse_override("controller.schedule=every-step").unwrap(),
            ("controller.schedule".into(), json!("every-step"))
        );
        assert!(parse_override("horizon").is_err());
        assert!(parse_override("=3").is_err());
    }

    #[test]
    fn nested_overrides() {
        let mut v = json!({ "a": { "b": [1, 2] } });
        apply_override(&mut v, "a.b.1", json!(5)).unwrap();
        apply_override(&mut v, "a.c.d", json!(true)).unwrap();
        assert_eq!(v, json!({ "a": { "b": [1, 5], "c": { "d": true } } }));
        let err = apply_override(&mut v, "a.b.7", json!(0)).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref path, .. } if path == "/a/b/7"));
    }

    #[test]
    fn schema_errors_carry_pointer() {
        let v = json!({
            "plant": { "generate": { "n": "three", "m": 1, "target_rho": 0.5, "seed": 1 } },
            "horizon": 10, "trials": 1, "base_seed": 0, "checkpoint_ratio": 2.0, "delta": 0.05
        });
        let err = from_value(v).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref path, .. } if path == "/plant/generate/n"), "{err:?}");
    }
}
