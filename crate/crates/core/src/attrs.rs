//! Structured attribute and extras documents.
//!
//! Values are restricted to null, bool, i64, f64, string, list and map. Maps
//! are ordered by key, so serializing a document is canonical.

use serde_json::{Map, Value};

use crate::error::AttrError;

pub type Document = Map<String, Value>;

/// Default cap on the serialized size of an attribute document.
pub const DEFAULT_ATTRIBUTE_CAP: usize = 16 * 1024 * 1024;

/// Checks the value closure: every integer must fit in an `i64`.
pub fn validate(doc: &Document) -> Result<(), AttrError> {
    fn walk(v: &Value, path: &mut String) -> Result<(), AttrError> {
        match v {
            Value::Number(n) => {
                if n.is_u64() && n.as_i64().is_none() {
                    return Err(AttrError::IntegerRange(path.clone()));
                }
                Ok(())
            }
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    let len = path.len();
                    path.push_str(&format!("[{i}]"));
                    walk(item, path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            Value::Object(map) => {
                for (k, item) in map {
                    let len = path.len();
                    if !path.is_empty() {
                        path.push('.');
                    }
                    path.push_str(k);
                    walk(item, path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
    let mut path = String::new();
    for (k, v) in doc {
        path.clear();
        path.push_str(k);
        walk(v, &mut path)?;
    }
    Ok(())
}

/// Serialized size check against `cap`.
pub fn check_size(doc: &Document, cap: usize) -> Result<String, AttrError> {
    let text = canonical_json(&Value::Object(doc.clone()));
    if text.len() > cap {
        return Err(AttrError::TooLarge { size: text.len(), cap });
    }
    Ok(text)
}

/// Compact JSON with keys in sorted order.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

// Sorts explicitly so the encoding does not depend on serde_json's map feature flags.
fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        scalar => out.push_str(&serde_json::to_string(scalar).expect("scalars serialize")),
    }
}

fn split_path(path: &str) -> Result<Vec<&str>, AttrError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(AttrError::KeyPath(path.to_string()));
    }
    Ok(parts)
}

/// Looks up a dotted key path; list elements are addressed by decimal index.
pub fn get_path<'a>(doc: &'a Document, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = doc.get(parts.next()?)?;
    for part in parts {
        cur = match cur {
            Value::Object(m) => m.get(part)?,
            Value::Array(items) => items.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

/// Sets a dotted key path, creating intermediate maps.
pub fn set_path(doc: &mut Document, path: &str, value: Value) -> Result<(), AttrError> {
    let parts = split_path(path)?;
    let (last, init) = parts.split_last().expect("split yields at least one part");
    let mut cur = doc;
    for part in init {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if !entry.is_object() {
            *entry = Value::Object(Map::new());
        }
        cur = entry.as_object_mut().expect("just ensured object");
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Removes a dotted key path; missing keys are not an error.
pub fn delete_path(doc: &mut Document, path: &str) -> Result<bool, AttrError> {
    let parts = split_path(path)?;
    let (last, init) = parts.split_last().expect("split yields at least one part");
    let mut cur = doc;
    for part in init {
        match cur.get_mut(*part).and_then(Value::as_object_mut) {
            Some(next) => cur = next,
            None => return Ok(false),
        }
    }
    Ok(cur.remove(*last).is_some())
}

/// Name of the JSON type, used by the `of_type` filter.
pub fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(n) if n.is_f64() => "float",
        Value::Number(_) => "int",
        Value::String(_) => "str",
        Value::Array(_) => "list",
        Value::Object(_) => "dict",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(v: Value) -> Document {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn rejects_u64_beyond_i64() {
        let d = doc(json!({"a": {"b": [1, u64::MAX]}}));
        assert_eq!(validate(&d), Err(AttrError::IntegerRange("a.b[1]".into())));
        assert!(validate(&doc(json!({"a": i64::MIN, "f": 1.5}))).is_ok());
    }

    #[test]
    fn nested_paths() {
        let mut d = Document::new();
        set_path(&mut d, "a.b.c", json!(3)).unwrap();
        assert_eq!(get_path(&d, "a.b.c"), Some(&json!(3)));
        assert!(delete_path(&mut d, "a.b.c").unwrap());
        assert!(!delete_path(&mut d, "a.b.c").unwrap());
        assert!(!delete_path(&mut d, "x.y").unwrap());
        assert!(set_path(&mut d, "a..b", json!(1)).is_err());
    }

    #[test]
    fn canonical_is_sorted() {
        let v = json!({"b": 1, "a": {"d": 2, "c": 1}});
        assert_eq!(canonical_json(&v), r#"{"a":{"c":1,"d":2},"b":1}"#);
    }

    #[test]
    fn size_cap() {
        let d = doc(json!({"s": "x".repeat(100)}));
        assert!(matches!(check_size(&d, 50), Err(AttrError::TooLarge { .. })));
        assert!(check_size(&d, 500).is_ok());
    }
}
