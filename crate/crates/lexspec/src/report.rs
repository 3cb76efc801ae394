//! Canonical JSON rendering for reports and logs.
//!
//! Reruns of any command must produce byte-identical output, so object keys
//! are emitted in sorted order and every non-integer number is printed with
//! 17 significant digits (`{:.16e}`), enough to round-trip an `f64` exactly.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot serialize report: {source}")]
    Serialize {
        #[from]
        source: serde_json::Error,
    },
}

fn push_number(out: &mut String, number: &serde_json::Number) {
    if number.is_i64() || number.is_u64() {
        out.push_str(&number.to_string());
    } else {
        let v = number.as_f64().expect("JSON numbers are i64, u64 or f64");
        out.push_str(&format!("{:.16e}", v));
    }
}

fn push_value(out: &mut String, value: &Value, indent: usize, pretty: bool) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => push_number(out, n),
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("strings serialize"))
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    out.push('\n');
                    out.push_str(&"  ".repeat(indent + 1));
                }
                push_value(out, item, indent + 1, pretty);
            }
            if pretty {
                out.push('\n');
                out.push_str(&"  ".repeat(indent));
            }
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    out.push('\n');
                    out.push_str(&"  ".repeat(indent + 1));
                }
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push(':');
                if pretty {
                    out.push(' ');
                }
                push_value(out, &map[key.as_str()], indent + 1, pretty);
            }
            if pretty {
                out.push('\n');
                out.push_str(&"  ".repeat(indent));
            }
            out.push('}');
        }
    }
}

/// Single-line canonical form, for JSON-lines logs.
pub fn to_json_line(value: &impl serde::Serialize) -> Result<String, ReportError> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    push_value(&mut out, &value, 0, false);
    Ok(out)
}

/// Indented canonical form with trailing newline, for report files.
pub fn to_json_report(value: &impl serde::Serialize) -> Result<String, ReportError> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    push_value(&mut out, &value, 0, true);
    out.push('\n');
    Ok(out)
}

pub fn write_json_report(value: &impl serde::Serialize, path: &Path) -> Result<(), ReportError> {
    let text = to_json_report(value)?;
    let mut file = std::fs::File::create(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(text.as_bytes())
        .map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })
}
