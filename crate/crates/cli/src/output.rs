//! Artifacts: the JSON summary and the files written next to it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::SCHEMA_VERSION;

/// Floats in every artifact carry 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, bound: f64) -> Self {
        let pass = match relation {
            Relation::AtMost => value <= bound,
            Relation::AtLeast => value >= bound,
            Relation::Above => value > bound,
        };
        Self { name: name.into(), value, relation, bound, pass }
    }

    /// A yes/no check, recorded as `value ≥ 1`.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Relation::AtLeast, 1.0)
    }
}

/// Key results, checks and artifacts of one run.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub results: Map<String, Value>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

impl Summary {
    pub fn result(&mut self, key: &str, v: impl Serialize) {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        self.results.insert(key.to_string(), v);
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn pass(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }

    /// Writes `contents` to `dir/name` and records the artifact.
    pub fn write(&mut self, dir: &Path, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        self.artifacts.push(name.to_string());
        Ok(path)
    }
}

pub struct Metadata {
    pub experiment: String,
    pub label: String,
    pub config_path: String,
    pub threads: usize,
}

pub fn summary_json(s: &Summary, meta: &Metadata) -> String {
    let mut root = Map::new();
    root.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    root.insert("experiment".into(), Value::from(meta.experiment.clone()));
    root.insert("label".into(), Value::from(meta.label.clone()));
    root.insert("pass".into(), Value::from(s.pass()));
    root.insert("error".into(), s.error.clone().map_or(Value::Null, Value::from));
    root.insert("checks".into(), serde_json::to_value(&s.checks).unwrap_or(Value::Null));
    root.insert("results".into(), Value::Object(s.results.clone()));
    root.insert("artifacts".into(), Value::from(s.artifacts.clone()));
    let mut md = Map::new();
    md.insert("timestamp".into(), Value::from(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)));
    md.insert("version".into(), Value::from(env!("CARGO_PKG_VERSION")));
    md.insert("config".into(), Value::from(meta.config_path.clone()));
    md.insert("threads".into(), Value::from(meta.threads));
    root.insert("metadata".into(), Value::Object(md));
    let mut out = String::new();
    write_value(&mut out, &Value::Object(root), 0);
    out.push('\n');
    out
}

/// Pretty JSON with floats in `{:.16e}`; non-finite floats become `null`.
pub fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, k: usize| out.push_str(&"  ".repeat(k));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_i64() || n.is_u64() {
                let _ = write!(out, "{n}");
            } else {
                match n.as_f64() {
                    Some(x) if x.is_finite() => out.push_str(&fmt_f64(x)),
                    _ => out.push_str("null"),
                }
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            if items.iter().all(|x| x.is_number()) {
                out.push('[');
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, x, indent);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, x) in items.iter().enumerate() {
                pad(out, indent + 1);
                write_value(out, x, indent + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, x)) in map.iter().enumerate() {
                pad(out, indent + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, x, indent + 1);
                if i + 1 < map.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_17_digits() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI * 1e-300, -2.5e17] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
            assert_eq!(digits, 17);
        }
    }

    #[test]
    fn json_is_valid_and_exact() {
        let mut s = Summary::default();
        s.result("third", 1.0 / 3.0);
        s.result("count", 7usize);
        s.result("nan", f64::NAN);
        s.result("vec", vec![0.5, 0.25]);
        s.check(Check::new("small", 1e-9, Relation::AtMost, 1e-8));
        let meta =
            Metadata { experiment: "solve".into(), label: "x \"y\"".into(), config_path: "c.toml".into(), threads: 1 };
        let text = summary_json(&s, &meta);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["results"]["third"].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(v["results"]["count"], 7);
        assert!(v["results"]["nan"].is_null());
        assert_eq!(v["checks"][0]["relation"], "<=");
        assert_eq!(v["pass"], true);
        assert_eq!(v["label"], "x \"y\"");
        assert!(text.contains("3.3333333333333331e-1"));
    }

    #[test]
    fn failing_checks_fail_the_summary() {
        let mut s = Summary::default();
        s.check(Check::new("positive", 0.0, Relation::Above, 0.0));
        assert!(!s.pass());
        let mut t = Summary::default();
        t.check(Check::flag("ok", true));
        assert!(t.pass());
        t.error = Some("boom".into());
        assert!(!t.pass());
    }
}
