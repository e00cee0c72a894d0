//! Result persistence: provenance stamping, CSV/JSON writers with
//! deterministic formatting, and the regression comparator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(canonical_config: &str, seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(canonical_config.as_bytes());
        Self {
            config_sha256: hex::encode(hasher.finalize()),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
        }
    }

    pub fn csv_header(&self) -> String {
        format!(
            "# config_sha256: {}\n# version: {}\n# seed: {}\n",
            self.config_sha256, self.version, self.seed
        )
    }
}

/// Fixed-precision float formatting so identical runs produce identical bytes.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.12e}")
    }
}

pub struct RunWriter {
    dir: PathBuf,
    provenance: Provenance,
}

impl RunWriter {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), provenance })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// CSV with a provenance comment header and one header row.
    pub fn write_csv(&self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
        let mut text = self.provenance.csv_header();
        text.push_str(&columns.join(","));
        text.push('\n');
        for row in rows {
            let mut line = String::new();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{}", fmt_f64(*v));
            }
            text.push_str(&line);
            text.push('\n');
        }
        let path = self.path(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// JSON value with the provenance embedded under "provenance".
    pub fn write_json(&self, name: &str, value: &Value) -> Result<PathBuf> {
        let mut wrapped = value.clone();
        if let Value::Object(map) = &mut wrapped {
            map.insert(
                "provenance".to_string(),
                serde_json::to_value(&self.provenance).unwrap(),
            );
        }
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&wrapped).unwrap() + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Per-field tolerances for the regression comparator.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
    /// Field-path overrides, e.g. {"full.dark_count": {"abs": 0.01, "rel": 0}}.
    pub fields: BTreeMap<String, FieldTolerance>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FieldTolerance {
    pub abs: f64,
    pub rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub field: String,
    pub result: f64,
    pub baseline: f64,
    pub allowed_abs: f64,
    pub allowed_rel: f64,
}

/// Compare a result JSON against a baseline JSON field by field. Provenance
/// blocks are skipped; number fields obey the tolerances; any structural
/// difference is a schema mismatch.
pub fn regression_compare(
    result: &Value,
    baseline: &Value,
    tol: &Tolerances,
) -> Result<Vec<Violation>> {
    let mut violations = Vec::new();
    compare_node(result, baseline, tol, "", &mut violations)?;
    Ok(violations)
}

fn compare_node(
    result: &Value,
    baseline: &Value,
    tol: &Tolerances,
    path: &str,
    out: &mut Vec<Violation>,
) -> Result<()> {
    match (result, baseline) {
        (Value::Object(r), Value::Object(b)) => {
            for key in b.keys() {
                if key == "provenance" {
                    continue;
                }
                if !r.contains_key(key) {
                    bail!("schema mismatch: result lacks field {path}{key}");
                }
            }
            for key in r.keys() {
                if key == "provenance" {
                    continue;
                }
                if !b.contains_key(key) {
                    bail!("schema mismatch: baseline lacks field {path}{key}");
                }
            }
            for (key, rv) in r {
                if key == "provenance" {
                    continue;
                }
                let sub = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                compare_node(rv, &b[key], tol, &sub, out)?;
            }
            Ok(())
        }
        (Value::Array(r), Value::Array(b)) => {
            if r.len() != b.len() {
                bail!("schema mismatch: array {path} lengths {} vs {}", r.len(), b.len());
            }
            for (k, (rv, bv)) in r.iter().zip(b).enumerate() {
                compare_node(rv, bv, tol, &format!("{path}[{k}]"), out)?;
            }
            Ok(())
        }
        (Value::Number(r), Value::Number(b)) => {
            let (rv, bv) = (r.as_f64().unwrap(), b.as_f64().unwrap());
            let (abs, rel) = tol
                .fields
                .get(path)
                .map(|f| (f.abs, f.rel))
                .unwrap_or((tol.abs, tol.rel));
            if rv.is_nan() && bv.is_nan() {
                return Ok(());
            }
            if (rv - bv).abs() > abs + rel * bv.abs() {
                out.push(Violation {
                    field: path.to_string(),
                    result: rv,
                    baseline: bv,
                    allowed_abs: abs,
                    allowed_rel: rel,
                });
            }
            Ok(())
        }
        (Value::String(r), Value::String(b)) => {
            if r != b {
                bail!("schema mismatch: string field {path}: {r:?} vs {b:?}");
            }
            Ok(())
        }
        (Value::Bool(r), Value::Bool(b)) => {
            if r != b {
                bail!("boolean field {path} differs: {r} vs {b}");
            }
            Ok(())
        }
        (Value::Null, Value::Null) => Ok(()),
        _ => bail!("schema mismatch at {path}: differing types"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn identical_files_pass() {
        let v = json!({"a": 1.0, "b": {"c": [1.0, 2.0]}, "s": "x"});
        let viols = regression_compare(&v, &v, &Tolerances::default()).unwrap();
        assert!(viols.is_empty());
    }

    #[test]
    fn violation_names_the_field() {
        let r = json!({"dark_count": 0.29, "efficiency": 0.66});
        let b = json!({"dark_count": 0.24, "efficiency": 0.66});
        let tol = Tolerances { abs: 0.01, ..Default::default() };
        let viols = regression_compare(&r, &b, &tol).unwrap();
        assert_eq!(viols.len(), 1);
        assert_eq!(viols[0].field, "dark_count");
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let r = json!({"a": 1.0});
        let b = json!({"a": 1.0, "b": 2.0});
        assert!(regression_compare(&r, &b, &Tolerances::default()).is_err());
        let b2 = json!({"a": "text"});
        assert!(regression_compare(&r, &b2, &Tolerances::default()).is_err());
    }

    #[test]
    fn per_field_tolerance_overrides() {
        let r = json!({"x": 1.05, "y": 1.05});
        let b = json!({"x": 1.0, "y": 1.0});
        let mut tol = Tolerances { abs: 1e-9, ..Default::default() };
        tol.fields.insert("x".into(), FieldTolerance { abs: 0.1, rel: 0.0 });
        let viols = regression_compare(&r, &b, &tol).unwrap();
        assert_eq!(viols.len(), 1);
        assert_eq!(viols[0].field, "y");
    }
}
