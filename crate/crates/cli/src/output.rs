//! Artifacts, CSV formatting and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A named output file held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json<T: Serialize>(name: &str, value: &T) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(Self { name: name.to_string(), bytes })
    }

    pub fn csv(name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        Ok(Self { name: name.to_string(), bytes })
    }
}

/// Shortest round-trip representation, scientific for very small or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, artifacts: &[Artifact]) -> Self {
        // Hash the canonical (key-sorted) form so formatting of the input file does not matter.
        let canonical = serde_json::to_vec(&config).unwrap_or_default();
        let mut seeds = Vec::new();
        collect_seeds(&config, &mut seeds);
        seeds.sort_unstable();
        seeds.dedup();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(&canonical),
            config,
            seeds,
            outputs: artifacts.iter().map(|a| (a.name.clone(), sha256_hex(&a.bytes))).collect(),
        }
    }
}

/// Every integer under a `seed` or `seeds` key.
fn collect_seeds(v: &serde_json::Value, out: &mut Vec<u64>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                if k == "seed" || k == "seeds" {
                    match val {
                        serde_json::Value::Number(n) => out.extend(n.as_u64()),
                        serde_json::Value::Array(a) => out.extend(a.iter().filter_map(|x| x.as_u64())),
                        _ => {}
                    }
                } else {
                    collect_seeds(val, out);
                }
            }
        }
        serde_json::Value::Array(a) => a.iter().for_each(|x| collect_seeds(x, out)),
        _ => {}
    }
}

/// Write all artifacts plus `manifest.json` into `dir`.
pub fn write_all(dir: &Path, artifacts: &[Artifact], manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in artifacts {
        let path = dir.join(&a.name);
        fs::write(&path, &a.bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let m = Artifact::json("manifest.json", manifest)?;
    fs::write(dir.join(&m.name), &m.bytes).context("writing manifest.json")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_collected_recursively() {
        let v: serde_json::Value =
            serde_json::from_str(r#"{"seed": 3, "a": {"seeds": [5, 7]}, "b": [{"seed": 9}], "n": 4}"#).unwrap();
        let mut s = Vec::new();
        collect_seeds(&v, &mut s);
        s.sort_unstable();
        assert_eq!(s, vec![3, 5, 7, 9]);
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(opt(None), "");
        assert_eq!(num(2.5e-120), "2.5e-120");
    }
}
