use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">")]
    Above,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Below => "<",
            Relation::Above => ">",
        }
    }
}

/// One tolerance check; NaN values fail and are written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(deserialize_with = "nan_as_null")]
    pub value: f64,
    pub relation: Relation,
    #[serde(deserialize_with = "nan_as_null")]
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tol: f64) -> Check {
        Check { name: name.into(), value, relation: Relation::AtMost, tol, pass: value <= tol }
    }

    pub fn at_least(name: &str, value: f64, tol: f64) -> Check {
        Check { name: name.into(), value, relation: Relation::AtLeast, tol, pass: value >= tol }
    }

    pub fn below(name: &str, value: f64, tol: f64) -> Check {
        Check { name: name.into(), value, relation: Relation::Below, tol, pass: value < tol }
    }

    pub fn above(name: &str, value: f64, tol: f64) -> Check {
        Check { name: name.into(), value, relation: Relation::Above, tol, pass: value > tol }
    }
}

fn nan_as_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: Value,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Scalar results of the run.
    pub summary: Value,
    pub wall_clock_s: f64,
    pub outputs: Vec<OutputFile>,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn load(path: &Path) -> Result<RunManifest, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Inventory of the files written under `out`, sorted by path.
pub fn inventory(out: &Path, files: &[PathBuf]) -> Result<Vec<OutputFile>, CliError> {
    let mut v = files
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let rel = p.strip_prefix(out).unwrap_or(p);
            Ok(OutputFile { path: rel.to_string_lossy().replace('\\', "/"), bytes: bytes.len() as u64, sha256: hex(&Sha256::digest(&bytes)) })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    v.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(v)
}
