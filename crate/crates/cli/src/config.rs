use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use smoothlab::evolve::PropagateConfig;
use smoothlab::geometry::{PerturbationSpec, SurfaceSpec};
use smoothlab::grid::GridSpec;
use smoothlab::operators::{CutoffSpec, Surface};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    pub m: u32,
    #[serde(default)]
    pub s: f64,
    #[serde(default = "PerturbationSpec::zero")]
    pub f: PerturbationSpec,
    /// Rescale `f` to `sup |f| = 1` before use.
    #[serde(default = "yes")]
    pub unit_peak: bool,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

fn yes() -> bool {
    true
}

fn default_s_max() -> f64 {
    0.2
}

impl SurfaceSection {
    pub fn spec(&self) -> SurfaceSpec {
        let f = if self.unit_peak && !self.f.is_zero() { self.f.clone().unit_peak(self.m) } else { self.f.clone() };
        SurfaceSpec { m: self.m, s: self.s, f }
    }

    /// Validates the surface parameters and runs the derivative audit.
    pub fn build(&self) -> Result<Surface, CliError> {
        let spec = self.spec();
        spec.validate(self.s_max)?;
        Ok(Surface::audited(spec)?)
    }
}

/// Top-level run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub surface: SurfaceSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoffs: Option<CutoffSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolve: Option<PropagateConfig>,
    #[serde(default = "empty_object")]
    pub experiment: Value,
    #[serde(default)]
    pub seed: u64,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<&GridSpec, CliError> {
        self.grid.as_ref().ok_or_else(|| CliError::Config("missing section: grid".into()))
    }

    pub fn evolve(&self) -> Result<&PropagateConfig, CliError> {
        self.evolve.as_ref().ok_or_else(|| CliError::Config("missing section: evolve".into()))
    }

    pub fn cutoffs(&self) -> Result<CutoffSpec, CliError> {
        let c = self.cutoffs.ok_or_else(|| CliError::Config("missing section: cutoffs".into()))?;
        c.validate()?;
        Ok(c)
    }

    /// Parses the experiment section and writes it back with defaults filled in.
    pub fn experiment<T: Serialize + DeserializeOwned>(&mut self) -> Result<T, CliError> {
        let e: T = serde_json::from_value(self.experiment.clone()).map_err(|e| CliError::Config(format!("experiment: {e}")))?;
        self.experiment = serde_json::to_value(&e).expect("experiment serializes");
        Ok(e)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn hash_value(v: &Value) -> String {
    hex(&Sha256::digest(serde_json::to_vec(v).expect("value serializes")))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
