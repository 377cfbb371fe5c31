//! JSON run configuration shared by every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::basis::FourierBasis;
use crate::dynamics::{Potential, PotentialKind, SdeConfig};
use crate::error::{FhtError, Result};
use crate::io::bytes_hash;
use crate::sketching::SketchConfig;
use crate::topology::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: PotentialKind,
    /// Sites per axis.
    pub m: usize,
    /// Physical dimension; implied by the Ginzburg-Landau kinds, defaults
    /// to 1 for the harmonic potential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    pub lambda: f64,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Binary, OutputFormat::Csv]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Binary,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSection,
    pub sde: SdeConfig,
    pub basis: FourierBasis,
    pub sketch: SketchConfig,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses JSON, applies `key.path=value` overrides and validates.
    /// Override values are parsed as JSON, falling back to a plain string.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let dims = match (self.potential.kind.physical_dims(), self.potential.dims) {
            (Some(k), Some(given)) if k != given => {
                return Err(FhtError::InvalidParameter(format!(
                    "potential kind needs dims = {k}, got {given}"
                )))
            }
            (Some(k), _) => k,
            (None, given) => given.unwrap_or(1),
        };
        GridSpec::new(dims, self.potential.m)
    }

    pub fn potential(&self) -> Result<Potential> {
        Potential::new(self.potential.kind, self.grid()?, self.potential.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if grid.size() < 2 {
            return Err(FhtError::NotPowerOfTwo(grid.size()));
        }
        self.potential()?;
        self.sde.validate()?;
        FourierBasis::new(self.basis.half_width, self.basis.degree)?;
        self.sketch.validate()?;
        self.sketch.tree(grid.size())?;
        if self.output.formats.is_empty() {
            return Err(FhtError::InvalidParameter("no output formats selected".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in)
    /// of every section except `output`, which does not affect results.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output");
        }
        bytes_hash(value.to_string().as_bytes())
    }
}

fn apply_override(root: &mut Value, text: &str) -> Result<()> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| FhtError::InvalidParameter(format!("override '{text}' is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| FhtError::InvalidParameter(format!("override path '{path}' crosses a non-object")))?;
        if i + 1 == keys.len() {
            obj.insert((*key).to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry((*key).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(FhtError::InvalidParameter(format!("empty override path in '{text}'")))
}
