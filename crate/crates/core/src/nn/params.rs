//! Versioned container of named, row-major `f64` tensors.
//!
//! JSON layout:
//!
//! ```json
//! {"format": "feduaf-params", "version": 1,
//!  "tensors": [{"name": "shared.0.weight", "shape": [64, 128], "values": [...]}]}
//! ```
//!
//! Used for checkpoints and for the shared-parameter exchange between the
//! simulated server and clients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAMS_FORMAT: &str = "feduaf-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            values,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSet {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl ParamSet {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Looks up `name` and checks its shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&NamedTensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::Shape(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// Same tensor names, order and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != PARAMS_FORMAT {
            return Err(Error::Schema(format!(
                "unknown parameter format `{}`",
                self.format
            )));
        }
        if self.version != PARAMS_VERSION {
            return Err(Error::Schema(format!(
                "unsupported parameter format version {} (expected {PARAMS_VERSION})",
                self.version
            )));
        }
        for t in &self.tensors {
            if t.numel() != t.values.len() {
                return Err(Error::Schema(format!(
                    "tensor `{}` declares shape {:?} but holds {} values",
                    t.name,
                    t.shape,
                    t.values.len()
                )));
            }
            crate::error::ensure_finite(&t.values, &t.name)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ParamSet = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
