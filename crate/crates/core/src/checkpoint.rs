//! Versioned JSON checkpoints for NSPDA and baseline parameters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineParams;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Nspda(ModelParams),
    Baseline(BaselineParams),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Nspda(_) => "nspda",
            Model::Baseline(_) => "baseline",
        }
    }

    pub fn alphabet_len(&self) -> usize {
        match self {
            Model::Nspda(p) => p.l,
            Model::Baseline(p) => p.l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Nspda(p) => p.validate(),
            Model::Baseline(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    /// Free-form: grammar, hint_level, replicate, ...
    pub metadata: BTreeMap<String, String>,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64) -> Self {
        Self { format_version: FORMAT_VERSION, seed, metadata: BTreeMap::new(), model }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint is not JSON: {e}")))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(Error::Format(format!("checkpoint format_version {v}, expected {FORMAT_VERSION}"))),
            None => return Err(Error::Format("checkpoint has no format_version".into())),
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Format(format!("bad checkpoint: {e}")))?;
        ck.model.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelOrder};

    #[test]
    fn version_mismatch_is_a_format_error() {
        let ck = Checkpoint::new(Model::Nspda(init_params(ModelOrder::Third, 3, 2, 1).unwrap()), 1);
        let text = ck.to_json().replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::from_json("{}"), Err(Error::Format(_))));
        assert_eq!(Checkpoint::from_json(&ck.to_json()).unwrap(), ck);
    }

    #[test]
    fn shape_corruption_is_rejected() {
        let mut p = init_params(ModelOrder::Second, 3, 2, 1).unwrap();
        p.w_o.pop();
        let text = Checkpoint::new(Model::Nspda(p), 0).to_json();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Format(_))));
    }
}
