//! Versioned JSON snapshot of a trained run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hierlabel::IntervalPartition;
use crate::model::{Hcan, ModelSpec};
use crate::params::ParamStore;

use super::data::ZScore;
use super::train::{Metrics, Trained};

pub const SNAPSHOT_FORMAT: &str = "hcan-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub columns: Vec<String>,
    pub norm: ZScore,
    pub partitions: Vec<IntervalPartition>,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub model: Hcan,
    pub params: ParamStore,
}

impl Snapshot {
    pub fn new(
        config: RunConfig,
        columns: Vec<String>,
        norm: ZScore,
        partitions: Vec<IntervalPartition>,
        trained: &Trained,
    ) -> Self {
        Self {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            config,
            columns,
            norm,
            partitions,
            best_epoch: trained.best_epoch,
            best_val: trained.best_val,
            model: trained.model.clone(),
            params: trained.params.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("not valid JSON: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(SNAPSHOT_FORMAT) => {}
            _ => return Err(Error::Format(format!("missing or wrong format tag (expected {SNAPSHOT_FORMAT:?})"))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SNAPSHOT_VERSION) => {}
            Some(v) => return Err(Error::Compatibility(format!("snapshot version {v}, expected {SNAPSHOT_VERSION}"))),
            None => return Err(Error::Format("missing version".into())),
        }
        let snap: Self = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
        snap.check_params()?;
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Parameter names and shapes must match a fresh model of the stored spec.
    fn check_params(&self) -> Result<()> {
        let (fresh, mut store) = Hcan::new(self.model.spec.clone(), 0)
            .map_err(|e| Error::Format(format!("stored model spec is invalid: {e}")))?;
        if fresh != self.model {
            return Err(Error::Format("stored model layout does not match its spec".into()));
        }
        store.load(&self.params)
    }

    /// The snapshot must describe the model `cfg` would build.
    pub fn check_config(&self, cfg: &RunConfig) -> Result<()> {
        let spec = ModelSpec::from_config(cfg)?;
        if spec != self.model.spec {
            return Err(Error::Compatibility(format!(
                "configuration describes {spec:?}, snapshot holds {:?}",
                self.model.spec
            )));
        }
        if cfg.data.channels != self.config.data.channels || cfg.data.split != self.config.data.split {
            return Err(Error::Compatibility("channel selection or split differs from the snapshot".into()));
        }
        Ok(())
    }
}
