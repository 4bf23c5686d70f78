//! Run configuration, read from TOML with one table per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneKind, DEFAULT_KERNEL};
use crate::error::{Error, Result};
use crate::haa::DEFAULT_HIDDEN;
use crate::hierlabel::HierarchySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub ablation: Components,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Zscore,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: PathBuf,
    /// Column names to model; empty means every numeric column.
    pub channels: Vec<String>,
    pub lookback: usize,
    pub horizon: usize,
    pub split: [f64; 3],
    pub normalization: Normalization,
    /// Use only the first `rows` rows of the file before splitting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/ETTh1.csv"),
            channels: Vec::new(),
            lookback: 336,
            horizon: 96,
            split: [0.6, 0.2, 0.2],
            normalization: Normalization::Zscore,
            rows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub kernel: usize,
    pub hidden: usize,
    /// Class count per hierarchy level, coarsest first.
    pub classes: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Dlinear,
            kernel: DEFAULT_KERNEL,
            hidden: DEFAULT_HIDDEN,
            classes: vec![1, 2, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_ua: f64,
    pub lambda_kl: f64,
    /// Epochs over which the KL weight ramps linearly from 0; 0 disables the ramp.
    pub kl_anneal_epochs: usize,
    pub alpha_reg: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ua: 1.0,
            lambda_kl: 1.0,
            kl_anneal_epochs: 10,
            alpha_reg: 1.0,
            beta: 0.1,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    /// KL weight in effect during 0-based `epoch`.
    pub fn kl_at(&self, epoch: usize) -> f64 {
        if self.kl_anneal_epochs == 0 {
            return self.lambda_kl;
        }
        self.lambda_kl * (epoch as f64 / self.kl_anneal_epochs as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 32,
            epochs: 30,
            patience: 5,
            seed: 2024,
        }
    }
}

/// Optional model components. Each flag requires all earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Components {
    pub enable_uac_fine: bool,
    pub enable_reg: bool,
    pub enable_hierarchy: bool,
    pub enable_hcl: bool,
    pub enable_haa: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self::chain(5)
    }
}

impl Components {
    pub const ROWS: usize = 6;

    /// The first `n` components switched on, `n` in `0..=5`.
    pub fn chain(n: usize) -> Self {
        Self {
            enable_uac_fine: n >= 1,
            enable_reg: n >= 2,
            enable_hierarchy: n >= 3,
            enable_hcl: n >= 4,
            enable_haa: n >= 5,
        }
    }

    pub fn none() -> Self {
        Self::chain(0)
    }

    fn flags(&self) -> [bool; 5] {
        [self.enable_uac_fine, self.enable_reg, self.enable_hierarchy, self.enable_hcl, self.enable_haa]
    }

    /// Number of enabled components.
    pub fn depth(&self) -> usize {
        self.flags().iter().filter(|f| **f).count()
    }

    pub fn is_bypass(&self) -> bool {
        self.depth() == 0
    }

    pub fn label(&self) -> &'static str {
        ["backbone", "+uac_fine", "+reg", "+hierarchy", "+hcl", "+haa"][self.depth()]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.flags();
        if f.windows(2).any(|w| w[1] && !w[0]) {
            return Err(Error::Config(
                "ablation flags must be enabled in order: uac_fine, reg, hierarchy, hcl, haa".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            ablation: Components::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Usage(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative data path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data.path.is_relative() {
            if let Some(dir) = path.parent() {
                let candidate = dir.join(&cfg.data.path);
                if candidate.exists() {
                    cfg.data.path = candidate;
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn hierarchy(&self) -> Result<HierarchySpec> {
        HierarchySpec::new(self.model.classes.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.lookback == 0 || d.horizon == 0 {
            return Err(Error::Config("lookback and horizon must be at least 1".into()));
        }
        if d.split.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {:?} must be positive and sum to 1", d.split)));
        }
        let m = &self.model;
        if m.hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        if m.backbone == BackboneKind::Dlinear && m.kernel % 2 == 0 {
            return Err(Error::Config(format!("moving-average kernel must be odd, got {}", m.kernel)));
        }
        let h = self.hierarchy()?;
        let l = &self.loss;
        for (name, v) in [
            ("lambda_ua", l.lambda_ua),
            ("lambda_kl", l.lambda_kl),
            ("alpha_reg", l.alpha_reg),
            ("beta", l.beta),
            ("gamma", l.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        let t = &self.train;
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", t.lr)));
        }
        if t.batch_size == 0 || t.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        self.ablation.validate()?;
        if self.ablation.enable_uac_fine && h.classes(h.levels() - 1) < 2 {
            return Err(Error::Config("the finest level needs at least 2 classes".into()));
        }
        if self.ablation.enable_hierarchy && h.levels() < 2 {
            return Err(Error::Config("hierarchy components need at least two levels".into()));
        }
        Ok(())
    }
}
