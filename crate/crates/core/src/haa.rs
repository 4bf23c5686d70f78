//! Feature heads, evidential classifier heads and the channel attention that
//! fuses them into the final forecast.
//!
//! Per-sample tensors are channel-major: the backbone feature is `[B, D, T]`,
//! head features `[B, D, M]`, attention maps `[B, D, D]`, evidence and
//! relative predictions `[B, D, T, K]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Var};
use crate::params::{Bound, Linear, ParamStore};

pub const DEFAULT_HIDDEN: usize = 512;

/// Fine, coarse and temporal projections `T -> M`, shared across channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeads {
    pub fine: Linear,
    pub coarse: Option<Linear>,
    pub temporal: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub fine: Var,
    pub coarse: Option<Var>,
    pub temporal: Var,
}

impl FeatureHeads {
    pub fn new(store: &mut ParamStore, horizon: usize, hidden: usize, coarse: bool, rng: &mut impl Rng) -> Self {
        Self {
            fine: Linear::new(store, "heads.fine", horizon, hidden, rng),
            coarse: coarse.then(|| Linear::new(store, "heads.coarse", horizon, hidden, rng)),
            temporal: Linear::new(store, "heads.temporal", horizon, hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, feature: Var) -> Result<Features> {
        Ok(Features {
            fine: self.fine.forward(g, p, feature)?,
            coarse: match &self.coarse {
                Some(c) => Some(c.forward(g, p, feature)?),
                None => None,
            },
            temporal: self.temporal.forward(g, p, feature)?,
        })
    }
}

/// Evidence (softplus) and optional relative-prediction maps `M -> T·K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub level: usize,
    pub classes: usize,
    pub horizon: usize,
    pub evidence: Linear,
    pub delta: Option<Linear>,
}

impl ClassifierHead {
    pub fn new(
        store: &mut ParamStore,
        level: usize,
        classes: usize,
        horizon: usize,
        hidden: usize,
        with_delta: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let name = format!("classifier{level}");
        Self {
            level,
            classes,
            horizon,
            evidence: Linear::new(store, &format!("{name}.evidence"), hidden, horizon * classes, rng),
            delta: with_delta.then(|| Linear::new(store, &format!("{name}.delta"), hidden, horizon * classes, rng)),
        }
    }

    /// `[B, D, M]` to evidence and relative predictions, both `[B, D, T, K]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, feature: Var) -> Result<(Var, Option<Var>)> {
        let shape = g.shape(feature).to_vec();
        if shape.len() != 3 {
            return Err(Error::Dimension(format!("classifier expects [B, D, M], got {shape:?}")));
        }
        let out = [shape[0], shape[1], self.horizon, self.classes];
        let raw = self.evidence.forward(g, p, feature)?;
        let raw = g.reshape(raw, &out)?;
        let evidence = g.softplus(raw);
        let delta = match &self.delta {
            Some(d) => {
                let v = d.forward(g, p, feature)?;
                Some(g.reshape(v, &out)?)
            }
            None => None,
        };
        Ok((evidence, delta))
    }
}

/// Row-softmax of `fine · coarseᵀ`, `[B, D, D]`.
pub fn attention_map(g: &mut Graph, fine: Var, coarse: Var) -> Result<Var> {
    let ct = g.transpose(coarse)?;
    let logits = g.matmul(fine, ct)?;
    let axis = g.value(logits).rank() - 1;
    g.softmax(logits, axis)
}

/// `Ŷ = W_f(W(A·η) + F) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub project: Linear,
    pub output: Linear,
}

impl Attention {
    pub fn new(store: &mut ParamStore, horizon: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            project: Linear::unbiased(store, "fusion.project", hidden, horizon, rng),
            output: Linear::new(store, "fusion.output", horizon, horizon, rng),
        }
    }

    /// Returns the prediction `[B, D, T]` and the attention map.
    pub fn forward(&self, g: &mut Graph, p: &Bound, feature: Var, features: &Features) -> Result<(Var, Var)> {
        let coarse = features
            .coarse
            .ok_or_else(|| Error::Config("attention fusion needs the coarse feature head".into()))?;
        let a = attention_map(g, features.fine, coarse)?;
        let z = g.matmul(a, features.temporal)?;
        let z = self.project.forward(g, p, z)?;
        let r = g.add(z, feature)?;
        Ok((self.output.forward(g, p, r)?, a))
    }
}

/// Concatenation fusion: `W_f([θ; φ; η]·W + F) + b`, with the concatenated
/// projection written as one map per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concat {
    pub fine: Linear,
    pub coarse: Option<Linear>,
    pub temporal: Linear,
    pub output: Linear,
}

impl Concat {
    pub fn new(store: &mut ParamStore, horizon: usize, hidden: usize, coarse: bool, rng: &mut impl Rng) -> Self {
        Self {
            fine: Linear::unbiased(store, "fusion.fine", hidden, horizon, rng),
            coarse: coarse.then(|| Linear::unbiased(store, "fusion.coarse", hidden, horizon, rng)),
            temporal: Linear::unbiased(store, "fusion.temporal", hidden, horizon, rng),
            output: Linear::new(store, "fusion.output", horizon, horizon, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, feature: Var, features: &Features) -> Result<Var> {
        let mut z = self.fine.forward(g, p, features.fine)?;
        if let (Some(map), Some(c)) = (&self.coarse, features.coarse) {
            let v = map.forward(g, p, c)?;
            z = g.add(z, v)?;
        }
        let t = self.temporal.forward(g, p, features.temporal)?;
        z = g.add(z, t)?;
        let r = g.add(z, feature)?;
        self.output.forward(g, p, r)
    }
}
