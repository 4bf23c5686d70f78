//! Backbone plus the optional classification auxiliary, assembled according
//! to the enabled components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneKind};
use crate::config::{Components, RunConfig};
use crate::error::{Error, Result};
use crate::haa::{Attention, ClassifierHead, Concat, FeatureHeads};
use crate::hierlabel::{HierarchySpec, NestingMap};
use crate::ndgrad::{Graph, Tensor, Var};
use crate::params::{Bound, ParamStore};

/// RNG stream used for backbone weights.
pub const BACKBONE_STREAM: u64 = 0;
/// RNG stream used for every auxiliary head.
pub const HEAD_STREAM: u64 = 1;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub backbone: BackboneKind,
    pub kernel: usize,
    pub hidden: usize,
    pub hierarchy: HierarchySpec,
    pub components: Components,
}

impl ModelSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            lookback: cfg.data.lookback,
            horizon: cfg.data.horizon,
            backbone: cfg.model.backbone,
            kernel: cfg.model.kernel,
            hidden: cfg.model.hidden,
            hierarchy: cfg.hierarchy()?,
            components: cfg.ablation,
        })
    }

    /// Hierarchy levels that get a classifier head.
    pub fn classified_levels(&self) -> Vec<usize> {
        let c = &self.components;
        let finest = self.hierarchy.levels() - 1;
        if !c.enable_uac_fine {
            Vec::new()
        } else if c.enable_hierarchy {
            (0..=finest).filter(|&l| self.hierarchy.classes(l) > 1).collect()
        } else {
            vec![finest]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fusion {
    Attention(Attention),
    Concat(Concat),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Auxiliary {
    pub features: FeatureHeads,
    /// Ordered coarse to fine.
    pub classifiers: Vec<ClassifierHead>,
    pub fusion: Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hcan {
    pub spec: ModelSpec,
    pub backbone: Backbone,
    pub auxiliary: Option<Auxiliary>,
}

#[derive(Debug, Clone, Copy)]
pub struct LevelOutput {
    pub level: usize,
    pub classes: usize,
    /// `[B, D, T, K]`, non-negative.
    pub evidence: Var,
    pub delta: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct HcanOutputs {
    /// `[B, D, T]`
    pub prediction: Var,
    /// Backbone feature, `[B, D, T]`.
    pub feature: Var,
    pub levels: Vec<LevelOutput>,
    pub attention: Option<Var>,
}

impl HcanOutputs {
    /// Forecast of one sample laid out `T × D`.
    pub fn prediction_td(&self, g: &Graph, sample: usize) -> Tensor {
        to_time_major(g.value(self.prediction), sample)
    }

    /// Evidence of one sample at classified level `index`, laid out `T × D × K`.
    pub fn evidence_tdk(&self, g: &Graph, index: usize, sample: usize) -> Tensor {
        let e = g.value(self.levels[index].evidence);
        let (d, t, k) = (e.shape()[1], e.shape()[2], e.shape()[3]);
        let base = sample * d * t * k;
        let mut out = Vec::with_capacity(t * d * k);
        for ti in 0..t {
            for di in 0..d {
                let o = base + (di * t + ti) * k;
                out.extend_from_slice(&e.data()[o..o + k]);
            }
        }
        Tensor::new(vec![t, d, k], out).expect("sized")
    }
}

/// `[B, D, T]` sample to `T × D`.
pub fn to_time_major(x: &Tensor, sample: usize) -> Tensor {
    let (d, t) = (x.shape()[1], x.shape()[2]);
    let s = &x.data()[sample * d * t..(sample + 1) * d * t];
    let data = (0..t).flat_map(|ti| (0..d).map(move |di| s[di * t + ti])).collect();
    Tensor::new(vec![t, d], data).expect("sized")
}

impl Hcan {
    /// Builds the model and its freshly initialized parameters.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<(Self, ParamStore)> {
        spec.components.validate()?;
        let mut store = ParamStore::new();
        let mut rng = stream_rng(seed, BACKBONE_STREAM);
        let backbone = Backbone::new(spec.backbone, spec.lookback, spec.horizon, spec.kernel, &mut store, &mut rng)?;
        let auxiliary = if spec.components.is_bypass() {
            None
        } else {
            let mut rng = stream_rng(seed, HEAD_STREAM);
            let c = spec.components;
            let (t, m) = (spec.horizon, spec.hidden);
            let features = FeatureHeads::new(&mut store, t, m, c.enable_hierarchy, &mut rng);
            let classifiers = spec
                .classified_levels()
                .into_iter()
                .map(|l| ClassifierHead::new(&mut store, l, spec.hierarchy.classes(l), t, m, c.enable_reg, &mut rng))
                .collect();
            let fusion = if c.enable_haa {
                Fusion::Attention(Attention::new(&mut store, t, m, &mut rng))
            } else {
                Fusion::Concat(Concat::new(&mut store, t, m, c.enable_hierarchy, &mut rng))
            };
            Some(Auxiliary { features, classifiers, fusion })
        };
        Ok((Self { spec, backbone, auxiliary }, store))
    }

    /// Adjacent classified level pairs `(coarse index, fine index, nesting)`
    /// compared by the consistency loss.
    pub fn consistency_pairs(&self) -> Vec<(usize, usize, NestingMap)> {
        let Some(aux) = &self.auxiliary else { return Vec::new() };
        if !self.spec.components.enable_hcl {
            return Vec::new();
        }
        aux.classifiers
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].level == w[0].level + 1)
            .map(|(i, w)| (i, i + 1, self.spec.hierarchy.nesting(w[1].level)))
            .collect()
    }

    /// `x: [B, D, L]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: &Tensor) -> Result<HcanOutputs> {
        let feature = self.backbone.forward(g, p, x)?;
        let Some(aux) = &self.auxiliary else {
            return Ok(HcanOutputs { prediction: feature, feature, levels: Vec::new(), attention: None });
        };
        let feats = aux.features.forward(g, p, feature)?;
        let finest = self.spec.hierarchy.levels() - 1;
        let mut levels = Vec::with_capacity(aux.classifiers.len());
        for head in &aux.classifiers {
            let source = if head.level == finest {
                feats.fine
            } else {
                feats
                    .coarse
                    .ok_or_else(|| Error::Config("coarse classifier without a coarse feature head".into()))?
            };
            let (evidence, delta) = head.forward(g, p, source)?;
            levels.push(LevelOutput { level: head.level, classes: head.classes, evidence, delta });
        }
        let (prediction, attention) = match &aux.fusion {
            Fusion::Attention(a) => {
                let (y, m) = a.forward(g, p, feature, &feats)?;
                (y, Some(m))
            }
            Fusion::Concat(c) => (c.forward(g, p, feature, &feats)?, None),
        };
        Ok(HcanOutputs { prediction, feature, levels, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rng, uniform};

    fn spec(n: usize) -> ModelSpec {
        ModelSpec {
            lookback: 12,
            horizon: 4,
            backbone: BackboneKind::Dlinear,
            kernel: 5,
            hidden: 6,
            hierarchy: HierarchySpec::default(),
            components: Components::chain(n),
        }
    }

    #[test]
    fn bypass_has_only_backbone_parameters() {
        let (m, store) = Hcan::new(spec(0), 3).unwrap();
        assert!(m.auxiliary.is_none());
        assert_eq!(store.count(), m.backbone.parameter_count());
    }

    #[test]
    fn backbone_weights_do_not_depend_on_components() {
        let (_, full) = Hcan::new(spec(5), 3).unwrap();
        let (_, bare) = Hcan::new(spec(0), 3).unwrap();
        for i in 0..bare.len() {
            assert_eq!(bare.tensors()[i], full.tensors()[i]);
        }
    }

    #[test]
    fn chain_rows_build_expected_heads() {
        let expect = [(0, false), (1, false), (1, false), (2, false), (2, true), (2, true)];
        for (n, (classifiers, hcl)) in expect.into_iter().enumerate() {
            let (m, _) = Hcan::new(spec(n), 1).unwrap();
            let count = m.auxiliary.as_ref().map_or(0, |a| a.classifiers.len());
            assert_eq!(count, classifiers, "row {n}");
            assert_eq!(!m.consistency_pairs().is_empty(), hcl, "row {n}");
        }
    }

    #[test]
    fn output_shapes_and_layouts() {
        let (m, store) = Hcan::new(spec(5), 2).unwrap();
        let x = uniform(&mut rng(4), &[3, 7, 12], -1.0, 1.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let out = m.forward(&mut g, &p, &x).unwrap();
        assert_eq!(g.shape(out.prediction), &[3, 7, 4]);
        assert_eq!(out.levels.len(), 2);
        assert_eq!(g.shape(out.levels[1].evidence), &[3, 7, 4, 4]);
        assert_eq!(g.shape(out.attention.unwrap()), &[3, 7, 7]);

        let td = out.prediction_td(&g, 1);
        assert_eq!(td.shape(), &[4, 7]);
        assert_eq!(td.at(&[2, 5]), g.value(out.prediction).at(&[1, 5, 2]));
        let e = out.evidence_tdk(&g, 1, 2);
        assert_eq!(e.shape(), &[4, 7, 4]);
        assert_eq!(e.at(&[3, 6, 1]), g.value(out.levels[1].evidence).at(&[2, 6, 3, 1]));
    }

    #[test]
    fn bypass_prediction_is_backbone_feature() {
        let (m, store) = Hcan::new(spec(0), 5).unwrap();
        let x = uniform(&mut rng(6), &[2, 3, 12], -1.0, 1.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let out = m.forward(&mut g, &p, &x).unwrap();
        let mut g2 = Graph::new();
        let p2 = store.bind(&mut g2);
        let f = m.backbone.forward(&mut g2, &p2, &x).unwrap();
        assert_eq!(g.value(out.prediction), g2.value(f));
    }
}
