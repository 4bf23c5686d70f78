//! Channel-shared linear backbones mapping a lookback window to the feature
//! `F` (one length-`T` row per channel).
//!
//! Inputs are laid out `[B, D, L]` and features come out `[B, D, T]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor, Var};
use crate::params::{Bound, Linear, ParamStore};

pub const DEFAULT_KERNEL: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Linear,
    Dlinear,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "dlinear" => Ok(Self::Dlinear),
            other => Err(Error::Config(format!("unknown backbone {other:?} (expected \"linear\" or \"dlinear\")"))),
        }
    }
}

/// Centered moving average with the ends replicated `(kernel - 1) / 2` times.
pub fn moving_average(series: &[f64], kernel: usize) -> Result<Vec<f64>> {
    check_kernel(kernel, series.len())?;
    let half = (kernel - 1) / 2;
    let n = series.len() as isize;
    let at = |i: isize| series[i.clamp(0, n - 1) as usize];
    Ok((0..n)
        .map(|t| {
            let sum: f64 = (t - half as isize..=t + half as isize).map(at).sum();
            sum / kernel as f64
        })
        .collect())
}

fn check_kernel(kernel: usize, len: usize) -> Result<()> {
    if kernel % 2 == 0 {
        return Err(Error::Config(format!("moving-average kernel must be odd, got {kernel}")));
    }
    if len == 0 || kernel > 2 * len + 1 {
        return Err(Error::Config(format!(
            "moving-average kernel {kernel} too large for a series of length {len}"
        )));
    }
    Ok(())
}

/// Splits every row of `x` (last axis is time) into `(trend, seasonal)`.
pub fn decompose(x: &Tensor, kernel: usize) -> Result<(Tensor, Tensor)> {
    let len = x.last_dim();
    check_kernel(kernel, len)?;
    let mut trend = Vec::with_capacity(x.len());
    for row in x.data().chunks(len) {
        trend.extend(moving_average(row, kernel)?);
    }
    let seasonal = x.data().iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok((Tensor::new(x.shape().to_vec(), trend)?, Tensor::new(x.shape().to_vec(), seasonal)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Backbone {
    Linear {
        map: Linear,
    },
    Dlinear {
        kernel: usize,
        seasonal: Linear,
        trend: Linear,
    },
}

impl Backbone {
    pub fn new(
        kind: BackboneKind,
        lookback: usize,
        horizon: usize,
        kernel: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::Config("lookback and horizon must be positive".into()));
        }
        Ok(match kind {
            BackboneKind::Linear => Self::Linear {
                map: Linear::new(store, "backbone.linear", lookback, horizon, rng),
            },
            BackboneKind::Dlinear => {
                check_kernel(kernel, lookback)?;
                Self::Dlinear {
                    kernel,
                    seasonal: Linear::new(store, "backbone.seasonal", lookback, horizon, rng),
                    trend: Linear::new(store, "backbone.trend", lookback, horizon, rng),
                }
            }
        })
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Self::Linear { .. } => BackboneKind::Linear,
            Self::Dlinear { .. } => BackboneKind::Dlinear,
        }
    }

    pub fn lookback(&self) -> usize {
        match self {
            Self::Linear { map } => map.inputs,
            Self::Dlinear { seasonal, .. } => seasonal.inputs,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Self::Linear { map } => map.outputs,
            Self::Dlinear { seasonal, .. } => seasonal.outputs,
        }
    }

    /// Analytic parameter count.
    pub fn parameter_count(&self) -> usize {
        let (l, t) = (self.lookback(), self.horizon());
        match self {
            Self::Linear { .. } => l * t + t,
            Self::Dlinear { .. } => 2 * l * t + 2 * t,
        }
    }

    /// `x: [B, D, L]` to `F: [B, D, T]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: &Tensor) -> Result<Var> {
        if x.rank() != 3 || x.last_dim() != self.lookback() {
            return Err(Error::Dimension(format!(
                "backbone expects [B, D, {}], got {:?}",
                self.lookback(),
                x.shape()
            )));
        }
        match self {
            Self::Linear { map } => {
                let xv = g.constant(x.clone());
                map.forward(g, p, xv)
            }
            Self::Dlinear { kernel, seasonal, trend } => {
                let (tr, se) = decompose(x, *kernel)?;
                let se = g.constant(se);
                let tr = g.constant(tr);
                let a = seasonal.forward(g, p, se)?;
                let b = trend.forward(g, p, tr)?;
                g.add(a, b)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::testutil::{grad_check, rng, uniform};

    #[test]
    fn constant_series_is_pure_trend() {
        let x = Tensor::new(vec![1, 1, 10], vec![3.25; 10]).unwrap();
        let (t, s) = decompose(&x, 5).unwrap();
        assert!(t.data().iter().all(|v| *v == 3.25));
        assert!(s.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ramp_has_no_interior_seasonality() {
        let ramp: Vec<f64> = (0..40).map(|i| 0.5 * f64::from(i) - 3.0).collect();
        let trend = moving_average(&ramp, 25).unwrap();
        for i in 12..28 {
            assert!((ramp[i] - trend[i]).abs() < 1e-12, "t={i}");
        }
        // replication padding bends the trend near the ends
        assert!((ramp[0] - trend[0]).abs() > 1.0);
    }

    #[test]
    fn moving_average_by_hand() {
        // padded: 1 1 2 4 4 → windows of 3
        let m = moving_average(&[1.0, 2.0, 4.0], 3).unwrap();
        assert_eq!(m, vec![4.0 / 3.0, 7.0 / 3.0, 10.0 / 3.0]);
    }

    #[test]
    fn kernel_validation() {
        assert!(matches!(moving_average(&[1.0; 5], 4), Err(Error::Config(_))));
        assert!(matches!(moving_average(&[1.0; 5], 13), Err(Error::Config(_))));
        assert!(moving_average(&[1.0; 5], 11).is_ok());
        let mut store = ParamStore::new();
        let e = Backbone::new(BackboneKind::Dlinear, 5, 2, 13, &mut store, &mut rng(0));
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn unknown_kind_names_value() {
        let e = "transformer".parse::<BackboneKind>().unwrap_err();
        assert!(e.to_string().contains("transformer"));
        assert_eq!("dlinear".parse::<BackboneKind>().unwrap(), BackboneKind::Dlinear);
    }

    #[test]
    fn parameter_counts() {
        for (kind, l, t) in [(BackboneKind::Dlinear, 336, 96), (BackboneKind::Linear, 12, 5), (BackboneKind::Dlinear, 7, 3)] {
            let mut store = ParamStore::new();
            let b = Backbone::new(kind, l, t, DEFAULT_KERNEL.min(2 * l - 1), &mut store, &mut rng(1)).unwrap();
            assert_eq!(store.count(), b.parameter_count());
        }
        let mut store = ParamStore::new();
        Backbone::new(BackboneKind::Dlinear, 336, 96, 25, &mut store, &mut rng(1)).unwrap();
        assert_eq!(store.count(), 2 * 336 * 96 + 2 * 96);
    }

    #[test]
    fn linear_copies_tail_with_identity_weights() {
        let mut store = ParamStore::new();
        let b = Backbone::new(BackboneKind::Linear, 4, 4, 1, &mut store, &mut rng(2)).unwrap();
        let Backbone::Linear { map } = b.clone() else { unreachable!() };
        *store.get_mut(map.weight) = Tensor::identity(4);
        *store.get_mut(map.bias.unwrap()) = Tensor::zeros(&[4]);
        let x = uniform(&mut rng(3), &[2, 3, 4], -1.0, 1.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let f = b.forward(&mut g, &p, &x).unwrap();
        assert_eq!(g.value(f).data(), x.data());

        for t in store.tensors_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let f = b.forward(&mut g, &p, &x).unwrap();
        assert!(g.value(f).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let build = || {
            let mut store = ParamStore::new();
            Backbone::new(BackboneKind::Dlinear, 20, 6, 5, &mut store, &mut rng(9)).unwrap();
            store
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn gradients_wrt_weights() {
        let x = uniform(&mut rng(4), &[2, 3, 9], -2.0, 2.0);
        let target = uniform(&mut rng(5), &[2, 3, 4], -1.0, 1.0);
        for kind in [BackboneKind::Linear, BackboneKind::Dlinear] {
            let mut store = ParamStore::new();
            let b = Backbone::new(kind, 9, 4, 5, &mut store, &mut rng(6)).unwrap();
            for which in 0..store.len() {
                let err = grad_check(
                    |g, w| {
                        // the checked tensor replaces parameter `which`
                        let p = store.bind(g).with(which, w);
                        let f = b.forward(g, &p, &x)?;
                        let y = g.constant(target.clone());
                        let d = g.sub(f, y)?;
                        let sq = g.square(d);
                        Ok(g.mean(sq))
                    },
                    &store.tensors()[which].clone(),
                );
                assert!(err < 1e-6, "{kind:?} param {which}: {err}");
            }
        }
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs(v in prop::collection::vec(-1e3f64..1e3, 1..60), k in 0usize..6) {
            let kernel = (2 * k + 1).min(2 * v.len() + 1);
            let x = Tensor::new(vec![1, 1, v.len()], v).unwrap();
            let (t, s) = decompose(&x, kernel).unwrap();
            for ((xv, tv), sv) in x.data().iter().zip(t.data()).zip(s.data()) {
                let r = tv + sv;
                // one rounding of the subtraction, exact in the Sterbenz range
                let (a, b) = (xv.abs(), tv.abs());
                if xv.signum() == tv.signum() && b / 2.0 <= a && a <= 2.0 * b {
                    prop_assert_eq!(r, *xv);
                } else {
                    prop_assert!((r - xv).abs() <= f64::EPSILON * (xv.abs() + tv.abs()));
                }
            }
        }
    }
}
