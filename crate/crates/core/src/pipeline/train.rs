//! Composite loss, the Adam training loop and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{LossWeights, RunConfig};
use crate::error::{Error, Result};
use crate::hcl::hcl_loss;
use crate::model::{stream_rng, Hcan, HcanOutputs, ModelSpec};
use crate::ndgrad::{adam_step, AdamState, Graph, Tensor, Var};
use crate::params::ParamStore;
use crate::uac::{hierarchy_loss, UacLossTerms, UacWeights};

use super::windows::{WindowBatch, WindowSet};

/// RNG stream for the per-epoch shuffle.
pub const SHUFFLE_STREAM: u64 = 2;

/// Unweighted term values of one loss evaluation, plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub hier: f64,
    pub ua: f64,
    pub kl: f64,
    pub reg: f64,
    pub hcl: f64,
    pub mse: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.hier += other.hier;
        self.ua += other.ua;
        self.kl += other.kl;
        self.reg += other.reg;
        self.hcl += other.hcl;
        self.mse += other.mse;
    }

    fn scaled(mut self, c: f64) -> Self {
        for v in [
            &mut self.total,
            &mut self.hier,
            &mut self.ua,
            &mut self.kl,
            &mut self.reg,
            &mut self.hcl,
            &mut self.mse,
        ] {
            *v *= c;
        }
        self
    }
}

pub fn mse_loss(g: &mut Graph, prediction: Var, target: &Tensor) -> Result<Var> {
    let y = g.constant(target.clone());
    let d = g.sub(prediction, y)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `L_HIER + β·L_HCL + γ·L_MSE`. `kl_weight` is the KL weight in effect for
/// the current epoch.
pub fn total_loss(
    g: &mut Graph,
    model: &Hcan,
    out: &HcanOutputs,
    batch: &WindowBatch,
    weights: &LossWeights,
    kl_weight: f64,
) -> Result<(Var, LossBreakdown)> {
    let mse = mse_loss(g, out.prediction, &batch.y)?;
    let mut br = LossBreakdown { mse: g.scalar(mse), ..Default::default() };
    let mut total = g.scale(mse, weights.gamma);
    if out.levels.is_empty() {
        br.total = g.scalar(total);
        return Ok((total, br));
    }

    let mut terms = Vec::with_capacity(out.levels.len());
    for lv in &out.levels {
        let target = &batch.levels[lv.level];
        let onehot = batch.onehot(lv.level)?;
        let t = UacLossTerms::compute(g, lv.evidence, lv.delta, &target.deltas, &onehot)?;
        br.ua += g.scalar(t.ua);
        br.kl += g.scalar(t.kl);
        br.reg += t.reg.map_or(0.0, |r| g.scalar(r));
        terms.push(t);
    }
    let w = UacWeights { ua: weights.lambda_ua, kl: kl_weight, reg: weights.alpha_reg };
    let hier = hierarchy_loss(g, &terms, w)?;
    br.hier = g.scalar(hier);
    total = g.add(hier, total)?;

    for (coarse, fine, nesting) in model.consistency_pairs() {
        let h = hcl_loss(g, out.levels[coarse].evidence, out.levels[fine].evidence, &nesting)?;
        br.hcl += g.scalar(h);
        let h = g.scale(h, weights.beta);
        total = g.add(total, h)?;
    }
    br.total = g.scalar(total);
    Ok((total, br))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub kl_weight: f64,
    /// Means over the epoch's batches.
    pub train: LossBreakdown,
    pub val: Metrics,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,kl_weight,loss,hier,ua,kl,reg,hcl,mse,val_mse,val_mae";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let t = &self.train;
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.epoch, self.kl_weight, t.total, t.hier, t.ua, t.kl, t.reg, t.hcl, t.mse, self.val.mse, self.val.mae
        )
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Hcan,
    /// Parameters from the epoch with the lowest validation MSE.
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: Metrics,
}

/// Trains on `train`, selecting parameters on `val`.
pub fn train(cfg: &RunConfig, train: &WindowSet, val: &WindowSet) -> Result<Trained> {
    train_with(cfg, train, val, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    cfg: &RunConfig,
    train: &WindowSet,
    val: &WindowSet,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained> {
    cfg.validate()?;
    let spec = ModelSpec::from_config(cfg)?;
    let seed = cfg.train.seed;
    let (model, mut params) = Hcan::new(spec, seed)?;
    let mut adam = AdamState::new(cfg.train.lr, params.tensors());
    let mut shuffle = stream_rng(seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = Vec::new();
    let mut best: Option<(usize, Metrics, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.train.epochs {
        let diverged = |message: String| Error::Training { epoch, message };
        let kl_weight = cfg.loss.kl_at(epoch);
        order.shuffle(&mut shuffle);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch = train.batch(chunk);
            let mut g = Graph::new();
            let p = params.bind(&mut g);
            let step = (|| {
                let out = model.forward(&mut g, &p, &batch.x)?;
                total_loss(&mut g, &model, &out, &batch, &cfg.loss, kl_weight)
            })();
            let (loss, br) = step.map_err(|e| match e {
                Error::Numeric(m) | Error::Domain(m) => diverged(m),
                other => other,
            })?;
            if !br.total.is_finite() {
                return Err(diverged(format!("loss became {}", br.total)));
            }
            g.backward(loss)?;
            let grads = p.grads(&g);
            adam_step(params.tensors_mut(), &grads, &mut adam)?;
            sum.accumulate(&br);
            batches += 1;
        }
        let val_metrics = evaluate(&model, &params, val, cfg.train.batch_size)?;
        if !val_metrics.mse.is_finite() {
            return Err(diverged(format!("validation MSE became {}", val_metrics.mse)));
        }
        let entry = EpochLog { epoch, kl_weight, train: sum.scaled(1.0 / batches as f64), val: val_metrics };
        on_epoch(&entry);
        log.push(entry);

        let improved = best.as_ref().map_or(true, |(_, m, _)| val_metrics.mse < m.mse);
        if improved {
            best = Some((epoch, val_metrics, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.train.patience > 0 && stale >= cfg.train.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val, params) = best.expect("at least one epoch");
    Ok(Trained { model, params, log, best_epoch, best_val })
}

/// Visits predictions batch by batch in window order. Each call receives the
/// batch and the `[B, D, T]` prediction.
pub fn predict(
    model: &Hcan,
    params: &ParamStore,
    set: &WindowSet,
    batch_size: usize,
    mut visit: impl FnMut(&WindowBatch, &Tensor),
) -> Result<()> {
    let starts: Vec<usize> = (0..set.len()).collect();
    for chunk in starts.chunks(batch_size.max(1)) {
        let batch = set.batch(chunk);
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let out = model.forward(&mut g, &p, &batch.x)?;
        visit(&batch, g.value(out.prediction));
    }
    Ok(())
}

/// Element-averaged MSE and MAE over every window of `set`.
pub fn evaluate(model: &Hcan, params: &ParamStore, set: &WindowSet, batch_size: usize) -> Result<Metrics> {
    evaluate_with(model, params, set, batch_size, |_, _| {})
}

/// As [`evaluate`], also handing every batch and prediction to `visit`.
pub fn evaluate_with(
    model: &Hcan,
    params: &ParamStore,
    set: &WindowSet,
    batch_size: usize,
    mut visit: impl FnMut(&WindowBatch, &Tensor),
) -> Result<Metrics> {
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    predict(model, params, set, batch_size, |batch, pred| {
        for (p, y) in pred.data().iter().zip(batch.y.data()) {
            se += (p - y) * (p - y);
            ae += (p - y).abs();
        }
        n += pred.len();
        visit(batch, pred);
    })?;
    Ok(Metrics { mse: se / n as f64, mae: ae / n as f64 })
}

/// Metrics of a prediction against its target, element-averaged.
pub fn metrics(prediction: &[f64], target: &[f64]) -> Metrics {
    let n = prediction.len().max(1) as f64;
    let se: f64 = prediction.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum();
    let ae: f64 = prediction.iter().zip(target).map(|(p, y)| (p - y).abs()).sum();
    Metrics { mse: se / n, mae: ae / n }
}
