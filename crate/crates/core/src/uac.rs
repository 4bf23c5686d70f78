//! Evidential classification on a Dirichlet: statistics, the
//! uncertainty-weighted loss, the KL regularizer and the relative regression
//! loss at the true interval.
//!
//! Evidence tensors have shape `[..., K]`; every loss is averaged over all
//! leading positions.

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor, Var};

/// Plain-value Dirichlet summary of an evidence tensor `[..., K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletStats {
    pub classes: usize,
    pub alpha: Tensor,
    /// `[...]`
    pub strength: Tensor,
    pub belief: Tensor,
    /// `[...]`
    pub uncertainty: Tensor,
    pub probability: Tensor,
}

pub fn dirichlet_stats(evidence: &Tensor) -> Result<DirichletStats> {
    if evidence.rank() == 0 || evidence.last_dim() == 0 {
        return Err(Error::Dimension("evidence needs a non-empty class axis".into()));
    }
    if let Some(bad) = evidence.data().iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(Error::Domain(format!("evidence must be finite and non-negative, got {bad}")));
    }
    let k = evidence.last_dim();
    let lead: Vec<usize> = evidence.shape()[..evidence.rank() - 1].to_vec();
    let n = evidence.len() / k;
    let mut alpha = Vec::with_capacity(evidence.len());
    let mut belief = Vec::with_capacity(evidence.len());
    let mut probability = Vec::with_capacity(evidence.len());
    let mut strength = Vec::with_capacity(n);
    let mut uncertainty = Vec::with_capacity(n);
    for row in evidence.data().chunks(k) {
        let s: f64 = row.iter().map(|e| e + 1.0).sum();
        strength.push(s);
        uncertainty.push(k as f64 / s);
        for e in row {
            alpha.push(e + 1.0);
            belief.push(e / s);
            probability.push((e + 1.0) / s);
        }
    }
    let full = evidence.shape().to_vec();
    Ok(DirichletStats {
        classes: k,
        alpha: Tensor::new(full.clone(), alpha)?,
        strength: Tensor::new(lead.clone(), strength)?,
        belief: Tensor::new(full.clone(), belief)?,
        uncertainty: Tensor::new(lead, uncertainty)?,
        probability: Tensor::new(full, probability)?,
    })
}

/// Validated one-hot label mask `[..., K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot {
    mask: Tensor,
    complement: Tensor,
}

impl OneHot {
    /// `labels` are row-major over `lead`.
    pub fn from_labels(lead: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        let n: usize = lead.iter().product();
        if labels.len() != n {
            return Err(Error::Dimension(format!("expected {n} labels, got {}", labels.len())));
        }
        if classes == 0 {
            return Err(Error::Label("one-hot needs at least one class".into()));
        }
        let mut data = vec![0.0; n * classes];
        for (i, &c) in labels.iter().enumerate() {
            if c >= classes {
                return Err(Error::Label(format!("label {c} out of range for {classes} classes")));
            }
            data[i * classes + c] = 1.0;
        }
        let mut shape = lead.to_vec();
        shape.push(classes);
        Self::from_tensor(Tensor::new(shape, data)?)
    }

    /// Accepts a tensor with exactly one 1 and zeros elsewhere per position.
    pub fn from_tensor(mask: Tensor) -> Result<Self> {
        if mask.rank() == 0 || mask.last_dim() == 0 {
            return Err(Error::Label("one-hot needs a non-empty class axis".into()));
        }
        for (i, row) in mask.data().chunks(mask.last_dim()).enumerate() {
            let ones = row.iter().filter(|v| **v == 1.0).count();
            let zeros = row.iter().filter(|v| **v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::Label(format!("position {i} is not a one-hot row: {row:?}")));
            }
        }
        let complement = Tensor::new(mask.shape().to_vec(), mask.data().iter().map(|v| 1.0 - v).collect())?;
        Ok(Self { mask, complement })
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn classes(&self) -> usize {
        self.mask.last_dim()
    }

    pub fn labels(&self) -> Vec<usize> {
        let k = self.classes();
        self.mask
            .data()
            .chunks(k)
            .map(|row| row.iter().position(|v| *v == 1.0).expect("validated"))
            .collect()
    }

    fn check(&self, g: &Graph, v: Var, what: &str) -> Result<()> {
        if g.shape(v) != self.mask.shape() {
            return Err(Error::Dimension(format!(
                "{what} has shape {:?}, labels have {:?}",
                g.shape(v),
                self.mask.shape()
            )));
        }
        Ok(())
    }
}

/// Picks the true-class entry per position: `[..., K] -> [...]`.
fn select_true(g: &mut Graph, x: Var, onehot: &OneHot) -> Result<Var> {
    let o = g.constant(onehot.mask.clone());
    let masked = g.mul(x, o)?;
    g.sum_last(masked)
}

/// Mean over positions of `(1 - b_true)(ψ(S) - ψ(α_true))`.
pub fn ua_loss(g: &mut Graph, evidence: Var, onehot: &OneHot) -> Result<Var> {
    onehot.check(g, evidence, "evidence")?;
    let alpha = g.add_scalar(evidence, 1.0);
    let strength = g.sum_last(alpha)?;
    let alpha_true = select_true(g, alpha, onehot)?;
    let evidence_true = select_true(g, evidence, onehot)?;
    let belief_true = g.div(evidence_true, strength)?;
    let neg = g.scale(belief_true, -1.0);
    let weight = g.add_scalar(neg, 1.0);
    let psi_s = g.digamma(strength)?;
    let psi_a = g.digamma(alpha_true)?;
    let gap = g.sub(psi_s, psi_a)?;
    let per = g.mul(weight, gap)?;
    Ok(g.mean(per))
}

/// KL from `Dir(α̃)` to the uniform Dirichlet, where `α̃` replaces the
/// true-class parameter by 1.
pub fn kl_to_uniform(g: &mut Graph, alpha: Var, onehot: &OneHot) -> Result<Var> {
    onehot.check(g, alpha, "alpha")?;
    let k = onehot.classes() as f64;
    let keep = g.constant(onehot.complement.clone());
    let ones = g.constant(onehot.mask.clone());
    let kept = g.mul(alpha, keep)?;
    let tilde = g.add(kept, ones)?;
    let s = g.sum_last(tilde)?;

    let lg_s = g.lgamma(s)?;
    let lg_a = g.lgamma(tilde)?;
    let sum_lg_a = g.sum_last(lg_a)?;
    let psi_a = g.digamma(tilde)?;
    let excess = g.add_scalar(tilde, -1.0);
    let weighted = g.mul(excess, psi_a)?;
    let sum_weighted = g.sum_last(weighted)?;
    let psi_s = g.digamma(s)?;
    let s_excess = g.add_scalar(s, -k);
    let tail = g.mul(s_excess, psi_s)?;

    let lg_k = crate::ndgrad::special::lgamma(k)?;
    let a = g.sub(lg_s, sum_lg_a)?;
    let a = g.add_scalar(a, -lg_k);
    let b = g.sub(sum_weighted, tail)?;
    let per = g.add(a, b)?;
    Ok(g.mean(per))
}

/// Mean squared error of the relative prediction at the true class only.
pub fn relative_regression_loss(g: &mut Graph, delta_pred: Var, delta_true: &Tensor, onehot: &OneHot) -> Result<Var> {
    onehot.check(g, delta_pred, "relative prediction")?;
    let lead = &onehot.mask.shape()[..onehot.mask.rank() - 1];
    if delta_true.shape() != lead {
        return Err(Error::Dimension(format!(
            "relative target has shape {:?}, expected {lead:?}",
            delta_true.shape()
        )));
    }
    let picked = select_true(g, delta_pred, onehot)?;
    let target = g.constant(delta_true.clone());
    let diff = g.sub(picked, target)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// Weights inside one level's classification loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UacWeights {
    pub ua: f64,
    pub kl: f64,
    pub reg: f64,
}

impl Default for UacWeights {
    fn default() -> Self {
        Self { ua: 1.0, kl: 1.0, reg: 1.0 }
    }
}

/// Loss terms of one hierarchy level. `reg` is absent when the relative
/// regression head is disabled.
#[derive(Debug, Clone, Copy)]
pub struct UacLossTerms {
    pub ua: Var,
    pub kl: Var,
    pub reg: Option<Var>,
}

impl UacLossTerms {
    pub fn compute(
        g: &mut Graph,
        evidence: Var,
        delta_pred: Option<Var>,
        delta_true: &Tensor,
        onehot: &OneHot,
    ) -> Result<Self> {
        let ua = ua_loss(g, evidence, onehot)?;
        let alpha = g.add_scalar(evidence, 1.0);
        let kl = kl_to_uniform(g, alpha, onehot)?;
        let reg = match delta_pred {
            Some(d) => Some(relative_regression_loss(g, d, delta_true, onehot)?),
            None => None,
        };
        Ok(Self { ua, kl, reg })
    }
}

/// `Σ_levels λ_UA·L_UA + λ_KL·L_KL + α_reg·L_REG`.
pub fn hierarchy_loss(g: &mut Graph, levels: &[UacLossTerms], w: UacWeights) -> Result<Var> {
    let mut total = g.constant(Tensor::scalar(0.0));
    for t in levels {
        let ua = g.scale(t.ua, w.ua);
        let kl = g.scale(t.kl, w.kl);
        total = g.add(total, ua)?;
        total = g.add(total, kl)?;
        if let Some(r) = t.reg {
            let r = g.scale(r, w.reg);
            total = g.add(total, r)?;
        }
    }
    Ok(total)
}
