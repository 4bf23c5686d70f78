//! Browser bindings for three interactive views: interval partitions of a
//! value series, Dirichlet statistics of an evidence vector, and the
//! consistency loss between a coarse and a fine evidence vector.
//!
//! Every export returns a JSON string; the plain functions behind them are
//! usable (and tested) natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hcan::hcl::{convert_fine_to_coarse, hcl_loss};
use hcan::hierlabel::{HierarchySpec, NestingMap};
use hcan::ndgrad::{Graph, Tensor};
use hcan::uac::{dirichlet_stats, kl_to_uniform, ua_loss, OneHot};

#[derive(Debug, Serialize)]
pub struct LevelView {
    pub level: usize,
    pub classes: usize,
    pub boundaries: Vec<f64>,
    pub histogram: Vec<usize>,
    /// Per input value: class index and offset from the interval's left boundary.
    pub labels: Vec<(usize, f64)>,
}

/// Fits every hierarchy level on `values` and labels each value.
pub fn partition_view(values: &[f64], classes: &[usize]) -> hcan::Result<Vec<LevelView>> {
    let spec = HierarchySpec::new(classes.to_vec())?;
    let parts = spec.fit(&[values.to_vec()])?;
    parts
        .iter()
        .map(|p| {
            Ok(LevelView {
                level: p.level,
                classes: p.classes(),
                boundaries: p.boundaries(0).to_vec(),
                histogram: p.histogram(0, values)?,
                labels: values.iter().map(|&v| p.classify(0, v)).collect::<hcan::Result<_>>()?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct EvidenceView {
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub belief: Vec<f64>,
    pub uncertainty: f64,
    pub probability: Vec<f64>,
    pub ua_loss: f64,
    pub kl: f64,
}

/// Dirichlet statistics and both loss terms for one evidence vector.
pub fn evidence_view(evidence: &[f64], true_class: usize) -> hcan::Result<EvidenceView> {
    let k = evidence.len();
    let e = Tensor::new(vec![1, k], evidence.to_vec())?;
    let stats = dirichlet_stats(&e)?;
    let onehot = OneHot::from_labels(&[1], &[true_class], k)?;
    let mut g = Graph::new();
    let ev = g.constant(e);
    let alpha = g.constant(stats.alpha.clone());
    let ua = ua_loss(&mut g, ev, &onehot)?;
    let kl = kl_to_uniform(&mut g, alpha, &onehot)?;
    Ok(EvidenceView {
        alpha: stats.alpha.data().to_vec(),
        strength: stats.strength.data()[0],
        belief: stats.belief.data().to_vec(),
        uncertainty: stats.uncertainty.data()[0],
        probability: stats.probability.data().to_vec(),
        ua_loss: g.scalar(ua),
        kl: g.scalar(kl),
    })
}

#[derive(Debug, Serialize)]
pub struct ConsistencyView {
    /// Fine evidence averaged within each coarse group.
    pub converted: Vec<f64>,
    pub loss: f64,
}

/// Consistency loss between coarse and fine evidence, grouping fine classes
/// into equal contiguous blocks.
pub fn consistency_view(coarse: &[f64], fine: &[f64]) -> hcan::Result<ConsistencyView> {
    let (kc, kf) = (coarse.len(), fine.len());
    if kc == 0 || kf % kc != 0 || kf <= kc {
        return Err(hcan::Error::Config(format!(
            "{kf} fine classes do not split evenly into {kc} coarse classes"
        )));
    }
    let nesting = NestingMap::new((0..kf).map(|f| f / (kf / kc)).collect(), kc)?;
    let mut g = Graph::new();
    let c = g.constant(Tensor::new(vec![1, kc], coarse.to_vec())?);
    let f = g.constant(Tensor::new(vec![1, kf], fine.to_vec())?);
    let converted = convert_fine_to_coarse(&mut g, f, &nesting)?;
    let loss = hcl_loss(&mut g, c, f, &nesting)?;
    Ok(ConsistencyView { converted: g.value(converted).data().to_vec(), loss: g.scalar(loss) })
}

fn to_js<T: Serialize>(r: hcan::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = explorePartition)]
pub fn explore_partition(values: Vec<f64>, classes: Vec<u32>) -> Result<String, JsError> {
    let classes: Vec<usize> = classes.into_iter().map(|c| c as usize).collect();
    to_js(partition_view(&values, &classes))
}

#[wasm_bindgen(js_name = exploreEvidence)]
pub fn explore_evidence(evidence: Vec<f64>, true_class: u32) -> Result<String, JsError> {
    to_js(evidence_view(&evidence, true_class as usize))
}

#[wasm_bindgen(js_name = exploreConsistency)]
pub fn explore_consistency(coarse: Vec<f64>, fine: Vec<f64>) -> Result<String, JsError> {
    to_js(consistency_view(&coarse, &fine))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_levels_nest() {
        let values: Vec<f64> = (0..40).map(|i| ((i * 7) % 40) as f64).collect();
        let view = partition_view(&values, &[1, 2, 4]).unwrap();
        assert_eq!(view.len(), 3);
        assert_eq!(view[0].boundaries, vec![0.0, 39.0]);
        // boundaries at sorted indices 0, 9, 19, 29, 39; the last class is closed
        assert_eq!(view[2].histogram, vec![9, 10, 10, 11]);
        for (c, f) in view[1].labels.iter().zip(&view[2].labels) {
            assert_eq!(c.0, f.0 / 2);
        }
    }

    #[test]
    fn evidence_matches_closed_form() {
        let v = evidence_view(&[9.0, 0.0], 0).unwrap();
        assert_eq!(v.strength, 11.0);
        assert_eq!(v.uncertainty, 2.0 / 11.0);
        assert_eq!(v.probability, vec![10.0 / 11.0, 1.0 / 11.0]);
        assert!(v.ua_loss > 0.0);
        // the only non-target evidence is zero, so the adjusted Dirichlet is uniform
        assert!(v.kl.abs() < 1e-12);
        assert!(evidence_view(&[1.0, 2.0], 2).is_err());
        assert!(evidence_view(&[-1.0, 2.0], 0).is_err());
    }

    #[test]
    fn consistency_of_matching_levels_is_zero() {
        let v = consistency_view(&[1.0, 3.0], &[0.5, 1.5, 2.0, 4.0]).unwrap();
        assert_eq!(v.converted, vec![1.0, 3.0]);
        assert!(v.loss.abs() < 1e-15);
        assert!(consistency_view(&[3.0, 1.0], &[0.5, 1.5, 2.0, 4.0]).unwrap().loss > 0.0);
        assert!(consistency_view(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }
}
