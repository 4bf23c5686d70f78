use super::*;
use crate::config::Components;
use crate::hierlabel::HierarchySpec;
use crate::model::{Hcan, HcanOutputs, LevelOutput, ModelSpec};
use crate::ndgrad::{Graph, Tensor};
use crate::Error;

fn wave(rows: usize, channels: usize) -> Series {
    let values = (0..rows)
        .flat_map(|t| {
            (0..channels).map(move |c| {
                let t = t as f64;
                (t * 0.21 + c as f64).sin() * (1.0 + 0.3 * c as f64) + 0.2 * (t * 0.05).cos() + 0.01 * ((t * 7.3).sin())
            })
        })
        .collect();
    Series::new((0..channels).map(|c| format!("c{c}")).collect(), values).unwrap()
}

fn small_config(n: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.lookback = 16;
    cfg.data.horizon = 4;
    cfg.model.kernel = 5;
    cfg.model.hidden = 8;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 8;
    cfg.train.lr = 5e-3;
    cfg.ablation = Components::chain(n);
    cfg
}

#[test]
fn prepared_splits_have_expected_window_counts() {
    let cfg = small_config(5);
    let p = Prepared::new(&cfg, &wave(200, 3)).unwrap();
    assert_eq!(p.ranges.train, 0..120);
    assert_eq!(p.train.len(), 120 - 16 - 4 + 1);
    assert_eq!(p.val.len(), 40 + 16 - 16 - 4 + 1);
    assert_eq!(p.test.len(), 40 + 16 - 16 - 4 + 1);
    assert_eq!(p.partitions.len(), 3);
}

#[test]
fn test_windows_start_after_validation() {
    let cfg = small_config(0);
    let series = wave(200, 2);
    let p = Prepared::new(&cfg, &series).unwrap();
    let b = p.test.batch(&[0]);
    // first test target is raw row 160
    let expected = (series.values[160 * 2] - p.norm.mean[0]) / p.norm.std[0];
    assert_eq!(b.y.data()[0], expected);
}

fn outputs_for(g: &mut Graph, model: &Hcan, batch: &WindowBatch, perfect: bool) -> HcanOutputs {
    let prediction = if perfect {
        g.constant(batch.y.clone())
    } else {
        g.constant(batch.y.clone().map_add(0.3))
    };
    let aux = model.auxiliary.as_ref().unwrap();
    let mut levels = Vec::new();
    let nest = model.spec.hierarchy.nesting(2);
    for head in &aux.classifiers {
        let t = &batch.levels[head.level];
        let k = head.classes;
        let mut e = Vec::new();
        let mut d = Vec::new();
        for (i, &c) in t.labels.iter().enumerate() {
            for j in 0..k {
                e.push(if j == c { 1e6 } else { 0.0 });
                d.push(if j == c { t.deltas.data()[i] } else { 7.0 });
            }
        }
        if head.level == 1 {
            // coarse evidence equal to the averaged fine evidence
            let fine = &batch.levels[2].labels;
            let nest = &nest;
            e = fine
                .iter()
                .flat_map(|&f| (0..k).map(move |j| if j == nest.parent(f) { 5e5 } else { 0.0 }))
                .collect();
        }
        let mut shape = t.deltas.shape().to_vec();
        shape.push(k);
        levels.push(LevelOutput {
            level: head.level,
            classes: k,
            evidence: g.constant(Tensor::new(shape.clone(), e).unwrap()),
            delta: Some(g.constant(Tensor::new(shape, d).unwrap())),
        });
    }
    HcanOutputs { prediction, feature: prediction, levels, attention: None }
}

trait MapAdd {
    fn map_add(self, c: f64) -> Tensor;
}

impl MapAdd for Tensor {
    fn map_add(self, c: f64) -> Tensor {
        let shape = self.shape().to_vec();
        Tensor::new(shape, self.into_data().into_iter().map(|v| v + c).collect()).unwrap()
    }
}

#[test]
fn perfect_outputs_have_zero_mse_reg_hcl() {
    let cfg = small_config(5);
    let p = Prepared::new(&cfg, &wave(200, 3)).unwrap();
    let (model, _) = Hcan::new(ModelSpec::from_config(&cfg).unwrap(), 1).unwrap();
    let batch = p.train.batch(&[0, 5, 9]);
    let mut g = Graph::new();
    let out = outputs_for(&mut g, &model, &batch, true);
    let (_, br) = total_loss(&mut g, &model, &out, &batch, &cfg.loss, 1.0).unwrap();
    assert_eq!(br.mse, 0.0);
    assert_eq!(br.reg, 0.0);
    assert!(br.hcl.abs() < 1e-15, "{}", br.hcl);
    assert!(br.ua < 1e-5);
}

#[test]
fn total_is_weighted_sum_of_terms() {
    let mut cfg = small_config(5);
    cfg.loss.beta = 0.37;
    cfg.loss.gamma = 1.9;
    cfg.loss.alpha_reg = 0.6;
    cfg.loss.lambda_ua = 0.8;
    let p = Prepared::new(&cfg, &wave(200, 3)).unwrap();
    let (model, params) = Hcan::new(ModelSpec::from_config(&cfg).unwrap(), 4).unwrap();
    let batch = p.train.batch(&[1, 2, 30]);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = model.forward(&mut g, &bound, &batch.x).unwrap();
    let (loss, br) = total_loss(&mut g, &model, &out, &batch, &cfg.loss, 0.3).unwrap();
    assert_eq!(g.scalar(loss), br.total);

    // recompute the mean squared error from raw values
    let mse = crate::pipeline::metrics(g.value(out.prediction).data(), batch.y.data()).mse;
    assert!((mse - br.mse).abs() < 1e-12);
    let hier = 0.8 * br.ua + 0.3 * br.kl + 0.6 * br.reg;
    assert!((hier - br.hier).abs() < 1e-12);
    let total = br.hier + 0.37 * br.hcl + 1.9 * br.mse;
    assert!((total - br.total).abs() < 1e-12);

    let mut zeroed = cfg.loss;
    zeroed.beta = 0.0;
    zeroed.gamma = 0.0;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = model.forward(&mut g, &bound, &batch.x).unwrap();
    let (_, br0) = total_loss(&mut g, &model, &out, &batch, &zeroed, 0.3).unwrap();
    assert_eq!(br0.total, br0.hier);
}

#[test]
fn imperfect_prediction_mse() {
    let cfg = small_config(5);
    let p = Prepared::new(&cfg, &wave(200, 3)).unwrap();
    let (model, _) = Hcan::new(ModelSpec::from_config(&cfg).unwrap(), 1).unwrap();
    let batch = p.train.batch(&[3]);
    let mut g = Graph::new();
    let out = outputs_for(&mut g, &model, &batch, false);
    let (_, br) = total_loss(&mut g, &model, &out, &batch, &cfg.loss, 1.0).unwrap();
    assert!((br.mse - 0.09).abs() < 1e-12);
}

#[test]
fn evaluate_metrics_contract() {
    let y = [0.5, -1.0, 2.0];
    assert_eq!(metrics(&y, &y), Metrics { mse: 0.0, mae: 0.0 });
    let shifted: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
    assert_eq!(metrics(&shifted, &y), Metrics { mse: 1.0, mae: 1.0 });
}

#[test]
fn one_epoch_reduces_training_loss() {
    let mut cfg = small_config(5);
    cfg.data.lookback = 8;
    cfg.data.horizon = 2;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    // 20 training windows: 29 train rows, 8 + 2 - 1 = 9 lost
    let series = wave(49, 2);
    let p = Prepared::new(&cfg, &series).unwrap();
    assert_eq!(p.train.len(), 20);
    let all: Vec<usize> = (0..p.train.len()).collect();
    let batch = p.train.batch(&all);
    let loss_of = |model: &Hcan, params: &crate::params::ParamStore| {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let out = model.forward(&mut g, &b, &batch.x).unwrap();
        total_loss(&mut g, model, &out, &batch, &cfg.loss, 0.0).unwrap().1.total
    };
    let (init_model, init_params) = Hcan::new(ModelSpec::from_config(&cfg).unwrap(), cfg.train.seed).unwrap();
    let before = loss_of(&init_model, &init_params);
    let trained = train(&cfg, &p.train, &p.val).unwrap();
    let after = loss_of(&trained.model, &trained.params);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn same_seed_same_result() {
    let cfg = small_config(5);
    let p = Prepared::new(&cfg, &wave(200, 3)).unwrap();
    let a = train(&cfg, &p.train, &p.val).unwrap();
    let b = train(&cfg, &p.train, &p.val).unwrap();
    assert_eq!(a.best_val.mse.to_bits(), b.best_val.mse.to_bits());
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn selected_parameters_are_best_on_validation() {
    let mut cfg = small_config(3);
    cfg.train.epochs = 6;
    cfg.train.patience = 0;
    let p = Prepared::new(&cfg, &wave(200, 3)).unwrap();
    let t = train(&cfg, &p.train, &p.val).unwrap();
    assert_eq!(t.log.len(), 6);
    let last = t.log.last().unwrap().val.mse;
    assert!(t.best_val.mse <= last);
    let again = evaluate(&t.model, &t.params, &p.val, 8).unwrap();
    assert_eq!(again, t.best_val);
    assert_eq!(t.log[t.best_epoch].val, t.best_val);
}

#[test]
fn early_stopping_respects_patience() {
    let mut cfg = small_config(0);
    cfg.train.epochs = 50;
    cfg.train.patience = 1;
    cfg.train.lr = 0.5;
    let p = Prepared::new(&cfg, &wave(200, 2)).unwrap();
    let t = train(&cfg, &p.train, &p.val).unwrap();
    assert!(t.log.len() < 50);
    assert_eq!(t.log.len(), t.best_epoch + 2);
}

#[test]
fn divergence_reports_epoch() {
    let mut cfg = small_config(5);
    cfg.train.lr = 1e200;
    cfg.train.epochs = 5;
    cfg.train.patience = 0;
    let p = Prepared::new(&cfg, &wave(200, 2)).unwrap();
    match train(&cfg, &p.train, &p.val) {
        Err(Error::Training { .. }) => {}
        other => panic!("expected a training error, got {:?}", other.map(|t| t.best_val)),
    }
}

#[test]
fn every_ablation_row_trains() {
    let series = wave(160, 2);
    for n in 0..Components::ROWS {
        let mut cfg = small_config(n);
        cfg.train.epochs = 1;
        let p = Prepared::new(&cfg, &series).unwrap();
        let t = train(&cfg, &p.train, &p.val).unwrap();
        assert!(t.best_val.mse.is_finite(), "row {n}");
    }
}

#[test]
fn snapshot_round_trip_and_errors() {
    let cfg = small_config(5);
    let p = Prepared::new(&cfg, &wave(200, 3)).unwrap();
    let t = train(&cfg, &p.train, &p.val).unwrap();
    let snap = Snapshot::new(cfg.clone(), p.columns.clone(), p.norm.clone(), p.partitions.clone(), &t);
    let text = snap.to_json();
    let back = Snapshot::from_json(&text).unwrap();
    assert_eq!(back, snap);
    let m = evaluate(&back.model, &back.params, &p.test, 8).unwrap();
    let m0 = evaluate(&t.model, &t.params, &p.test, 8).unwrap();
    assert_eq!(m.mse.to_bits(), m0.mse.to_bits());
    back.check_config(&cfg).unwrap();

    assert!(matches!(Snapshot::from_json(&text[..text.len() / 2]), Err(Error::Format(_))));
    assert!(matches!(Snapshot::from_json("{\"format\":\"other\"}"), Err(Error::Format(_))));
    let v2 = text.replacen("\"version\":1", "\"version\":2", 1);
    assert!(matches!(Snapshot::from_json(&v2), Err(Error::Compatibility(_))));

    let mut other = cfg.clone();
    other.model.hidden = 16;
    assert!(matches!(back.check_config(&other), Err(Error::Compatibility(_))));

    let mut broken = snap.clone();
    broken.params.tensors_mut()[0] = Tensor::zeros(&[1]);
    assert!(Snapshot::from_json(&broken.to_json()).is_err());
}

#[test]
fn refitting_with_stored_state_reproduces_windows() {
    let cfg = small_config(5);
    let series = wave(200, 3);
    let p = Prepared::new(&cfg, &series).unwrap();
    let q = Prepared::with_fitted(&cfg, &series, p.norm.clone(), p.partitions.clone()).unwrap();
    assert_eq!(p.test.batch(&[0, 7]), q.test.batch(&[0, 7]));
    let spec = HierarchySpec::default();
    assert_eq!(q.partitions.len(), spec.levels());
}
