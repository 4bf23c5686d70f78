//! Finite-difference oracle shared by unit tests.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ndgrad::{Graph, Tensor, Var};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;

/// Central differences of a scalar function of one tensor.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), with a floor so two zero vectors compare equal.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Relative error between the graph gradient of `build` at `x` and central
/// differences of its forward value.
pub fn grad_check(build: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) -> f64 {
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let root = build(&mut g, v).unwrap();
    g.backward(root).unwrap();
    let analytic = g.grad_or_zeros(v);
    let numeric = numeric_grad(
        |t| {
            let mut g = Graph::new();
            let v = g.constant(t.clone());
            let r = build(&mut g, v).unwrap();
            g.scalar(r)
        },
        x,
    );
    rel_err(&analytic, &numeric)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
