//! Consistency between adjacent hierarchy levels: fine evidence is averaged
//! into coarse groups and compared with the coarse head through a symmetric
//! KL on softmax-normalized vectors.

use crate::error::{Error, Result};
use crate::hierlabel::NestingMap;
use crate::ndgrad::{Graph, Tensor, Var};

/// Floor applied inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// `[K_f, K_c]` matrix whose column `g` averages the members of group `g`.
pub fn averaging_matrix(nesting: &NestingMap) -> Result<Tensor> {
    let (kf, kc) = (nesting.fine_classes(), nesting.coarse_classes());
    let mut data = vec![0.0; kf * kc];
    for c in 0..kc {
        if nesting.group_size(c) == 0 {
            return Err(Error::Config(format!("coarse class {c} has no fine members")));
        }
    }
    for f in 0..kf {
        let c = nesting.parent(f);
        data[f * kc + c] = 1.0 / nesting.group_size(c) as f64;
    }
    Tensor::new(vec![kf, kc], data)
}

/// Mean of member fine evidence per coarse class: `[..., K_f] -> [..., K_c]`.
pub fn convert_fine_to_coarse(g: &mut Graph, fine: Var, nesting: &NestingMap) -> Result<Var> {
    let shape = g.shape(fine).to_vec();
    if shape.last() != Some(&nesting.fine_classes()) {
        return Err(Error::Dimension(format!(
            "fine evidence shape {shape:?} does not end in {} classes",
            nesting.fine_classes()
        )));
    }
    let kf = nesting.fine_classes();
    let rows = g.value(fine).len() / kf;
    let m = g.constant(averaging_matrix(nesting)?);
    let flat = g.reshape(fine, &[rows, kf])?;
    let out = g.matmul(flat, m)?;
    let mut out_shape = shape;
    *out_shape.last_mut().expect("non-empty") = nesting.coarse_classes();
    g.reshape(out, &out_shape)
}

/// `½KL(softmax a ‖ softmax b) + ½KL(softmax b ‖ softmax a)`, mean over positions.
///
/// The two KL terms are summed per class as `½(p − q)(ln p − ln q)`, so every
/// summand is non-negative and exchanging the arguments is bitwise neutral.
pub fn symmetric_kl(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Dimension(format!(
            "cannot compare evidence shapes {:?} and {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    let axis = g.value(a).rank() - 1;
    let p = g.softmax(a, axis)?;
    let q = g.softmax(b, axis)?;
    let lp = g.log_clamped(p, LOG_FLOOR);
    let lq = g.log_clamped(q, LOG_FLOOR);
    let dp = g.sub(p, q)?;
    let dl = g.sub(lp, lq)?;
    let w = g.mul(dp, dl)?;
    let per = g.sum_last(w)?;
    let per = g.scale(per, 0.5);
    Ok(g.mean(per))
}

/// Consistency loss between coarse evidence and converted fine evidence.
pub fn hcl_loss(g: &mut Graph, coarse: Var, fine: Var, nesting: &NestingMap) -> Result<Var> {
    let converted = convert_fine_to_coarse(g, fine, nesting)?;
    symmetric_kl(g, coarse, converted)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::hierlabel::HierarchySpec;
    use crate::testutil::{grad_check, rng, uniform};

    fn pair_nesting() -> NestingMap {
        NestingMap::new(vec![0, 0, 1, 1], 2).unwrap()
    }

    fn value(a: &[f64], b: &[f64]) -> f64 {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(a.to_vec()));
        let b = g.constant(Tensor::from_vec(b.to_vec()));
        let l = symmetric_kl(&mut g, a, b).unwrap();
        g.scalar(l)
    }

    #[test]
    fn conversion_examples() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_vec(vec![1.0, 3.0, 2.0, 4.0]));
        let c = convert_fine_to_coarse(&mut g, f, &pair_nesting()).unwrap();
        assert_eq!(g.value(c).data(), &[2.0, 3.0]);

        let f = g.constant(Tensor::full(&[3, 4], 0.7));
        let c = convert_fine_to_coarse(&mut g, f, &pair_nesting()).unwrap();
        assert_eq!(g.shape(c), &[3, 2]);
        assert!(g.value(c).data().iter().all(|v| (v - 0.7).abs() < 1e-15));

        let singleton = NestingMap::new(vec![0, 1, 1], 2).unwrap();
        let f = g.constant(Tensor::from_vec(vec![0.123_456_789, 5.0, 1.0]));
        let c = convert_fine_to_coarse(&mut g, f, &singleton).unwrap();
        assert_eq!(g.value(c).data()[0], 0.123_456_789);
    }

    #[test]
    fn conversion_follows_default_hierarchy() {
        let spec = HierarchySpec::default();
        let n = spec.nesting(spec.levels() - 1);
        assert_eq!(averaging_matrix(&n).unwrap().data(), &[0.5, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(value(&[0.3, -1.0], &[0.3, -1.0]), 0.0);
        assert_eq!(value(&[2.0, 3.0], &[1.0, 3.0]).to_bits(), value(&[1.0, 3.0], &[2.0, 3.0]).to_bits());
        // reference evaluated at 40 significant digits
        assert!((value(&[2.0, 3.0], &[1.0, 3.0]) - 0.074_869_249_673_938_78).abs() < 1e-14);
    }

    #[test]
    fn hcl_loss_matches_manual_composition() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::from_vec(vec![2.0, 3.0]));
        let f = g.constant(Tensor::from_vec(vec![1.0, 1.0, 2.0, 4.0]));
        let l = hcl_loss(&mut g, c, f, &pair_nesting()).unwrap();
        assert_eq!(g.scalar(l), value(&[2.0, 3.0], &[1.0, 3.0]));
    }

    #[test]
    fn gradients_through_both_branches() {
        let mut r = rng(17);
        let n = pair_nesting();
        let coarse = uniform(&mut r, &[3, 2, 2], -2.0, 2.0);
        let fine = uniform(&mut r, &[3, 2, 4], -2.0, 2.0);
        let err = grad_check(|g, c| { let f = g.constant(fine.clone()); hcl_loss(g, c, f, &n) }, &coarse);
        assert!(err < 1e-5, "coarse: {err}");
        let err = grad_check(|g, f| { let c = g.constant(coarse.clone()); hcl_loss(g, c, f, &n) }, &fine);
        assert!(err < 1e-5, "fine: {err}");
    }

    #[test]
    fn mismatched_shapes() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let f = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        assert!(matches!(hcl_loss(&mut g, c, f, &pair_nesting()), Err(Error::Dimension(_))));
        assert!(matches!(convert_fine_to_coarse(&mut g, c, &pair_nesting()), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn symmetric_shift_invariant_non_negative(
            a in prop::collection::vec(-10.0f64..10.0, 2..6),
            seed in any::<u64>(),
            shift in -20.0f64..20.0,
        ) {
            let mut r = rng(seed);
            let b = uniform(&mut r, &[a.len()], -10.0, 10.0).into_data();
            let ab = value(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab.to_bits(), value(&b, &a).to_bits());
            let shifted: Vec<f64> = a.iter().map(|v| v + shift).collect();
            prop_assert!((value(&shifted, &b) - ab).abs() < 1e-9 * (1.0 + ab));
        }
    }
}
