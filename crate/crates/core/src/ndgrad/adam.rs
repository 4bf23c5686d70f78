use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, params)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, epsilon: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Dimension(format!(
            "adam: {} parameters, {} gradients, state for {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::Dimension(format!(
                "adam: parameter {i} has {} values, gradient {}, state {}",
                p.len(),
                g.len(),
                state.first_moment[i].len()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![Tensor::from_vec(vec![1.0, -2.0, 3.5])];
        let mut state = AdamState::new(0.1, &params);
        for _ in 0..3 {
            adam_step(&mut params, &[vec![0.0; 3]], &mut state).unwrap();
        }
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.5]);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(0.1, &params);
        adam_step(&mut params, &[vec![1.0]], &mut state).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
        assert!((params[0].item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn descends_a_convex_quadratic() {
        // f(p) = (p - 3)², gradient 2(p - 3)
        let loss = |p: f64| (p - 3.0) * (p - 3.0);
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(0.5, &params);
        let mut prev = loss(params[0].item());
        for _ in 0..2 {
            let g = 2.0 * (params[0].item() - 3.0);
            adam_step(&mut params, &[vec![g]], &mut state).unwrap();
            let cur = loss(params[0].item());
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::from_vec(vec![1.0, 2.0])];
        let mut state = AdamState::new(0.1, &params);
        let err = adam_step(&mut params, &[vec![1.0]], &mut state).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert_eq!(state.step_count(), 0);
    }
}
