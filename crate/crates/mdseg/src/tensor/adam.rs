//! Adam optimizer with bias correction.

use super::{Tensor, TensorError};

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// State sized for `params`, with the usual (0.9, 0.999, 1e-8) defaults.
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One bias-corrected update. Gradients are read from each parameter's
    /// accumulated grad; a missing grad counts as zero.
    pub fn step(&mut self, params: &[Tensor]) -> Result<(), TensorError> {
        for (index, p) in params.iter().enumerate() {
            if p.len() != self.first_moment[index].len() {
                return Err(TensorError::OptimizerShapeMismatch {
                    index,
                    param_len: p.len(),
                    state_len: self.first_moment[index].len(),
                });
            }
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (index, p) in params.iter().enumerate() {
            let grad = p.grad();
            let m = &mut self.first_moment[index];
            let v = &mut self.second_moment[index];
            let mut vals = p.values();
            for i in 0..vals.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                vals[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps_opt);
            }
            p.set_values(&vals)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use crate::tensor::ops::{mul, sum_all};

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap().requires_grad();
        let mut state = AdamState::new(&[p.clone()], 0.1);
        state.step(&[p.clone()]).unwrap();
        assert_eq!(p.values(), vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // g = +1 everywhere, lr = 0.1: bias-corrected first step is -lr/(1+eps)
        let p = Tensor::from_vec(&[4], vec![0.0; 4]).unwrap().requires_grad();
        p.accumulate_grad(&[1.0; 4]);
        let mut state = AdamState::new(&[p.clone()], 0.1);
        state.step(&[p.clone()]).unwrap();
        for v in p.values() {
            assert!((v - (-0.1)).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        // minimize sum(x^2) with small lr; 100 steps stay monotone
        let p = Tensor::from_vec(&[2], vec![1.0, -1.5]).unwrap().requires_grad();
        let mut state = AdamState::new(&[p.clone()], 1e-3);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            p.zero_grad();
            let loss = sum_all(&mul(&p, &p).unwrap());
            let value = loss.item();
            assert!(value < last, "loss must decrease: {value} !< {last}");
            last = value;
            backward(&loss).unwrap();
            state.step(&[p.clone()]).unwrap();
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Tensor::from_vec(&[2], vec![0.0; 2]).unwrap().requires_grad();
        let q = Tensor::from_vec(&[3], vec![0.0; 3]).unwrap().requires_grad();
        let mut state = AdamState::new(&[p], 0.1);
        let err = state.step(&[q]).unwrap_err();
        assert!(matches!(err, TensorError::OptimizerShapeMismatch { .. }));
    }
}
