//! Adam optimizer with bias correction.

use super::layers::Parameter;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// One bias-corrected Adam update, applied in place; gradients are zeroed
/// afterwards. `step_index` starts at 1.
pub fn adam_step(
    params: &mut [&mut Parameter],
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step_index: usize,
) {
    assert!(step_index >= 1, "adam step_index starts at 1");
    let bc1 = 1.0 - beta1.powi(step_index as i32);
    let bc2 = 1.0 - beta2.powi(step_index as i32);
    for p in params.iter_mut() {
        let g = p.grad.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        let val = p.value.data_mut();
        for i in 0..val.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            val[i] -= lr * mhat / (vhat.sqrt() + eps);
            g[i] = 0.0;
        }
    }
}

/// Stateful wrapper tracking the step index for a training loop.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: usize,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        self.step += 1;
        adam_step(params, self.lr, self.beta1, self.beta2, self.eps, self.step);
    }

    pub fn step_index(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut p = Parameter::new("p", Tensor::full(&[4], 1.5));
        adam_step(&mut [&mut p], 0.1, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, 1);
        assert_eq!(p.value.data(), &[1.5, 1.5, 1.5, 1.5]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With bias correction, a unit gradient at step 1 gives
        // delta = lr * 1 / (1 + eps'), i.e. almost exactly lr.
        let mut p = Parameter::new("p", Tensor::full(&[1], 0.0));
        p.grad = Tensor::full(&[1], 1.0);
        adam_step(&mut [&mut p], 0.01, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, 1);
        let delta = -p.value.data()[0];
        assert!((delta - 0.01).abs() < 1e-6, "delta {delta}");
        // Gradient must be zeroed afterwards.
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn identical_runs_are_deterministic() {
        let run = || {
            let mut p = Parameter::new("p", Tensor::full(&[3], 1.0));
            let mut out = vec![];
            for step in 1..=5 {
                p.grad = Tensor::from_vec(&[3], vec![0.3, -0.2, 0.05]).unwrap();
                adam_step(&mut [&mut p], 0.02, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, step);
                out.extend_from_slice(p.value.data());
            }
            out
        };
        assert_eq!(run(), run());
    }
}
