//! Adaptive-moment gradient ascent/descent over parameter tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction. Moments are kept per parameter tensor in the
/// order parameters are passed to [`Adam::step`]; callers must keep that
/// order stable across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One descent step on every parameter; gradients are consumed (zeroed).
    /// Parameters without a gradient buffer are left untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.m.len() < params.len() {
            self.m.resize(params.len(), Vec::new());
            self.v.resize(params.len(), Vec::new());
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);

        for (idx, p) in params.iter_mut().enumerate() {
            let n = p.numel();
            if p.grad().is_none() {
                continue;
            }
            if self.m[idx].len() != n {
                self.m[idx] = vec![0.0; n];
                self.v[idx] = vec![0.0; n];
            }
            // Pull grads out first so the NaN check can't leave half-updated state.
            if p.grad().unwrap().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    step: self.step,
                });
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let lr = self.lr;
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            {
                let grad = p.grad().unwrap().to_vec();
                let data = p.data_mut();
                for j in 0..n {
                    let g = grad[j];
                    m[j] = b1 * m[j] + (1.0 - b1) * g;
                    v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                    let mh = m[j] / bc1;
                    let vh = v[j] / bc2;
                    data[j] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(params: &mut [&mut Tensor], max_norm: f64) {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            if p.grad().is_some() {
                for g in p.grad_mut() {
                    *g *= scale;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        p.grad_mut();
        let mut opt = Adam::new(1e-3);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0, -1.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // constant gradient g: bias-corrected first step ≈ -lr * sign(g)
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        p.accumulate_grad(&[3.5]);
        let mut opt = Adam::new(1e-3);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] + 1e-3).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        p.accumulate_grad(&[f64::NAN]);
        let mut opt = Adam::new(1e-3);
        assert!(opt.step(&mut [&mut p]).is_err());
    }

    #[test]
    fn converges_on_2d_quadratic() {
        // f(x, y) = (x - 3)² + 2 (y + 1)², minimum at (3, -1)
        let mut p = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            let (x, y) = (p.data()[0], p.data()[1]);
            p.zero_grad();
            p.accumulate_grad(&[2.0 * (x - 3.0), 4.0 * (y + 1.0)]);
            opt.step(&mut [&mut p]).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "x = {}", p.data()[0]);
        assert!((p.data()[1] + 1.0).abs() < 1e-3, "y = {}", p.data()[1]);
    }

    #[test]
    fn clip_rescales_large_gradients() {
        let mut p = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        p.accumulate_grad(&[30.0, 40.0]); // norm 50
        clip_global_norm(&mut [&mut p], 5.0);
        let g = p.grad().unwrap();
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((g[0] - 3.0).abs() < 1e-12);
    }
}
