//! Adam and SGD parameter updates. Weight decay enters both rules as an
//! additive L2 gradient term.

use super::layers::ParamStore;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimKind {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
    /// Plain SGD; when `halving_period > 0` the learning rate halves every
    /// `halving_period` steps.
    Sgd { lr: f64, weight_decay: f64, halving_period: usize },
}

impl OptimKind {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimKind::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    pub fn sgd(lr: f64, weight_decay: f64, halving_period: usize) -> Self {
        OptimKind::Sgd { lr, weight_decay, halving_period }
    }
}

/// Optimizer state: per-parameter moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub kind: OptimKind,
    pub step: usize,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl OptimState {
    pub fn new(kind: OptimKind, params: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> =
            params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect();
        Self { kind, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Learning rate the next `step` call will use.
    pub fn current_lr(&self) -> f64 {
        match self.kind {
            OptimKind::Adam { lr, .. } => lr,
            OptimKind::Sgd { lr, halving_period, .. } => {
                if halving_period == 0 {
                    lr
                } else {
                    lr * 0.5f64.powi((self.step / halving_period) as i32)
                }
            }
        }
    }

    /// Apply one update. `grads` aligns with the parameter store; `None`
    /// entries leave the parameter untouched (weight decay included).
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Array2<f64>>]) {
        assert_eq!(grads.len(), params.len(), "gradient/parameter count mismatch");
        match self.kind {
            OptimKind::Adam { lr, beta1, beta2, eps, weight_decay } => {
                let t = (self.step + 1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (i, grad) in grads.iter().enumerate() {
                    let Some(grad) = grad else { continue };
                    let p = params.at_mut(i);
                    let g = if weight_decay != 0.0 { grad + &(&*p * weight_decay) } else { grad.clone() };
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    *m = &*m * beta1 + &g * (1.0 - beta1);
                    *v = &*v * beta2 + &g.mapv(|x| x * x) * (1.0 - beta2);
                    let mhat = &*m / bc1;
                    let vhat = v.mapv(|x| (x / bc2).sqrt() + eps);
                    *p -= &(mhat / vhat * lr);
                }
            }
            OptimKind::Sgd { weight_decay, .. } => {
                let lr = self.current_lr();
                for (i, grad) in grads.iter().enumerate() {
                    let Some(grad) = grad else { continue };
                    let p = params.at_mut(i);
                    let g = if weight_decay != 0.0 { grad + &(&*p * weight_decay) } else { grad.clone() };
                    *p -= &(g * lr);
                }
            }
        }
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn single_param(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", arr2(&[[value]]));
        p
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params_unchanged() {
        for kind in [OptimKind::adam(0.1, 0.0), OptimKind::sgd(0.1, 0.0, 0)] {
            let mut params = single_param(2.5);
            let mut opt = OptimState::new(kind, &params);
            opt.step(&mut params, &[Some(arr2(&[[0.0]]))]);
            assert_eq!(params.get("x")[[0, 0]], 2.5);
        }
    }

    #[test]
    fn sgd_halves_learning_rate_on_schedule() {
        let params = single_param(0.0);
        let mut opt = OptimState::new(OptimKind::sgd(1e-1, 0.0, 2500), &params);
        assert_eq!(opt.current_lr(), 1e-1);
        opt.step = 2499;
        assert_eq!(opt.current_lr(), 1e-1);
        opt.step = 2500;
        assert_eq!(opt.current_lr(), 5e-2);
        opt.step = 5000;
        assert_eq!(opt.current_lr(), 2.5e-2);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        // Minimize (x - 3)^2 from x = 0.
        let mut params = single_param(0.0);
        let mut opt = OptimState::new(OptimKind::adam(0.05, 0.0), &params);
        for _ in 0..500 {
            let x = params.get("x")[[0, 0]];
            let grad = arr2(&[[2.0 * (x - 3.0)]]);
            opt.step(&mut params, &[Some(grad)]);
        }
        assert!((params.get("x")[[0, 0]] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn weight_decay_acts_as_l2_gradient() {
        let mut params = single_param(2.0);
        let mut opt = OptimState::new(OptimKind::sgd(0.1, 0.5, 0), &params);
        opt.step(&mut params, &[Some(arr2(&[[0.0]]))]);
        // x <- x - lr * wd * x = 2.0 - 0.1 * 0.5 * 2.0
        assert!((params.get("x")[[0, 0]] - 1.9).abs() < 1e-12);
    }
}
