use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

/// First-order optimizer with per-parameter state.
///
/// SGD with momentum keeps a velocity `v <- momentum * v - lr * g` and applies
/// `p <- p + v`. Adam keeps bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    /// Velocity (SGD) or first moment (Adam).
    first: Vec<f64>,
    /// Second moment (Adam only; empty for SGD).
    second: Vec<f64>,
}

impl Optimizer {
    pub fn sgd(n_params: usize, lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            lr,
            momentum,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            steps: 0,
            first: vec![0.0; n_params],
            second: Vec::new(),
        }
    }

    pub fn adam(n_params: usize, lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
        }
    }

    pub fn n_params(&self) -> usize {
        self.first.len()
    }

    /// Clears moment buffers and the step counter.
    pub fn reset(&mut self) {
        self.first.iter_mut().for_each(|v| *v = 0.0);
        self.second.iter_mut().for_each(|v| *v = 0.0);
        self.steps = 0;
    }

    pub fn velocity(&self) -> &[f64] {
        &self.first
    }

    /// Applies one update. Non-finite gradients abort the step and leave
    /// both parameters and buffers untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::dim("Optimizer::step params", self.first.len(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(Error::dim("Optimizer::step grads", params.len(), grads.len()));
        }
        if let Some((i, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient[{i}] = {g}")));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, v), &g) in params.iter_mut().zip(&mut self.first).zip(grads) {
                    *v = self.momentum * *v - self.lr * g;
                    *p += *v;
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (((p, m), v), &g) in params
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                    .zip(grads)
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

/// Step decay: `base_lr * decay_factor^k` where `k` counts the decay points
/// (fractions of the total epoch budget) already passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_points: Vec<f64>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 0.03,
            decay_factor: 0.1,
            decay_points: vec![0.75, 0.90],
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        let in_range = self.decay_points.iter().all(|&p| p > 0.0 && p < 1.0);
        let increasing = self.decay_points.windows(2).all(|w| w[0] < w[1]);
        if !in_range || !increasing {
            return Err(Error::Config(
                "decay_points must be strictly increasing within (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        let passed = self
            .decay_points
            .iter()
            .filter(|&&p| epoch as f64 >= p * total_epochs as f64)
            .count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut opt = Optimizer::sgd(1, 0.1, 0.0);
        let mut p = [1.0];
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        // v1 = -0.1, p1 = -0.1; v2 = 0.9 * -0.1 - 0.1 = -0.19, p2 = -0.29
        let mut opt = Optimizer::sgd(1, 0.1, 0.9);
        let mut p = [0.0];
        opt.step(&mut p, &[1.0]).unwrap();
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let start = [0.5, -2.0, 3.25];
        for mut opt in [Optimizer::sgd(3, 0.1, 0.9), Optimizer::adam(3, 1e-4)] {
            let mut p = start;
            for _ in 0..3 {
                opt.step(&mut p, &[0.0; 3]).unwrap();
            }
            assert_eq!(p, start);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first step lr * sign(g) (up to eps)
        let mut opt = Optimizer::adam(2, 1e-3);
        let mut p = [0.0, 0.0];
        opt.step(&mut p, &[4.0, -0.5]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10);
        assert!((p[1] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut opt = Optimizer::sgd(2, 0.1, 0.9);
        let mut p = [1.0, 2.0];
        let err = opt.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(opt.steps, 0);
    }

    #[test]
    fn schedule_decays_twice() {
        let s = LrSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.lr_at(0, 100), 0.03);
        assert_eq!(s.lr_at(74, 100), 0.03);
        assert!((s.lr_at(75, 100) - 0.003).abs() < 1e-15);
        assert!((s.lr_at(90, 100) - 0.0003).abs() < 1e-15);
        let bad = LrSchedule {
            decay_points: vec![0.9, 0.75],
            ..LrSchedule::default()
        };
        assert!(bad.validate().is_err());
    }
}
