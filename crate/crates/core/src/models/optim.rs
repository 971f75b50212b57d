//! Adam and the one-cycle learning-rate schedule.

use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with coupled L2 weight decay (added to the gradient).
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    weight_decay: f64,
}

impl Adam {
    pub fn new(n_params: usize, weight_decay: f64) -> Self {
        Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Linear warm-up from `max_lr / 25` to `max_lr` over the first 30% of
/// steps, then cosine annealing down to `max_lr / 100`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

pub const ONE_CYCLE_WARMUP: f64 = 0.3;
pub const ONE_CYCLE_START_DIV: f64 = 25.0;
pub const ONE_CYCLE_END_DIV: f64 = 100.0;

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        let warmup_steps = if total_steps < 2 {
            0
        } else {
            ((total_steps - 1) as f64 * ONE_CYCLE_WARMUP).round().max(1.0) as usize
        };
        OneCycle {
            max_lr,
            total_steps,
            warmup_steps,
        }
    }

    pub fn start_lr(&self) -> f64 {
        self.max_lr / ONE_CYCLE_START_DIV
    }

    pub fn end_lr(&self) -> f64 {
        self.max_lr / ONE_CYCLE_END_DIV
    }

    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps < 2 {
            return self.max_lr;
        }
        let w = self.warmup_steps;
        if step <= w {
            let frac = step as f64 / w as f64;
            return self.start_lr() + (self.max_lr - self.start_lr()) * frac;
        }
        let span = (self.total_steps - 1 - w).max(1) as f64;
        let frac = ((step - w) as f64 / span).min(1.0);
        let cos = (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0;
        self.end_lr() + (self.max_lr - self.end_lr()) * cos
    }

    pub fn schedule(&self) -> Vec<f64> {
        (0..self.total_steps).map(|s| self.lr(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_shape() {
        for total in [3usize, 10, 57, 1000] {
            let s = OneCycle::new(0.01, total).schedule();
            assert_eq!(s.len(), total);
            assert!(s[0] < 0.01);
            assert_eq!(s.iter().filter(|&&x| x == 0.01).count(), 1, "total {total}");
            assert!(s[total - 1] <= s[0]);
            assert!(s.iter().all(|&x| x <= 0.01 && x > 0.0));
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.0);
        opt.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
