//! Adam with decoupled weight decay, global-norm clipping, and a linear
//! warm-up + cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::hyper::Hyper;

/// Learning rate at `step` of a run lasting `total_steps`: linear ramp from 0
/// to `hyper.lr` over the warm-up, then cosine decay reaching 0 at
/// `total_steps`.
pub fn lr_at(step: usize, hyper: &Hyper, total_steps: usize) -> f64 {
    let warmup = hyper.warmup_steps;
    if step < warmup {
        return hyper.lr * step as f64 / warmup as f64;
    }
    if total_steps <= warmup {
        return 0.0;
    }
    let progress = ((step - warmup) as f64 / (total_steps - warmup) as f64).min(1.0);
    hyper.lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One update. Weight decay is decoupled (`θ -= lr·wd·θ`) and applied only
    /// where `decay_mask` is set.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64, decay_mask: &[bool]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            if decay_mask[i] {
                params[i] -= lr * weight_decay * params[i];
            }
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let h = Hyper {
            lr: 7e-6,
            ..Hyper::default()
        };
        assert_eq!(lr_at(0, &h, 1000), 0.0);
        assert!((lr_at(100, &h, 1000) - 3.5e-6).abs() < 1e-18);
        assert_eq!(lr_at(200, &h, 1000), 7e-6);
        assert!(lr_at(999, &h, 1000) < 1e-10);
        assert_eq!(lr_at(1000, &h, 1000), 0.0);
        // Cosine midpoint.
        assert!((lr_at(600, &h, 1000) - 3.5e-6).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let h = Hyper::default();
        let lrs: Vec<f64> = (200..=1000).map(|s| lr_at(s, &h, 1000)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![30.0, 40.0];
        let pre = clip_grad_norm(&mut g, 10.0);
        assert_eq!(pre, 50.0);
        let post = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(post <= 10.0 + 1e-9);
        let mut small = vec![0.1, 0.2];
        clip_grad_norm(&mut small, 10.0);
        assert_eq!(small, vec![0.1, 0.2]);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut adam = Adam::new(2);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam.step(&mut p, &g, 0.01, 0.0, &[true, true]);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn decay_only_where_masked() {
        let mut adam = Adam::new(2);
        let mut p = vec![1.0, 1.0];
        adam.step(&mut p, &[0.0, 0.0], 0.1, 0.5, &[true, false]);
        assert!((p[0] - 0.95).abs() < 1e-12);
        assert_eq!(p[1], 1.0);
    }
}
