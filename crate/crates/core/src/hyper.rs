use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_BATCH_SIZE;
use crate::error::{Error, Result};
use crate::selfpaced::check_thresholds;

/// Learning rate used when fine-tuning a full CLIP backbone. Far too small for
/// the linear heads trained here; kept for reference and reachable via flag.
pub const ENCODER_FINE_TUNE_LR: f64 = 7e-6;

/// Every scalar training knob in one validated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub tau: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Per-epoch linear increase of `gamma2`; zero keeps the thresholds fixed.
    pub gamma2_growth: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            tau: 0.07,
            gamma1: 5.0,
            gamma2: 18.0,
            sigma: 0.6,
            lambda1: 0.8,
            lambda2: 0.9,
            alpha: 0.9,
            lr: 1e-3,
            weight_decay: 0.7,
            warmup_steps: 200,
            max_grad_norm: 50.0,
            epochs: 50,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            gamma2_growth: 0.0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be > 0, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be >= 0, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        check_thresholds(self.gamma1, self.gamma2)?;
        positive("sigma", self.sigma)?;
        non_negative("lambda1", self.lambda1)?;
        non_negative("lambda2", self.lambda2)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        positive("lr", self.lr)?;
        non_negative("weight_decay", self.weight_decay)?;
        positive("max_grad_norm", self.max_grad_norm)?;
        non_negative("gamma2_growth", self.gamma2_growth)?;
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }

    /// `gamma2` in effect during a 1-based epoch.
    pub fn gamma2_at(&self, epoch: usize) -> f64 {
        self.gamma2 + self.gamma2_growth * epoch.saturating_sub(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let h = Hyper::default();
        h.validate().unwrap();
        assert_eq!((h.gamma1, h.gamma2, h.sigma), (5.0, 18.0, 0.6));
        assert_eq!((h.lambda1, h.lambda2, h.alpha), (0.8, 0.9, 0.9));
        assert_eq!((h.weight_decay, h.warmup_steps, h.max_grad_norm), (0.7, 200, 50.0));
        assert_eq!((h.epochs, h.batch_size), (50, 100));
    }

    #[test]
    fn invalid_records_rejected() {
        for bad in [
            Hyper {
                tau: 0.0,
                ..Hyper::default()
            },
            Hyper {
                gamma1: 18.0,
                ..Hyper::default()
            },
            Hyper {
                sigma: -1.0,
                ..Hyper::default()
            },
            Hyper {
                lambda2: -0.1,
                ..Hyper::default()
            },
            Hyper {
                alpha: 1.1,
                ..Hyper::default()
            },
            Hyper {
                lr: 0.0,
                ..Hyper::default()
            },
            Hyper {
                batch_size: 1,
                ..Hyper::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn pace_schedule() {
        let h = Hyper {
            gamma2_growth: 0.5,
            ..Hyper::default()
        };
        assert_eq!(h.gamma2_at(1), 18.0);
        assert_eq!(h.gamma2_at(3), 19.0);
        assert_eq!(Hyper::default().gamma2_at(40), 18.0);
    }
}
