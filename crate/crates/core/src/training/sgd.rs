use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Seed for the per-epoch shuffle.
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epochs: 30,
            lr_start: 1e-3,
            lr_end: 1e-5,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
        }
    }
}

impl SgdConfig {
    /// Schedule used when training through an upstream map: 0.01 down to
    /// 0.0001 over 60 epochs.
    pub fn end_to_end() -> Self {
        SgdConfig {
            epochs: 60,
            lr_start: 1e-2,
            lr_end: 1e-4,
            ..SgdConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rates must satisfy lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Geometric interpolation from `lr_start` at epoch 0 to `lr_end` at the
/// last epoch.
pub fn lr_at(epoch: usize, cfg: &SgdConfig) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.lr_start;
    }
    let frac = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(frac)
}

/// Momentum buffer for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(len: usize) -> Self {
        Momentum {
            velocity: vec![0.0; len],
        }
    }
}

/// Classical momentum with L2 weight decay:
/// `v <- mu v - lr (g + wd p)`, `p <- p + v`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], state: &mut Momentum, lr: f64, cfg: &SgdConfig) {
    assert_eq!(params.len(), grad.len(), "parameter/gradient shape mismatch");
    assert_eq!(params.len(), state.velocity.len(), "parameter/momentum shape mismatch");
    for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut state.velocity) {
        *v = cfg.momentum * *v - lr * (g + cfg.weight_decay * *p);
        *p += *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = SgdConfig {
            epochs: 5,
            ..SgdConfig::default()
        };
        assert!((lr_at(0, &cfg) - 1e-3).abs() < 1e-18);
        assert!((lr_at(4, &cfg) - 1e-5).abs() < 1e-18);
        assert!((lr_at(2, &cfg) - 1e-4).abs() < 1e-17);
        let one = SgdConfig {
            epochs: 1,
            ..SgdConfig::default()
        };
        assert_eq!(lr_at(0, &one), 1e-3);
    }

    #[test]
    fn plain_step() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut p = vec![1.0, -2.0];
        let mut m = Momentum::new(2);
        sgd_step(&mut p, &[0.5, 1.0], &mut m, 0.1, &cfg);
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn momentum_recurrence() {
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut p = vec![0.0];
        let mut m = Momentum::new(1);
        let (lr, g) = (0.01, 3.0);
        sgd_step(&mut p, &[g], &mut m, lr, &cfg);
        sgd_step(&mut p, &[g], &mut m, lr, &cfg);
        assert!((m.velocity[0] - (-lr * g * 1.9)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.5,
            ..SgdConfig::default()
        };
        let mut p = vec![2.0, -4.0];
        let mut m = Momentum::new(2);
        let lr = 0.1;
        sgd_step(&mut p, &[0.0, 0.0], &mut m, lr, &cfg);
        sgd_step(&mut p, &[0.0, 0.0], &mut m, lr, &cfg);
        let f = (1.0 - lr * 0.5) * (1.0 - lr * 0.5);
        assert!((p[0] - 2.0 * f).abs() < 1e-15);
        assert!((p[1] + 4.0 * f).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_schedule() {
        let bad = SgdConfig {
            lr_start: 1e-5,
            lr_end: 1e-3,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig::end_to_end().validate().is_ok());
    }
}
