use crate::error::{check_dim, Error, Result};
use crate::params::ParamBlock;

/// Hyperparameters of the SGD update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

impl SgdConfig {
    pub const VANILLA: SgdConfig = SgdConfig {
        momentum: 0.0,
        weight_decay: 0.0,
        nesterov: false,
    };
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
        }
    }
}

/// SGD momentum buffer for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    buffer: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, len: usize) -> Self {
        Self {
            config,
            buffer: vec![0.0; len],
        }
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    pub fn reset(&mut self) {
        self.buffer.iter_mut().for_each(|v| *v = 0.0);
    }

    /// One update:
    ///
    /// ```text
    /// d = g + wd * w
    /// v = mu * v + d
    /// w -= lr * (d + mu * v)   (Nesterov)
    /// w -= lr * v              (classic momentum)
    /// ```
    ///
    /// A non-finite gradient aborts the step and leaves `params` untouched.
    pub fn step(&mut self, params: &mut ParamBlock, grads: &ParamBlock, lr: f64) -> Result<()> {
        check_dim("optimizer parameters", self.buffer.len(), params.len())?;
        check_dim("optimizer gradients", self.buffer.len(), grads.len())?;
        if let Some((index, &value)) = grads.values().iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        let SgdConfig {
            momentum,
            weight_decay,
            nesterov,
        } = self.config;
        for ((w, &g), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads.values())
            .zip(self.buffer.iter_mut())
        {
            let d = if weight_decay != 0.0 { g + weight_decay * *w } else { g };
            let update = if momentum != 0.0 {
                *v = momentum * *v + d;
                if nesterov {
                    d + momentum * *v
                } else {
                    *v
                }
            } else {
                d
            };
            *w -= lr * update;
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `base * factor^floor(epoch / period)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            factor: 1.0,
            period: usize::MAX,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        lr_at(self, epoch)
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    let decays = epoch.checked_div(schedule.period).unwrap_or(0);
    schedule.base * schedule.factor.powi(decays as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LayerShape;

    fn scalar(v: f64) -> ParamBlock {
        ParamBlock::from_values(vec![LayerShape { rows: 1, cols: 1, bias: 0 }], vec![v]).unwrap()
    }

    #[test]
    fn vanilla_step() {
        let mut w = scalar(1.0);
        let mut opt = OptimizerState::new(SgdConfig::VANILLA, 1);
        opt.step(&mut w, &scalar(0.5), 0.1).unwrap();
        assert_eq!(w.values()[0], 0.95);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let mut w = scalar(1.0);
        let cfg = SgdConfig { weight_decay: 0.1, ..SgdConfig::VANILLA };
        let mut opt = OptimizerState::new(cfg, 1);
        opt.step(&mut w, &scalar(0.0), 0.1).unwrap();
        let oracle = 1.0 - 0.1 * (0.0 + 0.1 * 1.0);
        assert_eq!(w.values()[0], oracle);
        assert!((w.values()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn nesterov_matches_scalar_recurrence() {
        // f(w) = 0.5 * a * w^2, gradient a * w
        let (a, lr, mu) = (3.0, 0.05, 0.9);
        let mut w = scalar(2.0);
        let mut opt = OptimizerState::new(SgdConfig { momentum: mu, weight_decay: 0.0, nesterov: true }, 1);
        for _ in 0..2 {
            let g = scalar(a * w.values()[0]);
            opt.step(&mut w, &g, lr).unwrap();
        }
        // independent recurrence written out by hand
        let w0: f64 = 2.0;
        let g0 = a * w0;
        let v1 = g0;
        let w1 = w0 - lr * (g0 + mu * v1);
        let g1 = a * w1;
        let v2 = mu * v1 + g1;
        let w2 = w1 - lr * (g1 + mu * v2);
        assert!((w.values()[0] - w2).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = scalar(1.0);
        let mut opt = OptimizerState::new(SgdConfig::default(), 1);
        let err = opt.step(&mut w, &scalar(f64::NAN), 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 0, .. }));
        assert_eq!(w.values()[0], 1.0);
    }

    #[test]
    fn schedule_decays_stepwise() {
        let embed = LrSchedule { base: 0.01, factor: 0.1, period: 40 };
        assert_eq!(lr_at(&embed, 0), 0.01);
        assert!((lr_at(&embed, 39) - 0.01).abs() < 1e-18);
        assert!((lr_at(&embed, 40) - 0.001).abs() < 1e-15);
        let head = LrSchedule { base: 0.1, ..embed };
        assert!((lr_at(&head, 85) - 0.1 * 0.1f64.powi(2)).abs() < 1e-15);
        assert!((lr_at(&head, 85) - 0.001).abs() < 1e-15);
    }
}
