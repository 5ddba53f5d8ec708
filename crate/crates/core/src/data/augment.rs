use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Feature-vector augmentation, applied as jitter, then dropout, then scaling.
/// A component whose parameter is zero is skipped and draws nothing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentConfig {
    /// Standard deviation of additive Gaussian jitter.
    pub jitter: f64,
    /// Probability of zeroing each coordinate.
    pub dropout: f64,
    /// Half-width of the multiplicative range `[1 - scale, 1 + scale]`.
    pub scale: f64,
}

impl AugmentConfig {
    pub fn is_identity(&self) -> bool {
        self.jitter == 0.0 && self.dropout == 0.0 && self.scale == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.jitter >= 0.0 && self.scale >= 0.0 && (0.0..=1.0).contains(&self.dropout)) {
            return Err(format!("invalid augmentation {self:?}"));
        }
        Ok(())
    }
}

pub fn augment<R: Rng + ?Sized>(x: ArrayView1<f64>, cfg: &AugmentConfig, rng: &mut R) -> Array1<f64> {
    let mut out = x.to_owned();
    if cfg.jitter > 0.0 {
        out.mapv_inplace(|v| {
            let n: f64 = StandardNormal.sample(rng);
            v + cfg.jitter * n
        });
    }
    if cfg.dropout > 0.0 {
        out.mapv_inplace(|v| if rng.random::<f64>() < cfg.dropout { 0.0 } else { v });
    }
    if cfg.scale > 0.0 {
        let factor = 1.0 + cfg.scale * (2.0 * rng.random::<f64>() - 1.0);
        out *= factor;
    }
    out
}

/// Augments each row independently, in row order.
pub fn augment_batch<R: Rng + ?Sized>(x: ArrayView2<f64>, cfg: &AugmentConfig, rng: &mut R) -> Array2<f64> {
    if cfg.is_identity() {
        return x.to_owned();
    }
    let mut out = Array2::zeros(x.dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        out.row_mut(i).assign(&augment(row, cfg, rng));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn zero_config_is_identity() {
        let x = array![1.0, -2.0, 0.5];
        let y = augment(x.view(), &AugmentConfig::default(), &mut rng::seeded(1));
        assert_eq!(x, y);
    }

    #[test]
    fn jitter_replays_the_noise_stream() {
        let x = array![1.0, -2.0, 0.5, 4.0];
        let cfg = AugmentConfig { jitter: 0.3, ..Default::default() };
        let y = augment(x.view(), &cfg, &mut rng::seeded(9));
        let mut replay = rng::seeded(9);
        for i in 0..4 {
            let n: f64 = StandardNormal.sample(&mut replay);
            assert_eq!(y[i], x[i] + 0.3 * n);
        }
    }

    #[test]
    fn full_dropout_zeroes_everything() {
        let x = array![1.0, -2.0, 0.5];
        let cfg = AugmentConfig { dropout: 1.0, ..Default::default() };
        let y = augment(x.view(), &cfg, &mut rng::seeded(2));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_stays_in_range() {
        let x = array![1.0, 1.0];
        let cfg = AugmentConfig { scale: 0.2, ..Default::default() };
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            let y = augment(x.view(), &cfg, &mut r);
            assert!(y[0] >= 0.8 && y[0] <= 1.2);
            assert_eq!(y[0], y[1]);
        }
    }
}
