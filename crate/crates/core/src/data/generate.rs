use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Per-domain appearance shift applied on top of the shared latent space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainTransform {
    pub seed: u64,
    /// Standard deviation of the Givens rotation angles (radians).
    pub rotation: f64,
    /// Standard deviation of the per-coordinate translation.
    pub translation: f64,
    /// Isotropic observation noise added after the transform.
    pub noise: f64,
    /// Number of latent directions outside the identity subspace that vary
    /// strongly within this domain.
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
}

impl DomainTransform {
    pub fn identity() -> Self {
        Self {
            seed: 0,
            rotation: 0.0,
            translation: 0.0,
            noise: 0.0,
            nuisance_dims: 0,
            nuisance_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: u32,
    pub identities: usize,
    pub images_per_identity: usize,
    pub feature_dim: usize,
    /// Leading latent coordinates that carry identity information.
    pub signal_dim: usize,
    /// How many identity coordinates (a domain-specific random subset)
    /// actually differ between identities in this domain; the others only
    /// carry within-identity spread.
    pub signal_active: usize,
    /// Within-identity spread in the identity subspace.
    pub identity_spread: f64,
    /// Latent coordinates right after the signal subspace that describe the
    /// capture context (scene, camera) rather than the identity. Shared by
    /// all domains.
    pub context_dims: usize,
    /// How many context coordinates (a domain-specific random subset) are
    /// tied to the identity within this domain.
    pub context_active: usize,
    pub context_scale: f64,
    /// Correlation in `[0, 1]` between an image's active context and a fixed
    /// per-identity context: 1 means every image of an identity shares one
    /// scene, 0 means contexts are drawn independently per image.
    pub context_consistency: f64,
    pub prototype_seed: u64,
    pub sample_seed: u64,
    pub split: Split,
    pub transform: DomainTransform,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(Error::Config(format!(
                "domain {} needs at least 2 identities, got {}",
                self.domain_id, self.identities
            )));
        }
        if self.images_per_identity < 2 {
            return Err(Error::Config(format!(
                "domain {} needs at least 2 images per identity, got {}",
                self.domain_id, self.images_per_identity
            )));
        }
        if self.signal_dim == 0 || self.signal_dim > self.feature_dim {
            return Err(Error::Config(format!(
                "signal dimension {} must lie in 1..={}",
                self.signal_dim, self.feature_dim
            )));
        }
        if self.signal_active == 0 || self.signal_active > self.signal_dim {
            return Err(Error::Config(format!(
                "active signal coordinates {} must lie in 1..={}",
                self.signal_active, self.signal_dim
            )));
        }
        if self.signal_dim + self.context_dims + self.transform.nuisance_dims > self.feature_dim {
            return Err(Error::Config(format!(
                "{} signal, {} context and {} nuisance directions do not fit in {} features",
                self.signal_dim, self.context_dims, self.transform.nuisance_dims, self.feature_dim
            )));
        }
        if self.context_active > self.context_dims {
            return Err(Error::Config(format!(
                "{} active context coordinates exceed the {} context dimensions",
                self.context_active, self.context_dims
            )));
        }
        if !(0.0..=1.0).contains(&self.context_consistency) {
            return Err(Error::Config(format!(
                "context consistency must lie in [0, 1], got {}",
                self.context_consistency
            )));
        }
        let scales = [
            self.identity_spread,
            self.context_scale,
            self.transform.rotation,
            self.transform.translation,
            self.transform.noise,
            self.transform.nuisance_scale,
        ];
        if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("domain scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.identities * self.images_per_identity
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Random orthogonal matrix built from `4 * dim` Givens rotations with
/// normally distributed angles of standard deviation `angle_std`.
pub fn orthogonal_transform<R: Rng + ?Sized>(dim: usize, angle_std: f64, rng: &mut R) -> Array2<f64> {
    let mut q = Array2::eye(dim);
    if dim < 2 || angle_std == 0.0 {
        return q;
    }
    for _ in 0..4 * dim {
        let pair = index::sample(rng, dim, 2);
        let (i, j) = (pair.index(0), pair.index(1));
        let theta = angle_std * normal(rng);
        let (s, c) = theta.sin_cos();
        for k in 0..dim {
            let (a, b) = (q[[i, k]], q[[j, k]]);
            q[[i, k]] = c * a - s * b;
            q[[j, k]] = s * a + c * b;
        }
    }
    q
}

/// Draws a dataset from `spec`.
///
/// Identity prototypes come from `prototype_seed` and live in the first
/// `signal_dim` latent coordinates, followed by `context_dims` context
/// coordinates. Each image adds within-identity spread, its context and the
/// domain nuisance variation, then applies the domain's rotation,
/// translation and observation noise. Samples are ordered identity-major.
pub fn generate_domain(spec: &DomainSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let d = spec.feature_dim;
    let t = &spec.transform;

    let mut proto_rng = rng::seeded(spec.prototype_seed);
    let prototypes = Array2::from_shape_fn((spec.identities, spec.signal_dim), |_| normal(&mut proto_rng));
    let contexts = Array2::from_shape_fn((spec.identities, spec.context_dims), |_| normal(&mut proto_rng));
    let rho = spec.context_consistency;
    let fresh = (1.0 - rho * rho).sqrt();
    let context_start = spec.signal_dim;
    let free_start = spec.signal_dim + spec.context_dims;

    let mut tr_rng = rng::seeded(t.seed);
    let rotation = orthogonal_transform(d, t.rotation, &mut tr_rng);
    let translation = Array1::from_shape_fn(d, |_| t.translation * normal(&mut tr_rng));
    let nuisance: Vec<usize> = index::sample(&mut tr_rng, d - free_start, t.nuisance_dims)
        .into_iter()
        .map(|i| free_start + i)
        .collect();
    let mut signal_on = vec![false; spec.signal_dim];
    for i in index::sample(&mut tr_rng, spec.signal_dim, spec.signal_active) {
        signal_on[i] = true;
    }
    let mut active = vec![false; spec.context_dims];
    for i in index::sample(&mut tr_rng, spec.context_dims, spec.context_active) {
        active[i] = true;
    }

    let mut rng = rng::seeded(spec.sample_seed);
    let n = spec.samples();
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut latent = Array1::zeros(d);
    for id in 0..spec.identities {
        for _ in 0..spec.images_per_identity {
            latent.fill(0.0);
            for k in 0..spec.signal_dim {
                let centre = if signal_on[k] { prototypes[[id, k]] } else { 0.0 };
                latent[k] = centre + spec.identity_spread * normal(&mut rng);
            }
            for k in 0..spec.context_dims {
                let e = normal(&mut rng);
                latent[context_start + k] = spec.context_scale
                    * if active[k] {
                        rho * contexts[[id, k]] + fresh * e
                    } else {
                        e
                    };
            }
            for &k in &nuisance {
                latent[k] = t.nuisance_scale * normal(&mut rng);
            }
            let mut x = rotation.dot(&latent) + &translation;
            if t.noise > 0.0 {
                x.mapv_inplace(|v| v + t.noise * normal(&mut rng));
            }
            features.row_mut(labels.len()).assign(&x);
            labels.push(id);
        }
    }
    DomainDataset::new(spec.domain_id, spec.identities, spec.split, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DomainSpec {
        DomainSpec {
            domain_id: 3,
            identities: 10,
            images_per_identity: 20,
            feature_dim: 12,
            signal_dim: 4,
            signal_active: 3,
            identity_spread: 0.3,
            context_dims: 2,
            context_active: 1,
            context_scale: 1.0,
            context_consistency: 0.5,
            prototype_seed: 11,
            sample_seed: 12,
            split: Split::Train,
            transform: DomainTransform {
                seed: 13,
                rotation: 0.5,
                translation: 1.0,
                noise: 0.1,
                nuisance_dims: 3,
                nuisance_scale: 1.0,
            },
        }
    }

    #[test]
    fn counts_and_labels() {
        let ds = generate_domain(&spec()).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.identity_counts(), vec![20; 10]);
        assert_eq!(*ds.labels().iter().max().unwrap(), 9);
        assert_eq!(ds.feature_dim(), 12);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_domain(&spec()).unwrap(), generate_domain(&spec()).unwrap());
    }

    #[test]
    fn rotation_is_orthogonal() {
        let q = orthogonal_transform(9, 0.7, &mut rng::seeded(5));
        let qtq = q.t().dot(&q);
        for i in 0..9 {
            for j in 0..9 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_single_image_identities() {
        let s = DomainSpec { images_per_identity: 1, ..spec() };
        assert!(matches!(generate_domain(&s), Err(Error::Config(_))));
        let s = DomainSpec { identities: 1, ..spec() };
        assert!(generate_domain(&s).is_err());
    }
}
