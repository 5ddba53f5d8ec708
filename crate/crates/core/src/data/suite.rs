use super::{generate_domain, DomainDataset, DomainSpec, DomainTransform, Split};
use crate::error::Result;

/// Parameters of a family of training domains plus one unseen test domain,
/// all drawn from the same latent identity distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub train_domains: usize,
    pub train_identities: usize,
    pub train_images: usize,
    pub test_identities: usize,
    pub test_images: usize,
    pub feature_dim: usize,
    pub signal_dim: usize,
    /// Identity coordinates active in each training domain; the unseen
    /// domain uses all of them.
    pub train_signal_active: usize,
    pub identity_spread: f64,
    pub context_dims: usize,
    pub context_active: usize,
    pub context_scale: f64,
    /// Context consistency of the training domains.
    pub train_context_consistency: f64,
    /// Context consistency of the unseen domain.
    pub test_context_consistency: f64,
    pub rotation: f64,
    pub translation: f64,
    pub noise: f64,
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
}

impl Default for SyntheticSuite {
    fn default() -> Self {
        Self {
            train_domains: 4,
            train_identities: 32,
            train_images: 8,
            test_identities: 100,
            test_images: 5,
            feature_dim: 32,
            signal_dim: 8,
            train_signal_active: 4,
            identity_spread: 0.5,
            context_dims: 8,
            context_active: 2,
            context_scale: 1.0,
            train_context_consistency: 0.9,
            test_context_consistency: 0.0,
            rotation: 0.3,
            translation: 0.5,
            noise: 0.1,
            nuisance_dims: 6,
            nuisance_scale: 2.0,
        }
    }
}

fn mix(seed: u64, domain: u64, salt: u64) -> u64 {
    // splitmix64 finaliser over the combined key
    let mut z = seed
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SyntheticSuite {
    /// Flat `key = value` pairs covering every field; [`SyntheticSuite::set`]
    /// parses them back exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("train_domains", self.train_domains.to_string()),
            ("train_identities", self.train_identities.to_string()),
            ("train_images", self.train_images.to_string()),
            ("test_identities", self.test_identities.to_string()),
            ("test_images", self.test_images.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("signal_dim", self.signal_dim.to_string()),
            ("train_signal_active", self.train_signal_active.to_string()),
            ("identity_spread", self.identity_spread.to_string()),
            ("context_dims", self.context_dims.to_string()),
            ("context_active", self.context_active.to_string()),
            ("context_scale", self.context_scale.to_string()),
            ("train_context_consistency", self.train_context_consistency.to_string()),
            ("test_context_consistency", self.test_context_consistency.to_string()),
            ("rotation", self.rotation.to_string()),
            ("translation", self.translation.to_string()),
            ("noise", self.noise.to_string()),
            ("nuisance_dims", self.nuisance_dims.to_string()),
            ("nuisance_scale", self.nuisance_scale.to_string()),
        ]
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for '{key}'"))
        }
        match key {
            "train_domains" => self.train_domains = num(key, value)?,
            "train_identities" => self.train_identities = num(key, value)?,
            "train_images" => self.train_images = num(key, value)?,
            "test_identities" => self.test_identities = num(key, value)?,
            "test_images" => self.test_images = num(key, value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "signal_dim" => self.signal_dim = num(key, value)?,
            "train_signal_active" => self.train_signal_active = num(key, value)?,
            "identity_spread" => self.identity_spread = num(key, value)?,
            "context_dims" => self.context_dims = num(key, value)?,
            "context_active" => self.context_active = num(key, value)?,
            "context_scale" => self.context_scale = num(key, value)?,
            "train_context_consistency" => self.train_context_consistency = num(key, value)?,
            "test_context_consistency" => self.test_context_consistency = num(key, value)?,
            "rotation" => self.rotation = num(key, value)?,
            "translation" => self.translation = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "nuisance_dims" => self.nuisance_dims = num(key, value)?,
            "nuisance_scale" => self.nuisance_scale = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Checks every domain spec without generating data.
    pub fn validate(&self) -> Result<()> {
        if self.train_domains == 0 {
            return Err(crate::Error::Config("at least one training domain is required".into()));
        }
        self.specs(0).iter().try_for_each(DomainSpec::validate)
    }

    /// Spec of domain `index`; indices `0..train_domains` are training
    /// domains, `train_domains` is the unseen test domain.
    pub fn domain_spec(&self, master_seed: u64, index: usize) -> DomainSpec {
        let test = index >= self.train_domains;
        let d = index as u64;
        DomainSpec {
            domain_id: index as u32,
            identities: if test { self.test_identities } else { self.train_identities },
            images_per_identity: if test { self.test_images } else { self.train_images },
            feature_dim: self.feature_dim,
            signal_dim: self.signal_dim,
            signal_active: if test { self.signal_dim } else { self.train_signal_active },
            identity_spread: self.identity_spread,
            context_dims: self.context_dims,
            context_active: self.context_active,
            context_scale: self.context_scale,
            context_consistency: if test {
                self.test_context_consistency
            } else {
                self.train_context_consistency
            },
            prototype_seed: mix(master_seed, d, 1),
            sample_seed: mix(master_seed, d, 2),
            split: if test { Split::Test } else { Split::Train },
            transform: DomainTransform {
                seed: mix(master_seed, d, 3),
                rotation: self.rotation,
                translation: self.translation,
                noise: self.noise,
                nuisance_dims: self.nuisance_dims,
                nuisance_scale: self.nuisance_scale,
            },
        }
    }

    pub fn specs(&self, master_seed: u64) -> Vec<DomainSpec> {
        (0..=self.train_domains).map(|i| self.domain_spec(master_seed, i)).collect()
    }

    /// Training datasets and the unseen test dataset.
    pub fn generate(&self, master_seed: u64) -> Result<(Vec<DomainDataset>, DomainDataset)> {
        let mut all = self
            .specs(master_seed)
            .iter()
            .map(generate_domain)
            .collect::<Result<Vec<_>>>()?;
        let unseen = all.pop().expect("suite has a test domain");
        Ok((all, unseen))
    }
}
