use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::losses::LossSpec;
use crate::nn::{LrSchedule, MappingConfig, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// FedAVG with every client and a single local step per epoch.
    FedSgd,
    /// Full-model averaging; heads are padded to the largest identity count.
    FedAvg,
    /// Embedding-only aggregation with private heads and a local expert.
    FedReid,
    /// `FedReid` without the expert and its two losses.
    FedReidNoExpert,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::FedReid,
        Strategy::FedReidNoExpert,
        Strategy::FedAvg,
        Strategy::FedSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedSgd => "fedsgd",
            Strategy::FedAvg => "fedavg",
            Strategy::FedReid => "fedreid",
            Strategy::FedReidNoExpert => "fedreid-noexpert",
        }
    }

    /// Whether heads stay on the clients (only embeddings are aggregated).
    pub fn decoupled_heads(self) -> bool {
        matches!(self, Strategy::FedReid | Strategy::FedReidNoExpert)
    }

    pub fn uses_expert(self) -> bool {
        self == Strategy::FedReid
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "fedsgd" => Ok(Strategy::FedSgd),
            "fedavg" => Ok(Strategy::FedAvg),
            "fedreid" => Ok(Strategy::FedReid),
            "fedreid-noexpert" | "fedreid-no-expert" => Ok(Strategy::FedReidNoExpert),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the privacy noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoisePlacement {
    None,
    /// Into the aggregated embedding.
    Single,
    /// Into the aggregated embedding and into every broadcast copy.
    Double,
}

impl std::str::FromStr for NoisePlacement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(NoisePlacement::None),
            "single" => Ok(NoisePlacement::Single),
            "double" => Ok(NoisePlacement::Double),
            other => Err(format!("unknown noise placement '{other}'")),
        }
    }
}

impl std::fmt::Display for NoisePlacement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoisePlacement::None => "none",
            NoisePlacement::Single => "single",
            NoisePlacement::Double => "double",
        })
    }
}

/// Architecture shared by every client; the input width comes from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub head_hidden: usize,
    pub batch_norm: bool,
    pub keep_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_hidden: vec![64],
            embed_dim: 32,
            head_hidden: 64,
            batch_norm: true,
            keep_prob: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn embed_dims(&self, input: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.embed_hidden);
        dims.push(self.embed_dim);
        dims
    }

    pub fn head(&self, classes: usize) -> MappingConfig {
        MappingConfig {
            input: self.embed_dim,
            hidden: self.head_hidden,
            classes,
            batch_norm: self.batch_norm,
            keep_prob: self.keep_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub clients: usize,
    pub fraction: f64,
    pub beta: f64,
    pub noise: NoisePlacement,
    pub local_steps: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_embed: LrSchedule,
    pub lr_head: LrSchedule,
    pub sgd: SgdConfig,
    /// Clear momentum buffers at the start of every global epoch.
    pub reset_optimizer: bool,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub exec: ExecMode,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 4,
            fraction: 1.0,
            beta: 0.0,
            noise: NoisePlacement::Single,
            local_steps: 1,
            epochs: 100,
            temperature: 3.0,
            strategy: Strategy::FedReid,
            batch_size: 32,
            seed: 0,
            lr_embed: LrSchedule {
                base: 0.01,
                factor: 0.1,
                period: 40,
            },
            lr_head: LrSchedule {
                base: 0.1,
                factor: 0.1,
                period: 40,
            },
            sgd: SgdConfig::default(),
            reset_optimizer: true,
            model: ModelConfig::default(),
            augment: AugmentConfig {
                jitter: 0.1,
                dropout: 0.0,
                scale: 0.1,
            },
            exec: ExecMode::default(),
        }
    }
}

/// `ceil(fraction * clients)` clamped to `1..=clients`, robust to the
/// rounding of the product.
pub fn selected_count(clients: usize, fraction: f64) -> usize {
    let raw = (fraction * clients as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(clients)
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return fail("at least one client is required".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return fail(format!("client fraction must lie in (0, 1], got {}", self.fraction));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("noise scale must lie in [0, 1], got {}", self.beta));
        }
        if self.local_steps == 0 {
            return fail("local steps must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("at least one global epoch is required".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        for (name, lr) in [("embedding", &self.lr_embed), ("head", &self.lr_head)] {
            if !(lr.base >= 0.0 && lr.factor > 0.0 && lr.period > 0) {
                return fail(format!("invalid {name} learning-rate schedule {lr:?}"));
            }
        }
        if !(0.0..1.0).contains(&self.sgd.momentum) || self.sgd.weight_decay < 0.0 {
            return fail(format!("invalid optimizer settings {:?}", self.sgd));
        }
        if self.model.embed_dim == 0 || self.model.head_hidden == 0 || self.model.embed_hidden.contains(&0) {
            return fail("layer sizes must be positive".into());
        }
        if !(self.model.keep_prob > 0.0 && self.model.keep_prob <= 1.0) {
            return fail(format!("keep probability must lie in (0, 1], got {}", self.model.keep_prob));
        }
        self.augment.validate().map_err(Error::Config)?;
        Ok(())
    }

    /// FedSGD pins the fraction to 1.
    pub fn effective_fraction(&self) -> f64 {
        if self.strategy == Strategy::FedSgd {
            1.0
        } else {
            self.fraction
        }
    }

    /// FedSGD pins the local steps to 1.
    pub fn effective_local_steps(&self) -> usize {
        if self.strategy == Strategy::FedSgd {
            1
        } else {
            self.local_steps
        }
    }

    pub fn selected_count(&self) -> usize {
        selected_count(self.clients, self.effective_fraction())
    }

    pub fn loss_spec(&self) -> LossSpec {
        if self.strategy.uses_expert() {
            LossSpec::full(self.temperature)
        } else {
            LossSpec {
                temperature: self.temperature,
                ..LossSpec::classification_only()
            }
        }
    }

    /// Flat `key = value` pairs covering every field; [`FederationConfig::set`]
    /// parses them back exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("clients", self.clients.to_string()),
            ("fraction", self.fraction.to_string()),
            ("beta", self.beta.to_string()),
            ("noise", self.noise.to_string()),
            ("local_steps", self.local_steps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("temperature", self.temperature.to_string()),
            ("strategy", self.strategy.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("lr_embed", self.lr_embed.base.to_string()),
            ("lr_head", self.lr_head.base.to_string()),
            ("lr_decay", self.lr_embed.factor.to_string()),
            ("lr_period", self.lr_embed.period.to_string()),
            ("momentum", self.sgd.momentum.to_string()),
            ("weight_decay", self.sgd.weight_decay.to_string()),
            ("nesterov", self.sgd.nesterov.to_string()),
            ("reset_optimizer", self.reset_optimizer.to_string()),
            ("embed_hidden", join(&self.model.embed_hidden)),
            ("embed_dim", self.model.embed_dim.to_string()),
            ("head_hidden", self.model.head_hidden.to_string()),
            ("batch_norm", self.model.batch_norm.to_string()),
            ("keep_prob", self.model.keep_prob.to_string()),
            ("aug_jitter", self.augment.jitter.to_string()),
            ("aug_dropout", self.augment.dropout.to_string()),
            ("aug_scale", self.augment.scale.to_string()),
            ("exec", self.exec.to_string()),
        ]
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for '{key}'"))
        }
        match key {
            "clients" => self.clients = num(key, value)?,
            "fraction" => self.fraction = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "noise" => self.noise = value.parse()?,
            "local_steps" => self.local_steps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lr_embed" => self.lr_embed.base = num(key, value)?,
            "lr_head" => self.lr_head.base = num(key, value)?,
            "lr_decay" => {
                let f = num(key, value)?;
                self.lr_embed.factor = f;
                self.lr_head.factor = f;
            }
            "lr_period" => {
                let p = num(key, value)?;
                self.lr_embed.period = p;
                self.lr_head.period = p;
            }
            "momentum" => self.sgd.momentum = num(key, value)?,
            "weight_decay" => self.sgd.weight_decay = num(key, value)?,
            "nesterov" => self.sgd.nesterov = num(key, value)?,
            "reset_optimizer" => self.reset_optimizer = num(key, value)?,
            "embed_hidden" => {
                self.model.embed_hidden = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|s| num(key, s.trim()))
                        .collect::<std::result::Result<_, _>>()?
                }
            }
            "embed_dim" => self.model.embed_dim = num(key, value)?,
            "head_hidden" => self.model.head_hidden = num(key, value)?,
            "batch_norm" => self.model.batch_norm = num(key, value)?,
            "keep_prob" => self.model.keep_prob = num(key, value)?,
            "aug_jitter" => self.augment.jitter = num(key, value)?,
            "aug_dropout" => self.augment.dropout = num(key, value)?,
            "aug_scale" => self.augment.scale = num(key, value)?,
            "exec" => self.exec = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses text produced by [`FederationConfig::to_kv_text`]. Unknown keys
    /// are rejected.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = FederationConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected 'key = value', got '{line}'")))?;
            let known = cfg.set(k.trim(), v.trim()).map_err(Error::Config)?;
            if !known {
                return Err(Error::Config(format!("unknown key '{}'", k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = FederationConfig::default();
        assert_eq!((c.clients, c.fraction, c.beta, c.local_steps), (4, 1.0, 0.0, 1));
        assert_eq!((c.epochs, c.temperature, c.batch_size), (100, 3.0, 32));
        assert_eq!(c.lr_embed.base, 0.01);
        assert_eq!(c.lr_head.base, 0.1);
        assert_eq!(c.sgd.weight_decay, 5e-4);
        c.validate().unwrap();
    }

    #[test]
    fn selection_counts() {
        assert_eq!(selected_count(4, 1.0), 4);
        assert_eq!(selected_count(4, 0.5), 2);
        assert_eq!(selected_count(4, 0.25), 1);
        assert_eq!(selected_count(10, 0.3), 3);
        assert_eq!(selected_count(4, 0.01), 1);
        assert_eq!(selected_count(3, 0.5), 2);
    }

    #[test]
    fn kv_round_trip() {
        let mut c = FederationConfig {
            beta: 0.0005,
            fraction: 0.3,
            strategy: Strategy::FedReidNoExpert,
            seed: u64::MAX,
            ..FederationConfig::default()
        };
        c.model.embed_hidden = vec![7, 9];
        let back = FederationConfig::from_kv_text(&c.to_kv_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = FederationConfig {
            fraction: 1.5,
            ..FederationConfig::default()
        };
        assert!(c.validate().is_err());
        c.fraction = 0.0;
        assert!(c.validate().is_err());
        assert!(FederationConfig::from_kv_text("bogus = 1").is_err());
    }
}
