//! Experiment configuration: a flat `key = value` file, optionally
//! overridden by command-line flags.
//!
//! Keys are the federation keys (`clients`, `fraction`, `beta`, ...),
//! generator keys prefixed with `data.` (`data.train_identities`, ...) and
//! the experiment keys below. `preset` is applied before every other key,
//! wherever it appears. Lines starting with `#` are comments.

use std::fmt;
use std::path::{Path, PathBuf};

use fedembed::data::SyntheticSuite;
use fedembed::federation::FederationConfig;

const DATA_PREFIX: &str = "data.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Serve,
    Client,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "serve" => Ok(Mode::Serve),
            "client" => Ok(Mode::Client),
            other => Err(format!("unknown mode '{other}' (expected simulate, serve or client)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Serve => "serve",
            Mode::Client => "client",
        })
    }
}

/// Named starting points for the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Published training defaults with the default MLP.
    Reference,
    /// Settings under which from-scratch training on the synthetic suite
    /// separates the methods; see the README.
    Benchmark,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(Preset::Reference),
            "benchmark" => Ok(Preset::Benchmark),
            other => Err(format!("unknown preset '{other}' (expected reference or benchmark)")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("key '{0}' is set more than once")]
    Duplicate(String),
    #[error("{0}")]
    Invalid(String),
    #[error("missing mandatory key '{0}'")]
    Missing(&'static str),
    #[error("{key}: path {path} does not exist")]
    MissingPath { key: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub federation: FederationConfig,
    /// Generator used when no dataset files are given.
    pub suite: SyntheticSuite,
    /// Training dataset files, one per client. Empty means generate.
    pub train_data: Vec<PathBuf>,
    /// Held-out dataset file. `None` means generate.
    pub test_data: Option<PathBuf>,
    /// Epochs between evaluations of the global embedding; the last epoch is
    /// always evaluated. 0 evaluates only the last epoch.
    pub eval_every: usize,
    pub out: PathBuf,
    pub mode: Mode,
    pub endpoint: String,
    pub client_id: usize,
    /// Record wall-clock time in the history; `false` writes 0 so reruns are
    /// byte-identical.
    pub wall_clock: bool,
    pub timeout_secs: u64,
}

impl ExperimentConfig {
    fn with_preset(preset: Preset) -> Self {
        let (federation, suite) = match preset {
            Preset::Reference => (FederationConfig::default(), SyntheticSuite::default()),
            Preset::Benchmark => (fedembed::presets::benchmark_config(), fedembed::presets::benchmark_suite()),
        };
        Self {
            federation,
            suite,
            train_data: Vec::new(),
            test_data: None,
            eval_every: 10,
            out: PathBuf::from("out"),
            mode: Mode::Simulate,
            endpoint: "127.0.0.1:7878".into(),
            client_id: 0,
            wall_clock: true,
            timeout_secs: 60,
        }
    }

    /// Parses configuration text. `overrides` are applied after the file, in
    /// order, with the same key syntax. The master seed must be set by one of
    /// the two.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            })?;
            let k = k.trim().to_string();
            if pairs.iter().any(|(p, _)| *p == k) {
                return Err(ConfigError::Duplicate(k));
            }
            pairs.push((k, v.trim().to_string()));
        }
        pairs.extend(overrides.iter().cloned());

        let preset = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.parse::<Preset>())
            .transpose()
            .map_err(ConfigError::Invalid)?
            .unwrap_or(Preset::Reference);
        let mut cfg = Self::with_preset(preset);
        let mut seeded = false;
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            seeded |= k == "seed";
            cfg.set(k, v)?;
        }
        if !seeded {
            return Err(ConfigError::Missing("seed"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse()
                .map_err(|_| ConfigError::Invalid(format!("invalid value '{v}' for '{key}'")))
        }
        let paths = |v: &str| -> Vec<PathBuf> {
            v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
        };
        match key {
            "train_data" => self.train_data = paths(value),
            "test_data" => self.test_data = paths(value).into_iter().next(),
            "eval_every" => self.eval_every = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "mode" => self.mode = value.parse().map_err(ConfigError::Invalid)?,
            "endpoint" => self.endpoint = value.to_string(),
            "client_id" => self.client_id = num(key, value)?,
            "wall_clock" => self.wall_clock = num(key, value)?,
            "timeout_secs" => self.timeout_secs = num(key, value)?,
            _ => {
                let known = match key.strip_prefix(DATA_PREFIX) {
                    Some(k) => self.suite.set(k, value),
                    None => self.federation.set(key, value),
                }
                .map_err(ConfigError::Invalid)?;
                if !known {
                    return Err(ConfigError::UnknownKey(key.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: fedembed::Error| ConfigError::Invalid(e.to_string());
        self.federation.validate().map_err(invalid)?;
        if self.train_data.is_empty() {
            self.suite.validate().map_err(invalid)?;
            if self.mode == Mode::Simulate && self.suite.train_domains < self.federation.clients {
                return Err(ConfigError::Invalid(format!(
                    "{} clients need at least as many generated domains, got {}",
                    self.federation.clients, self.suite.train_domains
                )));
            }
        } else if self.mode == Mode::Simulate && self.train_data.len() != self.federation.clients {
            return Err(ConfigError::Invalid(format!(
                "{} clients configured but {} training files given",
                self.federation.clients,
                self.train_data.len()
            )));
        }
        if self.mode == Mode::Client && self.client_id >= self.federation.clients {
            return Err(ConfigError::Invalid(format!(
                "client_id {} is out of range for {} clients",
                self.client_id, self.federation.clients
            )));
        }
        if self.mode == Mode::Simulate {
            for p in &self.train_data {
                if !p.exists() {
                    return Err(ConfigError::MissingPath {
                        key: "train_data",
                        path: p.clone(),
                    });
                }
            }
            if let Some(p) = self.test_data.as_ref().filter(|p| !p.exists()) {
                return Err(ConfigError::MissingPath {
                    key: "test_data",
                    path: p.clone(),
                });
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let join = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        for (k, v) in self.federation.entries() {
            line(k, v);
        }
        for (k, v) in self.suite.entries() {
            line(&format!("{DATA_PREFIX}{k}"), v);
        }
        line("train_data", join(&self.train_data));
        line("test_data", self.test_data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        line("eval_every", self.eval_every.to_string());
        line("out", self.out.display().to_string());
        line("mode", self.mode.to_string());
        line("endpoint", self.endpoint.clone());
        line("client_id", self.client_id.to_string());
        line("wall_clock", self.wall_clock.to_string());
        line("timeout_secs", self.timeout_secs.to_string());
        out
    }
}
