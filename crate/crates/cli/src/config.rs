//! Experiment configuration files (TOML, `version = 1`).
//!
//! ```toml
//! version = 1
//! name = "moons"
//! seeds = [0, 1, 2]
//! output_dir = "runs/moons"
//! methods = ["drain", "offline", "last_domain", "inc_finetune"]
//!
//! [dataset]
//! source = "moons"          # or "synth_regression", "csv"
//! train_domains = [0, 1, 2, 3, 4, 5, 6, 7, 8]
//! test_domain = 9
//!
//! [schema]
//! input_dim = 2
//! generated_suffix_len = 3
//! layers = [
//!   { width = 50, activation = "relu" },
//!   { width = 50, activation = "relu" },
//!   { width = 1, activation = "sigmoid" },
//! ]
//!
//! [generator]               # every key optional
//! lstm_depth = 10
//!
//! [train]
//! learning_rate = 1e-4
//! iters_per_domain = 300
//!
//! [baselines]               # every key optional
//! finetune_lr_factor = 0.5
//! ```
//!
//! Relative CSV paths are resolved against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use drain_core::{
    AdamConfig, BaselineConfig, BaselineKind, DataSource, DatasetSpec, GeneratorConfig, NetSchema, TrainConfig,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable that replaces the working directory as the base of
/// `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "DRAIN_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Drain,
    Offline,
    LastDomain,
    IncFinetune,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::Drain, Self::Offline, Self::LastDomain, Self::IncFinetune];

    pub fn name(self) -> &'static str {
        match self {
            Self::Drain => "drain",
            Self::Offline => "offline",
            Self::LastDomain => "last_domain",
            Self::IncFinetune => "inc_finetune",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Drain => None,
            Self::Offline => Some(BaselineKind::Offline),
            Self::LastDomain => Some(BaselineKind::LastDomain),
            Self::IncFinetune => Some(BaselineKind::IncFinetune),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `[generator]` table; the parameter count comes from the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub latent_dim: usize,
    pub lstm_depth: usize,
    pub lambda: f64,
    pub tau: usize,
    pub init_hidden: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::new(0);
        Self {
            latent_dim: g.latent_dim,
            lstm_depth: g.lstm_depth,
            lambda: g.lambda,
            tau: g.tau,
            init_hidden: g.init_hidden,
            encoder_hidden: g.encoder_hidden,
            decoder_hidden: g.decoder_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub iters_per_domain: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub dataset: DatasetSpec,
    pub schema: NetSchema,
    #[serde(default)]
    pub generator: GeneratorSection,
    pub train: TrainSection,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method {m} listed twice"));
            }
        }
        self.dataset.validate()?;
        self.schema.validate()?;
        self.generator_config().validate()?;
        self.train_config(self.seeds[0]).validate()?;
        self.baselines.validate()?;
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            latent_dim: g.latent_dim,
            lstm_depth: g.lstm_depth,
            lambda: g.lambda,
            tau: g.tau,
            target_param_count: self.schema.param_count(),
            init_hidden: g.init_hidden,
            encoder_hidden: g.encoder_hidden,
            decoder_hidden: g.decoder_hidden,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            iters_per_domain: self.train.iters_per_domain,
            adam: self.train.adam,
            task: self.dataset.task(),
            seed,
        }
    }

    /// `output_dir` under `$DRAIN_OUTPUT_ROOT` when set (unless absolute).
    pub fn output_base(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_base().join(format!("seed-{seed}"))
    }
}

/// A parsed config plus the hash of the exact bytes it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_text(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut config = ExperimentConfig::parse(text)?;
        if let DataSource::Csv { path, .. } = &mut config.dataset.source {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        Ok(Self {
            config,
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_text(&text, base).map_err(|e| match e {
            CliError::Config(msg) => CliError::ConfigFile {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }
}
