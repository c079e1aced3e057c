//! Run configuration: defaults, a flat TOML file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protoshot_core::embedset::SyntheticSpec;
use protoshot_core::prototrain::{ProtoInit, ProtoStrategy};
use protoshot_core::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] protoshot_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Everything that determines the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub n_tasks: usize,
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticSpec::STANDARD),
            n_tasks: 1000,
            seed: 0,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_tasks == 0 {
            return Err(ConfigError::Invalid("tasks must be positive".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.n_classes == 0 || s.per_class == 0 || s.dim == 0 {
                return Err(ConfigError::Invalid(format!(
                    "synthetic spec {s}: counts must be positive"
                )));
            }
            if !(s.mean_scale.is_finite() && s.noise_sigma.is_finite() && s.noise_sigma >= 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "synthetic spec {s}: scales must be finite"
                )));
            }
        }
        self.pipeline.validate()?;
        Ok(())
    }
}

/// Flat key/value settings, as found in a config file or on the command line.
/// Unset keys leave the current value alone.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub ways: Option<usize>,
    pub shots: Option<usize>,
    pub queries: Option<usize>,
    pub tasks: Option<usize>,
    pub seed: Option<u64>,
    pub graph_m: Option<usize>,
    pub graph_alpha: Option<f64>,
    pub graph_gamma: Option<u32>,
    pub head_epochs: Option<usize>,
    pub head_lr: Option<f64>,
    pub head_n_aug: Option<usize>,
    pub head_init_std: Option<f64>,
    pub proto_epochs: Option<usize>,
    pub proto_lr: Option<f64>,
    pub proto_lambda: Option<f64>,
    pub proto_delta: Option<f64>,
    pub proto_strategy: Option<ProtoStrategy>,
    pub proto_init: Option<ProtoInit>,
    pub mask: Option<bool>,
    pub mask_mu: Option<f64>,
    pub mask_epsilon: Option<f64>,
    /// Worker threads; 0 uses every core. Does not affect results.
    pub threads: Option<usize>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "`data` and `synthetic` are mutually exclusive".into(),
                ))
            }
            (Some(p), None) => cfg.data = DataSource::File(p.clone()),
            (None, Some(s)) => cfg.data = DataSource::Synthetic(s.parse()?),
            (None, None) => {}
        }
        set!(self.tasks => cfg.n_tasks);
        set!(self.seed => cfg.seed);
        let p = &mut cfg.pipeline;
        set!(self.ways => p.n_ways);
        set!(self.shots => p.k_shots);
        set!(self.queries => p.n_queries);
        set!(self.graph_m => p.graph.m);
        set!(self.graph_alpha => p.graph.alpha);
        set!(self.graph_gamma => p.graph.gamma);
        set!(self.head_epochs => p.head.epochs);
        set!(self.head_lr => p.head.lr);
        set!(self.head_n_aug => p.head.n_aug);
        set!(self.head_init_std => p.head.init_std);
        set!(self.proto_epochs => p.proto.epochs);
        set!(self.proto_lr => p.proto.lr);
        set!(self.proto_lambda => p.proto.weights.lambda);
        set!(self.proto_delta => p.proto.weights.delta);
        set!(self.proto_strategy => p.proto.strategy);
        set!(self.proto_init => p.proto.init);
        set!(self.mask => p.mask.enabled);
        set!(self.mask_mu => p.mask.mu);
        set!(self.mask_epsilon => p.mask.epsilon);
        Ok(())
    }
}

/// Applies `file` then `cli` on top of the defaults and validates the result.
/// Returns the configuration and the thread count.
pub fn resolve(file: Option<&Settings>, cli: &Settings) -> Result<(RunConfig, usize), ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(f) = file {
        f.apply(&mut cfg)?;
    }
    cli.apply(&mut cfg)?;
    cfg.validate()?;
    let threads = cli.threads.or(file.and_then(|f| f.threads)).unwrap_or(0);
    Ok((cfg, threads))
}
