//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be one of the
//! [`RunConfig`] field names; relative paths resolve against the config file's
//! directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{config_err, Error, Result};

use super::partition::PartitionSpec;
use super::quarter::QuarterRange;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One CSV with a leading `panel_id` column.
    Single,
    /// One CSV per panel inside a directory.
    Directory,
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Single => "single",
            CorpusFormat::Directory => "directory",
        })
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(CorpusFormat::Single),
            "directory" => Ok(CorpusFormat::Directory),
            other => Err(config_err!("corpus_format must be single or directory, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variables: Vec<String>,
    pub real_data: PathBuf,
    pub posterior_draws: PathBuf,
    pub output_dir: PathBuf,
    pub estimation_range: QuarterRange,
    pub training_range: QuarterRange,
    pub test_range: QuarterRange,

    /// K
    pub n_vars: usize,
    /// J
    pub n_bins: usize,
    /// E
    pub embed_dim: usize,
    /// L
    pub n_layers: usize,
    /// H
    pub n_heads: usize,
    /// T
    pub context_len: usize,
    pub mlp_factor: usize,

    /// B
    pub batch_size: usize,
    /// α, the real-data share of every batch.
    pub alpha: f64,

    /// M
    pub n_trajectories: usize,
    /// S
    pub traj_len: usize,
    pub burn_in: usize,
    pub corpus_format: CorpusFormat,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub patience: usize,
    pub validation_fraction: f64,

    pub seed: u64,
}

pub const DEFAULT_VARIABLES: [&str; 7] = [
    "output_growth",
    "consumption_growth",
    "investment_growth",
    "wage_growth",
    "hours",
    "inflation",
    "interest_rate",
];

impl Default for RunConfig {
    fn default() -> Self {
        let part = PartitionSpec::default();
        RunConfig {
            variables: DEFAULT_VARIABLES.iter().map(|s| s.to_string()).collect(),
            real_data: PathBuf::from("data/real.csv"),
            posterior_draws: PathBuf::from("data/posterior_draws.txt"),
            output_dir: PathBuf::from("out"),
            estimation_range: part.estimation,
            training_range: part.training,
            test_range: part.test,
            n_vars: 7,
            n_bins: 10,
            embed_dim: 56,
            n_layers: 2,
            n_heads: 2,
            context_len: 4,
            mlp_factor: 2,
            batch_size: 256,
            alpha: 0.1,
            n_trajectories: 10_000,
            traj_len: 1_000,
            burn_in: 100,
            corpus_format: CorpusFormat::Single,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: 20_000,
            eval_interval: 250,
            patience: 8,
            validation_fraction: 0.15,
            seed: 20_251_016,
        }
    }
}

pub const CONFIG_KEYS: [&str; 29] = [
    "variables",
    "real_data",
    "posterior_draws",
    "output_dir",
    "estimation_range",
    "training_range",
    "test_range",
    "n_vars",
    "n_bins",
    "embed_dim",
    "n_layers",
    "n_heads",
    "context_len",
    "mlp_factor",
    "batch_size",
    "alpha",
    "n_trajectories",
    "traj_len",
    "burn_in",
    "corpus_format",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "max_steps",
    "eval_interval",
    "patience",
    "validation_fraction",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err!("invalid value {value:?} for key {key:?}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_text(&text, base)
    }

    /// Parses config text over the defaults, then validates.
    pub fn parse_text(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected key = value", lineno + 1))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(config_err!("line {}: duplicate key {key:?}", lineno + 1));
            }
            seen.push(key);
            cfg.set(key, value.trim())?;
        }
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its textual value. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variables" => {
                self.variables = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "real_data" => self.real_data = PathBuf::from(value),
            "posterior_draws" => self.posterior_draws = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "estimation_range" => self.estimation_range = parse(key, value)?,
            "training_range" => self.training_range = parse(key, value)?,
            "test_range" => self.test_range = parse(key, value)?,
            "n_vars" => self.n_vars = parse(key, value)?,
            "n_bins" => self.n_bins = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "context_len" => self.context_len = parse(key, value)?,
            "mlp_factor" => self.mlp_factor = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "n_trajectories" => self.n_trajectories = parse(key, value)?,
            "traj_len" => self.traj_len = parse(key, value)?,
            "burn_in" => self.burn_in = parse(key, value)?,
            "corpus_format" => self.corpus_format = value.parse()?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(config_err!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies `key=value` overrides and re-validates.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)], base_dir: &Path) -> Result<()> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        self.resolve_paths(base_dir);
        self.validate()
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.real_data, &mut self.posterior_draws, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn per_var_dim(&self) -> usize {
        self.embed_dim / self.n_vars.max(1)
    }

    pub fn partition(&self) -> PartitionSpec {
        PartitionSpec {
            estimation: self.estimation_range,
            training: self.training_range,
            test: self.test_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 {
            return Err(config_err!("n_vars must be at least 1"));
        }
        if self.variables.len() != self.n_vars {
            return Err(config_err!(
                "{} variable names listed but n_vars = {}",
                self.variables.len(),
                self.n_vars
            ));
        }
        if self.embed_dim == 0 || self.embed_dim % self.n_vars != 0 {
            return Err(config_err!(
                "embed_dim {} must be a positive multiple of n_vars {}",
                self.embed_dim,
                self.n_vars
            ));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(config_err!(
                "embed_dim {} must be divisible by n_heads {}",
                self.embed_dim,
                self.n_heads
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.n_bins < 2 {
            return Err(config_err!("n_bins must be at least 2"));
        }
        if self.n_bins > u16::MAX as usize {
            return Err(config_err!("n_bins must fit in 16 bits"));
        }
        if self.context_len == 0 {
            return Err(config_err!("context_len must be at least 1"));
        }
        if self.mlp_factor == 0 {
            return Err(config_err!("mlp_factor must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if self.n_trajectories == 0 {
            return Err(config_err!("n_trajectories must be at least 1"));
        }
        if self.traj_len < self.context_len + 1 {
            return Err(config_err!(
                "traj_len {} must be at least context_len + 1 = {}",
                self.traj_len,
                self.context_len + 1
            ));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(config_err!("validation_fraction must lie in [0, 0.5]"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err!("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("beta1 and beta2 must lie in [0, 1)"));
        }
        if self.eval_interval == 0 {
            return Err(config_err!("eval_interval must be at least 1"));
        }
        self.partition()
            .validate()
            .map_err(|e| config_err!("partition: {e}"))
    }

    /// Canonical `key = value` rendering in [`CONFIG_KEYS`] order.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match key {
                "variables" => self.variables.join(","),
                "real_data" => self.real_data.display().to_string(),
                "posterior_draws" => self.posterior_draws.display().to_string(),
                "output_dir" => self.output_dir.display().to_string(),
                "estimation_range" => self.estimation_range.to_string(),
                "training_range" => self.training_range.to_string(),
                "test_range" => self.test_range.to_string(),
                "n_vars" => self.n_vars.to_string(),
                "n_bins" => self.n_bins.to_string(),
                "embed_dim" => self.embed_dim.to_string(),
                "n_layers" => self.n_layers.to_string(),
                "n_heads" => self.n_heads.to_string(),
                "context_len" => self.context_len.to_string(),
                "mlp_factor" => self.mlp_factor.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "alpha" => self.alpha.to_string(),
                "n_trajectories" => self.n_trajectories.to_string(),
                "traj_len" => self.traj_len.to_string(),
                "burn_in" => self.burn_in.to_string(),
                "corpus_format" => self.corpus_format.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "beta1" => self.beta1.to_string(),
                "beta2" => self.beta2.to_string(),
                "adam_eps" => self.adam_eps.to_string(),
                "max_steps" => self.max_steps.to_string(),
                "eval_interval" => self.eval_interval.to_string(),
                "patience" => self.patience.to_string(),
                "validation_fraction" => self.validation_fraction.to_string(),
                "seed" => self.seed.to_string(),
                _ => unreachable!(),
            };
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }
}
