//! Run configuration and its layering: defaults, then the config file, then
//! `FSR__`-prefixed environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fewshot_rationale::encoder::EncoderConfig;
use fewshot_rationale::experiment::SyntheticBenchmark;
use fewshot_rationale::selftrain::SelfTrainConfig;
use fewshot_rationale::Dtype;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "FSR__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, shuffling, dropout and synthetic data.
    pub seed: u64,
    pub dtype: Dtype,
    /// Run directory (train) or result directory (ablate).
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    pub encoder: EncoderShape,
    pub self_train: SelfTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dtype: Dtype::F32,
            output: None,
            data: DataConfig::default(),
            encoder: EncoderShape::default(),
            self_train: SelfTrainConfig::default(),
        }
    }
}

/// Where documents come from: a directory written by `fsr prepare`, or a
/// planted-phrase benchmark generated on the fly from the run seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub split: Option<PathBuf>,
    pub synthetic: Option<SyntheticBenchmark>,
    /// Input length limit; defaults to the benchmark's when synthetic.
    pub max_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderShape {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderShape {
    fn default() -> Self {
        let r = EncoderConfig::reference(0, 1);
        EncoderShape {
            hidden_dim: r.hidden_dim,
            num_layers: r.num_layers,
            num_heads: r.num_heads,
            ffn_dim: r.ffn_dim,
            dropout_rate: r.dropout_rate,
        }
    }
}

impl EncoderShape {
    pub fn to_config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout_rate: self.dropout_rate,
            ..EncoderConfig::reference(0, 1)
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.data.split, &self.data.synthetic) {
            (Some(_), Some(_)) => bail!("data.split and data.synthetic are mutually exclusive"),
            (None, None) => bail!("no data source: set data.split (a prepared directory) or data.synthetic"),
            _ => {}
        }
        if self.data.max_len == Some(0) {
            bail!("data.max_len must be positive");
        }
        // zero iterations means teacher-only training
        SelfTrainConfig {
            max_iterations: self.self_train.max_iterations.max(1),
            ..self.self_train.clone()
        }
        .validate()?;
        Ok(())
    }

    pub fn max_len(&self) -> usize {
        self.data
            .max_len
            .or_else(|| self.data.synthetic.as_ref().map(|s| s.max_len))
            .unwrap_or(SyntheticBenchmark::default().max_len)
    }
}

/// Accumulates overrides before deserializing into [`RunConfig`].
#[derive(Debug, Default)]
pub struct Layers {
    table: Table,
}

impl Layers {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        Ok(Layers { table })
    }

    /// Applies every `FSR__SECTION__KEY=value` variable; `__` separates path
    /// segments and names are lowercased.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (key, raw) in vars {
            let path = key[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
            self.set(&path, &raw).with_context(|| format!("environment variable {key}"))?;
        }
        Ok(())
    }

    /// Sets a dotted path from a `key.path=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .with_context(|| format!("expected key=value, got {assignment:?}"))?;
        self.set(path.trim(), raw.trim())
    }

    /// Sets a dotted path; `raw` is read as a TOML value, or as a string if
    /// it does not parse as one.
    pub fn set(&mut self, path: &str, raw: &str) -> Result<()> {
        let value = parse_value(raw);
        self.set_value(path, value)
    }

    pub fn set_value(&mut self, path: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = path.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            bail!("malformed key {path:?}");
        }
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut node = &mut self.table;
        for p in parents {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
            node = match entry {
                Value::Table(t) => t,
                _ => bail!("{path}: {p} is not a section"),
            };
        }
        node.insert(last.to_string(), value);
        Ok(())
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let mut cfg: RunConfig = Value::Table(self.table).try_into().context("invalid configuration")?;
        cfg.self_train.seed = cfg.seed;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
