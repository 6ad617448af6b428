//! Run configuration: a line-based `key = value` file with `#` comments,
//! overridable by `--set key=value` flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hopqa::attention::{C2qSource, FusionVariant};
use hopqa::data::batch::BatchOptions;
use hopqa::model::ModelConfig;
use hopqa::train::{OptimConfig, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    HotpotQa,
    Squad,
    Synth,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hotpotqa" => Ok(DatasetKind::HotpotQa),
            "squad" => Ok(DatasetKind::Squad),
            "synth" => Ok(DatasetKind::Synth),
            other => Err(format!(
                "unknown dataset {other:?} (expected hotpotqa, squad or synth)"
            )),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::HotpotQa => "hotpotqa",
            DatasetKind::Squad => "squad",
            DatasetKind::Synth => "synth",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub train_path: Option<PathBuf>,
    /// Without a dev file the training set doubles as the dev set.
    pub dev_path: Option<PathBuf>,
    pub glove_path: Option<PathBuf>,
    pub word_dim: usize,
    pub synth_n: usize,
    pub synth_seed: u64,
    pub min_freq: usize,
    pub max_context: usize,
    pub max_word_len: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::HotpotQa,
            train_path: None,
            dev_path: None,
            glove_path: None,
            word_dim: hopqa::data::glove::GLOVE_DIM,
            synth_n: 64,
            synth_seed: 0,
            min_freq: 1,
            max_context: hopqa::data::batch::DEFAULT_MAX_CONTEXT,
            max_word_len: 16,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    /// 1-based line in the config file; `None` for `--set` overrides.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.file {
            write!(f, "{}: ", p.display())?;
        }
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| format!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

fn parse_opt_f64(key: &str, v: &str) -> Result<Option<f64>, String> {
    match v {
        "none" | "off" => Ok(None),
        _ => parse(key, v).map(Some),
    }
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".into(), |p| p.display().to_string())
}

fn show_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| format!("{v:?}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = v.parse()?,
            "train_path" => self.train_path = parse_path(v),
            "dev_path" => self.dev_path = parse_path(v),
            "glove_path" => self.glove_path = parse_path(v),
            "word_dim" => self.word_dim = parse(key, v)?,
            "synth_n" => self.synth_n = parse(key, v)?,
            "synth_seed" => self.synth_seed = parse(key, v)?,
            "min_freq" => self.min_freq = parse(key, v)?,
            "max_context" => self.max_context = parse(key, v)?,
            "max_word_len" => self.max_word_len = parse(key, v)?,
            "d" => m.d = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "use_cgde" => m.use_cgde = parse_bool(key, v)?,
            "use_fgin" => m.use_fgin = parse_bool(key, v)?,
            "lambda_a" => m.lambda_a = parse(key, v)?,
            "lambda_s" => m.lambda_s = parse(key, v)?,
            "c2q_source" => {
                m.c2q_source = match v {
                    "decomposed" => C2qSource::Decomposed,
                    "original" => C2qSource::Original,
                    _ => {
                        return Err(format!(
                            "c2q_source: expected decomposed or original, got {v:?}"
                        ))
                    }
                }
            }
            "fusion" => {
                m.fusion = match v {
                    "interaction" => FusionVariant::Interaction,
                    "bidaf" => FusionVariant::Bidaf,
                    _ => return Err(format!("fusion: expected interaction or bidaf, got {v:?}")),
                }
            }
            "max_span_len" => m.max_span_len = parse(key, v)?,
            "sup_threshold" => m.sup_threshold = parse(key, v)?,
            "char_dim" => m.char_dim = parse(key, v)?,
            "char_filters" => m.char_filters = parse(key, v)?,
            "char_kernel" => m.char_kernel = parse(key, v)?,
            "highway_layers" => m.highway_layers = parse(key, v)?,
            "optimizer" => {
                let kind: OptimizerKind = v.parse()?;
                if kind != t.optimizer.kind {
                    let keep = (t.optimizer.lr, t.optimizer.clip_norm);
                    t.optimizer = match kind {
                        OptimizerKind::Adam => OptimConfig::adam(keep.0),
                        OptimizerKind::AdaDelta => OptimConfig::adadelta(keep.0),
                    };
                    t.optimizer.clip_norm = keep.1;
                }
            }
            "lr" => t.optimizer.lr = parse(key, v)?,
            "beta1" => t.optimizer.beta1 = parse(key, v)?,
            "beta2" => t.optimizer.beta2 = parse(key, v)?,
            "rho" => t.optimizer.rho = parse(key, v)?,
            "eps" => t.optimizer.eps = parse(key, v)?,
            "clip_norm" => t.optimizer.clip_norm = parse_opt_f64(key, v)?,
            "ema_decay" => t.ema_decay = parse_opt_f64(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order. Feeding these
    /// lines back through [`RunConfig::parse`] reproduces the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let o = &t.optimizer;
        vec![
            ("dataset", self.dataset.to_string()),
            ("train_path", show_path(&self.train_path)),
            ("dev_path", show_path(&self.dev_path)),
            ("glove_path", show_path(&self.glove_path)),
            ("word_dim", self.word_dim.to_string()),
            ("synth_n", self.synth_n.to_string()),
            ("synth_seed", self.synth_seed.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("max_context", self.max_context.to_string()),
            ("max_word_len", self.max_word_len.to_string()),
            ("d", m.d.to_string()),
            ("dropout", format!("{:?}", m.dropout)),
            ("use_cgde", m.use_cgde.to_string()),
            ("use_fgin", m.use_fgin.to_string()),
            ("lambda_a", format!("{:?}", m.lambda_a)),
            ("lambda_s", format!("{:?}", m.lambda_s)),
            (
                "c2q_source",
                match m.c2q_source {
                    C2qSource::Decomposed => "decomposed",
                    C2qSource::Original => "original",
                }
                .into(),
            ),
            (
                "fusion",
                match m.fusion {
                    FusionVariant::Interaction => "interaction",
                    FusionVariant::Bidaf => "bidaf",
                }
                .into(),
            ),
            ("max_span_len", m.max_span_len.to_string()),
            ("sup_threshold", format!("{:?}", m.sup_threshold)),
            ("char_dim", m.char_dim.to_string()),
            ("char_filters", m.char_filters.to_string()),
            ("char_kernel", m.char_kernel.to_string()),
            ("highway_layers", m.highway_layers.to_string()),
            (
                "optimizer",
                match o.kind {
                    OptimizerKind::Adam => "adam",
                    OptimizerKind::AdaDelta => "adadelta",
                }
                .into(),
            ),
            ("lr", format!("{:?}", o.lr)),
            ("beta1", format!("{:?}", o.beta1)),
            ("beta2", format!("{:?}", o.beta2)),
            ("rho", format!("{:?}", o.rho)),
            ("eps", format!("{:?}", o.eps)),
            ("clip_norm", show_opt(o.clip_norm)),
            ("ema_decay", show_opt(t.ema_decay)),
            ("batch_size", t.batch_size.to_string()),
            ("seed", t.seed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("patience", t.patience.to_string()),
        ]
    }

    pub fn render(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn parse(mut self, text: &str) -> Result<Self, ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| ConfigError {
                file: None,
                line: Some(i + 1),
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(self)
    }

    /// `key=value` overrides as passed to `--set`.
    pub fn apply_overrides(mut self, overrides: &[String]) -> Result<Self, ConfigError> {
        for o in overrides {
            let err = |message: String| ConfigError {
                file: None,
                line: None,
                message,
            };
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| err(format!("--set expects key=value, got {o:?}")))?;
            self.set(k.trim(), v.trim())
                .map_err(|m| err(format!("--set {m}")))?;
        }
        Ok(self)
    }

    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions {
            batch_size: self.train.batch_size,
            max_context: self.max_context,
            max_word_len: self.max_word_len,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.word_dim == 0 || self.max_context == 0 || self.max_word_len == 0 {
            return Err("word_dim, max_context and max_word_len must be positive".into());
        }
        if self.dataset != DatasetKind::Synth
            && self.train_path.is_none()
            && self.dev_path.is_none()
        {
            return Err(format!(
                "dataset {} needs train_path or dev_path",
                self.dataset
            ));
        }
        if self.dataset == DatasetKind::Synth && self.synth_n == 0 {
            return Err("synth_n must be positive".into());
        }
        Ok(())
    }
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let base = RunConfig::default();
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| hopqa::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            base.parse(&text).map_err(|e| ConfigError {
                file: Some(p.to_path_buf()),
                ..e
            })?
        }
        None => base,
    };
    Ok(cfg.apply_overrides(overrides)?)
}
