//! Experiment configuration: plain `key = value` lines with `#` comments.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::netcore::{Architecture, InitConfig, SurplusKind};

/// Storage precision of model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be 32 or 64, got {other}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplicative decay applied once per epoch after `decay_start`.
    pub lr_decay: f64,
    pub decay_start: usize,
    pub clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub bptt_cap: usize,
    pub seed: u64,
    pub precision: Precision,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            lr_decay: 0.8,
            decay_start: 6,
            clip: 5.0,
            epochs: 13,
            batch_size: 8,
            bptt_cap: 64,
            seed: 1234,
            precision: Precision::F64,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config(format!("lr_decay must be positive, got {}", self.lr_decay)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if self.batch_size == 0 || self.bptt_cap == 0 {
            return Err(Error::Config("batch_size and bptt_cap must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let decays = epoch.saturating_sub(self.decay_start);
        self.lr * self.lr_decay.powi(decays as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub init: InitConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            layers: 3,
            init: InitConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, vocab_size: usize) -> Architecture {
        Architecture::new(vocab_size, self.embed_dim, self.hidden, self.layers)
    }
}

/// Everything a command-line experiment can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_size: usize,
    /// Fine-tuning learning rate as a fraction of `train.lr`.
    pub finetune_lr_factor: f64,
    pub fixed_n: usize,
    pub surplus_kind: SurplusKind,
    pub max_len: usize,
    pub temperature: Option<f64>,
    pub smoothing: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab_size: 10_000,
            finetune_lr_factor: 0.1,
            fixed_n: 2,
            surplus_kind: SurplusKind::Affine,
            max_len: 30,
            temperature: None,
            smoothing: 1e-8,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {} is not `key = value`: {raw:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "embed_dim" => self.model.embed_dim = parse_num(key, value)?,
            "hidden" => self.model.hidden = parse_num(key, value)?,
            "layers" => self.model.layers = parse_num(key, value)?,
            "init_scale" => self.model.init.scale = parse_num(key, value)?,
            "forget_bias" => self.model.init.forget_bias = parse_num(key, value)?,
            "lr" => self.train.lr = parse_num(key, value)?,
            "lr_decay" => self.train.lr_decay = parse_num(key, value)?,
            "decay_start" => self.train.decay_start = parse_num(key, value)?,
            "clip" => self.train.clip = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "bptt_cap" => self.train.bptt_cap = parse_num(key, value)?,
            "seed" => self.train.seed = parse_num(key, value)?,
            "precision" => self.train.precision = Precision::from_bits(parse_num(key, value)?)?,
            "validation_fraction" => self.train.validation_fraction = parse_num(key, value)?,
            "vocab_size" => self.vocab_size = parse_num(key, value)?,
            "finetune_lr_factor" => self.finetune_lr_factor = parse_num(key, value)?,
            "fixed_n" => self.fixed_n = parse_num(key, value)?,
            "surplus_kind" => self.surplus_kind = value.parse()?,
            "max_len" => self.max_len = parse_num(key, value)?,
            "temperature" => {
                self.temperature = match value {
                    "none" | "greedy" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "smoothing" => self.smoothing = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.model.embed_dim == 0 || self.model.hidden == 0 || self.model.layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if !(self.finetune_lr_factor > 0.0) {
            return Err(Error::Config("finetune_lr_factor must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) {
                return Err(Error::Config("temperature must be positive".into()));
            }
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::Config("smoothing must be positive".into()));
        }
        Ok(())
    }

    /// Training settings for personalisation runs.
    pub fn finetune_train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr * self.finetune_lr_factor,
            ..self.train.clone()
        }
    }

    /// Every key in a fixed order; parsing this yields an equal config.
    pub fn to_canonical_string(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let temperature = self.temperature.map_or("none".to_string(), |t| format!("{t:?}"));
        [
            format!("embed_dim = {}", m.embed_dim),
            format!("hidden = {}", m.hidden),
            format!("layers = {}", m.layers),
            format!("init_scale = {:?}", m.init.scale),
            format!("forget_bias = {:?}", m.init.forget_bias),
            format!("lr = {:?}", t.lr),
            format!("lr_decay = {:?}", t.lr_decay),
            format!("decay_start = {}", t.decay_start),
            format!("clip = {:?}", t.clip),
            format!("epochs = {}", t.epochs),
            format!("batch_size = {}", t.batch_size),
            format!("bptt_cap = {}", t.bptt_cap),
            format!("seed = {}", t.seed),
            format!("precision = {}", t.precision),
            format!("validation_fraction = {:?}", t.validation_fraction),
            format!("vocab_size = {}", self.vocab_size),
            format!("finetune_lr_factor = {:?}", self.finetune_lr_factor),
            format!("fixed_n = {}", self.fixed_n),
            format!("surplus_kind = {}", self.surplus_kind.name()),
            format!("max_len = {}", self.max_len),
            format!("temperature = {temperature}"),
            format!("smoothing = {:?}", self.smoothing),
        ]
        .join("\n")
            + "\n"
    }
}
