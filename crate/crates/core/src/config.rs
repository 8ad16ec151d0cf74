//! Run configuration as a plain `key = value` file.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a default,
//! so an empty file is a valid configuration. [`RunConfig::to_text`] writes
//! every key in a fixed order and is the input to the configuration hash.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::adapters::{format_positions, parse_positions, Components, InsertionForm, Mixing};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::regime::RegimeKind;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    /// Fusion encoder and head.
    pub lr_vl: f64,
    /// Adapters and LoRA factors.
    pub lr_adapter: f64,
    /// Encoder weights (full fine-tuning only).
    pub lr_encoder: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Fraction of the step budget after which learning rates drop.
    pub decay_at: f64,
    pub decay_factor: f64,
    /// Steps of linear warmup from zero.
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Explicit insertion form; `None` lets the regime decide.
    pub form: Option<InsertionForm>,
    /// Keep this many evenly spaced adapter pairs; `None` keeps all.
    pub density: Option<usize>,
    pub lambda: f64,
    pub beta: f64,
    pub threshold: f64,
    pub optim: OptimConfig,
    pub data_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub eval_every: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(RegimeKind::SideM2ist),
            form: None,
            density: None,
            lambda: 1.0,
            beta: 1.0,
            threshold: 0.5,
            optim: OptimConfig {
                lr_vl: 1e-4,
                lr_adapter: 1e-5,
                lr_encoder: 1e-5,
                weight_decay: 1e-4,
                steps: 300,
                batch_size: 16,
                decay_at: 2.0 / 3.0,
                decay_factor: 0.1,
                warmup: 0,
            },
            data_seed: 7,
            n_train: 1000,
            n_val: 500,
            eval_every: 50,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
}

fn opt_to_text<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or(none.to_string(), T::to_string)
}

impl RunConfig {
    /// Fixed-budget efficacy benchmark: defaults with 1000 steps, learning
    /// rate 1e-3 for the fusion/head and adapter groups and a 50-step warmup.
    /// `seed` drives the trainable initialisation and the data; the frozen
    /// encoders are shared across seeds.
    pub fn benchmark(regime: RegimeKind, seed: u64) -> Self {
        let mut c = Self::default();
        c.model.regime = regime;
        c.model.trainable_seed = seed;
        c.data_seed = seed;
        c.optim.lr_vl = 1e-3;
        c.optim.lr_adapter = 1e-3;
        c.optim.warmup = 50;
        c.optim.steps = 1000;
        c.eval_every = 1000;
        c
    }

    pub fn regime(&self) -> RegimeKind {
        self.model.regime
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let o = &mut self.optim;
        match key {
            "regime" => m.regime = v.parse()?,
            "seed.frozen" => {
                let s = num(key, v)?;
                m.vision.seed = s;
                m.language.seed = s;
            }
            "seed.trainable" => m.trainable_seed = num(key, v)?,
            "seed.data" => self.data_seed = num(key, v)?,
            "image.size" => {
                let s = num(key, v)?;
                m.geometry.height = s;
                m.geometry.width = s;
            }
            "image.patch" => m.geometry.patch = num(key, v)?,
            "vision.layers" => m.vision.n_layers = num(key, v)?,
            "vision.dim" => m.vision.channel_dim = num(key, v)?,
            "vision.heads" => m.vision.n_heads = num(key, v)?,
            "vision.ffn" => m.vision.ffn_dim = num(key, v)?,
            "language.layers" => m.language.n_layers = num(key, v)?,
            "language.dim" => m.language.channel_dim = num(key, v)?,
            "language.heads" => m.language.n_heads = num(key, v)?,
            "language.ffn" => m.language.ffn_dim = num(key, v)?,
            "vl.dim" => m.vl.c_p = num(key, v)?,
            "vl.layers" => m.vl.n_layers = num(key, v)?,
            "vl.heads" => m.vl.n_heads = num(key, v)?,
            "vl.ffn" => m.vl.ffn_dim = num(key, v)?,
            "head.hidden" => m.vl.head_hidden = num(key, v)?,
            "adapter.c_d" => m.adapter.c_d = num(key, v)?,
            "adapter.c_i" => m.adapter.c_i = num(key, v)?,
            "adapter.s" => m.adapter.s = num(key, v)?,
            "adapter.form" => self.form = if v == "auto" { None } else { Some(v.parse()?) },
            "adapter.mixing" => m.adapter.mixing = v.parse::<Mixing>()?,
            "adapter.components" => m.adapter.components = v.parse::<Components>()?,
            "adapter.vision_positions" => m.adapter.vision_positions = parse_positions(v)?,
            "adapter.language_positions" => m.adapter.language_positions = parse_positions(v)?,
            "adapter.density" => self.density = if v == "all" { None } else { Some(num(key, v)?) },
            "lora.rank" => m.lora.rank = num(key, v)?,
            "lora.alpha" => m.lora.alpha = num(key, v)?,
            "loss.lambda" => self.lambda = num(key, v)?,
            "loss.beta" => self.beta = num(key, v)?,
            "eval.threshold" => self.threshold = num(key, v)?,
            "eval.every" => self.eval_every = num(key, v)?,
            "lr.vl" => o.lr_vl = num(key, v)?,
            "lr.adapter" => o.lr_adapter = num(key, v)?,
            "lr.encoder" => o.lr_encoder = num(key, v)?,
            "lr.decay_at" => o.decay_at = num(key, v)?,
            "lr.decay_factor" => o.decay_factor = num(key, v)?,
            "lr.warmup" => o.warmup = num(key, v)?,
            "optim.weight_decay" => o.weight_decay = num(key, v)?,
            "train.steps" => o.steps = num(key, v)?,
            "train.batch_size" => o.batch_size = num(key, v)?,
            "data.train" => self.n_train = num(key, v)?,
            "data.val" => self.n_val = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let o = &self.optim;
        let a = &m.adapter;
        vec![
            ("regime", m.regime.to_string()),
            ("seed.frozen", m.vision.seed.to_string()),
            ("seed.trainable", m.trainable_seed.to_string()),
            ("seed.data", self.data_seed.to_string()),
            ("image.size", m.geometry.height.to_string()),
            ("image.patch", m.geometry.patch.to_string()),
            ("vision.layers", m.vision.n_layers.to_string()),
            ("vision.dim", m.vision.channel_dim.to_string()),
            ("vision.heads", m.vision.n_heads.to_string()),
            ("vision.ffn", m.vision.ffn_dim.to_string()),
            ("language.layers", m.language.n_layers.to_string()),
            ("language.dim", m.language.channel_dim.to_string()),
            ("language.heads", m.language.n_heads.to_string()),
            ("language.ffn", m.language.ffn_dim.to_string()),
            ("vl.dim", m.vl.c_p.to_string()),
            ("vl.layers", m.vl.n_layers.to_string()),
            ("vl.heads", m.vl.n_heads.to_string()),
            ("vl.ffn", m.vl.ffn_dim.to_string()),
            ("head.hidden", m.vl.head_hidden.to_string()),
            ("adapter.c_d", a.c_d.to_string()),
            ("adapter.c_i", a.c_i.to_string()),
            ("adapter.s", a.s.to_string()),
            ("adapter.form", opt_to_text(&self.form, "auto")),
            ("adapter.mixing", a.mixing.to_string()),
            ("adapter.components", a.components.to_string()),
            ("adapter.vision_positions", format_positions(&a.vision_positions)),
            ("adapter.language_positions", format_positions(&a.language_positions)),
            ("adapter.density", opt_to_text(&self.density, "all")),
            ("lora.rank", m.lora.rank.to_string()),
            ("lora.alpha", m.lora.alpha.to_string()),
            ("loss.lambda", self.lambda.to_string()),
            ("loss.beta", self.beta.to_string()),
            ("eval.threshold", self.threshold.to_string()),
            ("eval.every", self.eval_every.to_string()),
            ("lr.vl", o.lr_vl.to_string()),
            ("lr.adapter", o.lr_adapter.to_string()),
            ("lr.encoder", o.lr_encoder.to_string()),
            ("lr.decay_at", o.decay_at.to_string()),
            ("lr.decay_factor", o.decay_factor.to_string()),
            ("lr.warmup", o.warmup.to_string()),
            ("optim.weight_decay", o.weight_decay.to_string()),
            ("train.steps", o.steps.to_string()),
            ("train.batch_size", o.batch_size.to_string()),
            ("data.train", self.n_train.to_string()),
            ("data.val", self.n_val.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Parses a configuration file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o.as_ref())))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// The model configuration with regime form and density applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        if let Some(f) = self.model.regime.resolve_form(self.form)? {
            m.adapter.form = f;
        }
        if let Some(k) = self.density {
            m.adapter = m.adapter.with_density(k)?;
        }
        Ok(m)
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        let o = &self.optim;
        let positive = [
            ("lr.vl", o.lr_vl),
            ("lr.adapter", o.lr_adapter),
            ("lr.encoder", o.lr_encoder),
            ("loss.beta", self.beta),
            ("lr.decay_factor", o.decay_factor),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("`loss.lambda` must be >= 0, got {}", self.lambda)));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::Config("`optim.weight_decay` must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&o.decay_at) {
            return Err(Error::Config("`lr.decay_at` must lie in [0, 1]".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("`eval.threshold` must lie in (0, 1)".into()));
        }
        if o.batch_size == 0 || self.n_train == 0 || self.n_val == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch size, dataset sizes and eval interval must be positive".into(),
            ));
        }
        if o.batch_size > self.n_train {
            return Err(Error::Config(format!(
                "batch size {} exceeds {} training samples",
                o.batch_size, self.n_train
            )));
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(s) => s,
        e => e.to_string(),
    }
}
