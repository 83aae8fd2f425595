use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Training hyperparameters. Defaults are the reference 7B-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    /// Tokens per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_warmup_steps: usize,
    pub lr_decay_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Coefficient of the L1 sparsity penalty.
    pub lambda: f64,
    /// Cadence, in steps, of feature-activity log lines.
    pub feature_sampling_window: usize,
    pub dead_feature_window: usize,
    pub dead_feature_threshold: f64,
    /// The shuffling buffer holds `buffer_batches_num * batch_size` tokens.
    pub buffer_batches_num: usize,
    pub seed: u64,
    /// `n = expansion_factor * m`.
    pub expansion_factor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 30000,
            batch_size: 4096,
            lr: 5e-5,
            lr_warmup_steps: 1500,
            lr_decay_steps: 6000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda: 5.0,
            feature_sampling_window: 1000,
            dead_feature_window: 1000,
            dead_feature_threshold: 1e-4,
            buffer_batches_num: 32,
            seed: 42,
            expansion_factor: 16,
        }
    }
}

macro_rules! config_fields {
    ($mac:ident) => {
        $mac!(
            total_steps,
            batch_size,
            lr,
            lr_warmup_steps,
            lr_decay_steps,
            adam_beta1,
            adam_beta2,
            adam_eps,
            lambda,
            feature_sampling_window,
            dead_feature_window,
            dead_feature_threshold,
            buffer_batches_num,
            seed,
            expansion_factor
        )
    };
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("total_steps", self.total_steps),
            ("batch_size", self.batch_size),
            ("feature_sampling_window", self.feature_sampling_window),
            ("dead_feature_window", self.dead_feature_window),
            ("buffer_batches_num", self.buffer_batches_num),
            ("expansion_factor", self.expansion_factor),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.lr_warmup_steps + self.lr_decay_steps > self.total_steps {
            return bad(format!(
                "lr_warmup_steps + lr_decay_steps = {} exceeds total_steps {}",
                self.lr_warmup_steps + self.lr_decay_steps,
                self.total_steps
            ));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} not in [0, 1)"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if self.dead_feature_threshold.is_nan() || self.dead_feature_threshold < 0.0 {
            return bad("dead_feature_threshold must be >= 0".into());
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse value {value:?} for {key}")))
        }
        macro_rules! assign {
            ($($field:ident),*) => {
                match key {
                    $(stringify!($field) => self.$field = parse(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
            };
        }
        config_fields!(assign);
        Ok(())
    }

    /// Parses a key-value document on top of the defaults. Blank lines and
    /// `#` comments are ignored; `key = value` and `key: value` are accepted.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| {
                    Error::Config(format!("line {}: expected key = value", lineno + 1))
                })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($($field:ident),*) => {
                $( writeln!(out, "{} = {}", stringify!($field), self.$field).unwrap(); )*
            };
        }
        config_fields!(emit);
        out
    }
}
