//! Flat `key = value` run configuration with `#` comments.
//!
//! Every key is optional; unknown keys are rejected. Defaults follow the
//! published training protocol where it gives a value.

use std::fs;
use std::path::Path;

use cabp_core::dsp::FilterSpec;
use cabp_core::model::{BlockSpec, ModelConfig};
use cabp_core::train::TrainConfig;

use crate::checkpoint::Preprocess;
use crate::error::{AppError, AppResult};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("lr", "0.001", "Adam learning rate"),
    ("batch_size", "32", "subjects per batch"),
    ("epochs", "100", "training epochs"),
    ("lambda2", "1.0", "gradient reversal strength (adversarial weight)"),
    ("seed", "0", "master seed; every random stream is derived from it"),
    ("enable_cls", "true", "train the hypertension classifier head"),
    ("enable_adv", "true", "train the subject discriminator head"),
    ("channels", "660,730,850,940", "wavelengths fed to the model"),
    ("feature_dim", "64", "per-channel feature size"),
    ("conv_kernels", "7,5,5,3", "kernel size of each conv block"),
    ("conv_channels", "16,32,64,64", "output channels of each conv block"),
    ("conv_pools", "2,2,2,2", "max-pool size of each conv block"),
    ("attention_dim", "32", "hidden size of the attention scorer"),
    ("reg_hidden", "32", "regressor hidden width"),
    ("cls_hidden", "32", "classifier hidden width"),
    ("disc_hidden", "64", "discriminator hidden width"),
    ("band_low_hz", "0.5", "band-pass lower edge"),
    ("band_high_hz", "8", "band-pass upper edge"),
    ("filter_order", "4", "order of each Butterworth cascade (even)"),
    ("window_s", "30", "centred analysis window, seconds"),
    ("test_fraction", "0.2", "held-out subject fraction"),
    ("folds", "5", "cross-validation folds"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub preprocess: Preprocess,
    pub test_fraction: f64,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            preprocess: Preprocess::default(),
            test_fraction: 0.2,
            folds: 5,
        };
        for (key, value, _) in KEYS {
            cfg.set(key, value).expect("defaults parse");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> AppResult<T> {
    value
        .parse()
        .map_err(|_| AppError::usage(format!("config key {key}: cannot parse {value:?}")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> AppResult<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn set_blocks(blocks: &mut Vec<BlockSpec>, values: Vec<usize>, field: fn(&mut BlockSpec) -> &mut usize) {
    blocks.resize(values.len(), BlockSpec { kernel: 3, channels: 16, pool: 2 });
    for (b, v) in blocks.iter_mut().zip(values) {
        *field(b) = v;
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        let t = &mut self.train;
        let m = &mut self.model;
        let f = &mut self.preprocess.filter;
        match key {
            "lr" => t.lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lambda2" => t.lambda2 = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "enable_cls" => {
                t.enable_cls = parse(key, value)?;
                m.enable_cls = t.enable_cls;
            }
            "enable_adv" => {
                t.enable_adv = parse(key, value)?;
                m.enable_adv = t.enable_adv;
            }
            "channels" => m.channels_used = list(key, value)?,
            "feature_dim" => m.feature_dim = parse(key, value)?,
            "conv_kernels" => set_blocks(&mut m.blocks, list(key, value)?, |b| &mut b.kernel),
            "conv_channels" => set_blocks(&mut m.blocks, list(key, value)?, |b| &mut b.channels),
            "conv_pools" => set_blocks(&mut m.blocks, list(key, value)?, |b| &mut b.pool),
            "attention_dim" => m.attention_dim = parse(key, value)?,
            "reg_hidden" => m.reg_hidden = parse(key, value)?,
            "cls_hidden" => m.cls_hidden = parse(key, value)?,
            "disc_hidden" => m.disc_hidden = parse(key, value)?,
            "band_low_hz" => f.low_hz = parse(key, value)?,
            "band_high_hz" => f.high_hz = parse(key, value)?,
            "filter_order" => f.order = parse(key, value)?,
            "window_s" => self.preprocess.window_s = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            _ => return Err(AppError::usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> AppResult<Self> {
        let mut cfg = Self::default();
        let mut conv_lens = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::usage(format!("config line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)?;
            if key.starts_with("conv_") {
                conv_lens.push((key.to_string(), value.split(',').count()));
            }
        }
        if let Some((_, len)) = conv_lens.first() {
            if conv_lens.iter().any(|(_, l)| l != len) {
                return Err(AppError::usage("conv_kernels, conv_channels and conv_pools must have equal lengths"));
            }
            let mut keys: Vec<&str> = conv_lens.iter().map(|(k, _)| k.as_str()).collect();
            keys.sort_unstable();
            keys.dedup();
            if *len != ModelConfig::default().blocks.len() && keys.len() < 3 {
                return Err(AppError::usage("changing the number of conv blocks requires conv_kernels, conv_channels and conv_pools"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> AppResult<()> {
        let usage = |e: cabp_core::Error| AppError::usage(e.to_string());
        self.train.validate().map_err(usage)?;
        let mut m = self.model.clone();
        m.num_subjects = m.num_subjects.max(2);
        m.validate().map_err(usage)?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(AppError::usage("test_fraction must lie in (0, 1)"));
        }
        if self.folds < 2 {
            return Err(AppError::usage("folds must be at least 2"));
        }
        if self.preprocess.filter.order == 0 || !self.preprocess.filter.order.is_multiple_of(2) {
            return Err(AppError::usage("filter_order must be a positive even number"));
        }
        Ok(())
    }

    pub fn filter(&self) -> FilterSpec {
        self.preprocess.filter
    }

    /// Key reference for `--help`.
    pub fn help_text() -> String {
        let mut s = String::from("Config keys (file format: key = value, # comments):\n");
        for (key, default, what) in KEYS {
            s.push_str(&format!("  {key:<14} {default:<16} {what}\n"));
        }
        s
    }
}
