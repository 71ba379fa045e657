//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::Layout;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::nn::config::{parse_filters, ConvKind};
use crate::nn::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub dataset_layout: Layout,
    pub dataset_size: (usize, usize),
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub val_fraction: f64,
    pub loss: LossKind,
    pub patience: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            dataset_root: None,
            dataset_layout: Layout::Drive,
            dataset_size: (512, 512),
            model: t.model,
            epochs: t.epochs,
            lr: t.lr,
            batch: t.batch,
            val_fraction: t.val_fraction,
            loss: t.loss,
            patience: t.patience,
            seed: t.seed,
            output_dir: PathBuf::from("runs/rga"),
        }
    }
}

/// Every accepted key, in the order `config.resolved` lists them.
pub const KEYS: &[&str] = &[
    "dataset.root",
    "dataset.layout",
    "dataset.size",
    "model.filters",
    "model.encoder_conv",
    "model.decoder_conv",
    "model.attention",
    "model.partial_decoder",
    "model.deep_supervision",
    "train.epochs",
    "train.lr",
    "train.batch",
    "train.val_fraction",
    "loss.kind",
    "sched.patience",
    "seed",
    "output.dir",
];

fn parse_size(v: &str) -> Option<(usize, usize)> {
    let (h, w) = match v.split_once('x') {
        Some((h, w)) => (h.trim().parse().ok()?, w.trim().parse().ok()?),
        None => {
            let s = v.parse().ok()?;
            (s, s)
        }
    };
    (h > 0 && w > 0).then_some((h, w))
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    /// Sets one key. Errors carry no line number; [`RunConfig::parse`] adds it.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let num = |what: &str| format!("`{key}` expects {what}, got `{v}`");
        match key {
            "dataset.root" => self.dataset_root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dataset.layout" => self.dataset_layout = v.parse().map_err(|e: Error| e.to_string())?,
            "dataset.size" => self.dataset_size = parse_size(v).ok_or_else(|| num("a size like 512 or 584x565"))?,
            "model.filters" => self.model.filters = parse_filters(v).map_err(|e| e.to_string())?,
            "model.encoder_conv" => self.model.encoder_conv = v.parse::<ConvKind>().map_err(|e| e.to_string())?,
            "model.decoder_conv" => self.model.decoder_conv = v.parse::<ConvKind>().map_err(|e| e.to_string())?,
            "model.attention" => self.model.attention = parse_bool(v).ok_or_else(|| num("true or false"))?,
            "model.partial_decoder" => self.model.partial_decoder = parse_bool(v).ok_or_else(|| num("true or false"))?,
            "model.deep_supervision" => {
                self.model.deep_supervision = parse_bool(v).ok_or_else(|| num("true or false"))?
            }
            "train.epochs" => self.epochs = v.parse().map_err(|_| num("a non-negative integer"))?,
            "train.lr" => {
                self.lr = v
                    .parse()
                    .ok()
                    .filter(|x: &f64| x.is_finite() && *x > 0.0)
                    .ok_or_else(|| num("a positive number"))?
            }
            "train.batch" => {
                self.batch = v
                    .parse()
                    .ok()
                    .filter(|&b: &usize| b > 0)
                    .ok_or_else(|| num("a positive integer"))?
            }
            "train.val_fraction" => {
                self.val_fraction = v
                    .parse()
                    .ok()
                    .filter(|f: &f64| (0.0..1.0).contains(f))
                    .ok_or_else(|| num("a fraction in [0, 1)"))?
            }
            "loss.kind" => self.loss = v.parse().map_err(|e: Error| e.to_string())?,
            "sched.patience" => self.patience = v.parse().map_err(|_| num("a non-negative integer"))?,
            "seed" => self.seed = v.parse().map_err(|_| num("an unsigned integer"))?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Config { line: no + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key=value`, got `{line}`")))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(err(format!("key `{k}` given twice")));
            }
            seen.push(k);
            cfg.set(k, v).map_err(err)?;
        }
        cfg.model.validate().map_err(|e| Error::Config {
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        Some(match key {
            "dataset.root" => self
                .dataset_root
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "dataset.layout" => self.dataset_layout.to_string(),
            "dataset.size" => format!("{}x{}", self.dataset_size.0, self.dataset_size.1),
            "model.filters" => m.filters.map(|f| f.to_string()).join(","),
            "model.encoder_conv" => m.encoder_conv.as_str().into(),
            "model.decoder_conv" => m.decoder_conv.as_str().into(),
            "model.attention" => m.attention.to_string(),
            "model.partial_decoder" => m.partial_decoder.to_string(),
            "model.deep_supervision" => m.deep_supervision.to_string(),
            "train.epochs" => self.epochs.to_string(),
            "train.lr" => format!("{:e}", self.lr),
            "train.batch" => self.batch.to_string(),
            "train.val_fraction" => self.val_fraction.to_string(),
            "loss.kind" => self.loss.to_string(),
            "sched.patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Every effective value, one `key=value` line each; parses back to an
    /// identical config.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            loss: self.loss,
            patience: self.patience,
            seed: self.seed,
            val_fraction: self.val_fraction,
        }
    }
}
