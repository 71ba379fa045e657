//! Training loop: seeded batching, Adam, plateau scheduling, validation,
//! logging and best-by-validation checkpointing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autograd::Tape;
use crate::data::{batch_order, Manifest, SampleLoader, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::{binarize, confusion, Aggregation, MetricReport, Metrics, DEFAULT_THRESHOLD};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::{ModelConfig, RgaNet};
use crate::optim::{Adam, Plateau};
use crate::tensor::Tensor;

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,se,sp,acc,f1,jaccard";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub loss: LossKind,
    pub patience: usize,
    pub seed: u64,
    /// Fraction of training records held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 70,
            lr: 1e-3,
            batch: 4,
            loss: LossKind::DiceBce,
            patience: 5,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub metrics: Metrics,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{:.6},{:.6},{:e},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.train_loss,
            self.val_loss,
            self.lr,
            m.sensitivity,
            m.specificity,
            m.accuracy,
            m.f1,
            m.jaccard
        )
    }
}

/// A model with its optimizer and scheduler state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: RgaNet,
    pub adam: Adam,
    pub plateau: Plateau,
    pub loss: LossKind,
}

impl Trainer {
    pub fn new(net: RgaNet, lr: f64, patience: usize, loss: LossKind) -> Self {
        Trainer {
            net,
            adam: Adam::new(lr),
            plateau: Plateau::new(patience),
            loss,
        }
    }

    /// One optimization step on a batch; returns the batch loss.
    pub fn step(&mut self, images: &Tensor, masks: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.input(images.clone());
        let vars = self.net.forward_train(&mut tape, x)?;
        let l = self.net.record_loss(&mut tape, &vars, masks, self.loss)?;
        let loss = tape.value(l).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {loss}")));
        }
        self.net.params_mut().zero_grads();
        tape.backward_scalar(self.net.params_mut())?;
        if let Some(p) = self.net.params().params().iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}` is not finite", p.name)));
        }
        self.adam.step(self.net.params_mut())?;
        Ok(loss)
    }

    /// Eval-mode loss and per-image metrics over `records`.
    pub fn evaluate(&self, loader: &mut SampleLoader, records: &[SampleRecord], batch: usize) -> Result<(f64, MetricReport)> {
        let mut report = MetricReport::new();
        let mut total = 0.0;
        for chunk in (0..records.len()).collect::<Vec<_>>().chunks(batch.max(1)) {
            let (images, masks) = loader.batch(records, chunk)?;
            let pred = self.net.predict(&images)?;
            total += self.loss.evaluate(&pred, &masks)? * chunk.len() as f64;
            let bin = binarize(&pred, DEFAULT_THRESHOLD);
            for (k, &i) in chunk.iter().enumerate() {
                let c = confusion(&bin.batch_item(k)?, &masks.batch_item(k)?)?;
                let r = &records[i];
                report.push(format!("{}#{}", r.image.display(), r.augment), c)?;
            }
        }
        Ok((total / records.len().max(1) as f64, report))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains on the manifest's training records. A seeded `val_fraction` of
/// them is held out; its loss drives the scheduler and checkpoint choice
/// (the training loss is used when nothing can be held out). With
/// `out_dir`, writes `train_log.csv`, `best.ckpt` and `last.ckpt` there.
pub fn train_loop(
    manifest: &Manifest,
    loader: &mut SampleLoader,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut m = manifest.clone();
    m.hold_out(cfg.val_fraction, cfg.seed)?;
    let (train, val) = (m.split(Split::Train), m.split(Split::Val));
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let net = RgaNet::new(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(net, cfg.lr, cfg.patience, cfg.loss);
    let mut log_text = format!("{LOG_HEADER}\n");
    let mut logs = Vec::new();
    let (mut best_epoch, mut best_val) = (0, f64::INFINITY);
    let write = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        match out_dir {
            Some(dir) => f(&dir.join(name)),
            None => Ok(()),
        }
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        for idx in batch_order(train.len(), cfg.batch, cfg.seed, epoch as u64)? {
            let (images, masks) = loader.batch(&train, &idx)?;
            let loss = trainer.step(&images, &masks).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!(
                    "{msg} at epoch {epoch}, records {:?}",
                    idx.iter().map(|&i| train[i].image.display().to_string()).collect::<Vec<_>>()
                )),
                other => other,
            })?;
            sum += loss * idx.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let (val_loss, report) = if val.is_empty() {
            let (_, report) = trainer.evaluate(loader, &train, cfg.batch)?;
            (train_loss, report)
        } else {
            trainer.evaluate(loader, &val, cfg.batch)?
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss is {val_loss} at epoch {epoch}")));
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: trainer.adam.lr,
            metrics: report.aggregate(Aggregation::PerImageMean)?,
        };
        trainer.adam.lr = trainer.plateau.step(val_loss, trainer.adam.lr)?;
        let _ = writeln!(log_text, "{}", entry.csv_row());
        write("train_log.csv", &|p| fs::write(p, &log_text).map_err(|e| Error::io(p, e)))?;
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            write("best.ckpt", &|p| save_checkpoint(&trainer.net, Some(&trainer.adam), p))?;
        }
        write("last.ckpt", &|p| save_checkpoint(&trainer.net, Some(&trainer.adam), p))?;
        logs.push(entry);
    }
    Ok(TrainOutcome {
        trainer,
        logs,
        best_epoch,
        best_val_loss: best_val,
    })
}
