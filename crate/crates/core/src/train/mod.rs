//! Losses, optimisation and the training loop.

mod loss;
mod optim;
mod source;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MixtureSample;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Checkpoint, TrainingMeta, TseModel};

pub use loss::{
    active_value_grad, batch_objective, inactive_value_grad, loss_active, loss_inactive, sample_objective, LossConfig,
};
pub use optim::{clip_grad_norm, global_norm, Adam, PlateauScheduler};
pub use source::{ManifestSource, Relabeled, Requeried, SampleSource, Subset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Probability of an inactive query when queries are redrawn per epoch.
    pub inactive_ratio: f64,
    /// Presence radius used to label samples.
    pub r_spk: f64,
    /// Redraw every sample's query distance each epoch instead of using the
    /// manifest's.
    pub requery_each_epoch: bool,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_decay: 0.8,
            patience: 10,
            clip_norm: 5.0,
            batch_size: 14,
            epochs: 400,
            inactive_ratio: 0.25,
            r_spk: 0.5,
            requery_each_epoch: false,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::config(format!("lr_decay must be in (0, 1), got {}", self.lr_decay)));
        }
        if self.patience == 0 || self.batch_size == 0 {
            return Err(Error::config("patience and batch_size must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.inactive_ratio) {
            return Err(Error::config(format!("inactive_ratio must be in [0, 1), got {}", self.inactive_ratio)));
        }
        if !(self.r_spk > 0.0) {
            return Err(Error::config(format!("r_spk must be positive, got {}", self.r_spk)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam betas must be in [0, 1) and eps positive"));
        }
        self.loss.validate()
    }
}

/// Fields a finetuning run may change.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneOverrides {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub r_spk: Option<f64>,
    /// Share of the training set to use, taken as a seeded random subset.
    pub fraction: Option<f64>,
}

impl FinetuneOverrides {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.r_spk {
            if !(r > 0.0) {
                return Err(Error::config(format!("r_spk must be positive, got {r}")));
            }
        }
        if let Some(f) = self.fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("fraction must be in (0, 1], got {f}")));
            }
        }
        if let Some(lr) = self.lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("lr must be finite and non-negative, got {lr}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Seconds since the run started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochLog>,
    pub best_val_loss: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Per-sample objective and its parameter gradient.
pub fn sample_gradient(model: &TseModel, sample: &MixtureSample, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let (x_hat, tape) = model.forward_train(&sample.mixture, &sample.clue)?;
    let (value, d_out) = sample_objective(sample, &x_hat, cfg)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {value}")));
    }
    Ok((value, model.backward(&tape, &d_out)?))
}

/// Mean objective and mean gradient over a batch. Per-sample work runs in
/// parallel; the reduction order is fixed.
pub fn batch_gradient(model: &TseModel, batch: &[MixtureSample], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| sample_gradient(model, s, cfg))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (v, g) in &parts {
        loss += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Single-writer optimisation state around a model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: TseModel,
    cfg: TrainConfig,
    adam: Adam,
    sched: PlateauScheduler,
    meta: TrainingMeta,
}

impl Trainer {
    pub fn new(model: TseModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.num_params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let sched = PlateauScheduler::new(cfg.lr, cfg.lr_decay, cfg.patience);
        let meta = TrainingMeta {
            lr: cfg.lr,
            ..TrainingMeta::default()
        };
        Ok(Self {
            model,
            cfg,
            adam,
            sched,
            meta,
        })
    }

    /// Continues from a checkpoint: optimiser moments, epoch counter, best
    /// loss and learning rate are restored.
    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let mut t = Self::new(ckpt.model, cfg)?;
        if let Some(state) = ckpt.optimizer {
            t.adam.state = state;
        }
        t.sched.lr = ckpt.meta.lr;
        t.sched.best = ckpt.meta.best_val_loss;
        t.sched.stale = ckpt.meta.stale_epochs;
        t.meta = ckpt.meta;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.sched.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.sched.lr = lr;
        self.meta.lr = lr;
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    /// One clipped Adam update on `batch`; returns the pre-update objective.
    pub fn step(&mut self, batch: &[MixtureSample]) -> Result<StepStats> {
        let (loss, mut grad) = batch_gradient(&self.model, batch, &self.cfg.loss)?;
        let grad_norm = clip_grad_norm(&mut grad, self.cfg.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::Numeric("non-finite gradient norm".into()));
        }
        self.adam.step(&mut self.model.params, &grad, self.sched.lr);
        self.meta.step += 1;
        Ok(StepStats { loss, grad_norm })
    }

    /// Mean objective over a source, in batches.
    pub fn evaluate_loss(&self, src: &dyn SampleSource) -> Result<f64> {
        if src.is_empty() {
            return Err(Error::invalid("validation set is empty"));
        }
        let mut total = 0.0;
        for start in (0..src.len()).step_by(self.cfg.batch_size) {
            let end = (start + self.cfg.batch_size).min(src.len());
            let samples: Vec<MixtureSample> = (start..end).map(|i| src.get(i)).collect::<Result<_>>()?;
            let values: Vec<f64> = samples
                .par_iter()
                .map(|s| {
                    let x_hat = self.model.forward(&s.mixture, &s.clue)?;
                    Ok(sample_objective(s, &x_hat, &self.cfg.loss)?.0)
                })
                .collect::<Result<_>>()?;
            total += values.iter().sum::<f64>();
        }
        let mean = total / src.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss {mean}")));
        }
        Ok(mean)
    }

    /// One pass over `train` in a seeded order; returns the mean objective.
    pub fn run_epoch(&mut self, train: &dyn SampleSource) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let epoch = self.meta.epoch;
        let requeried;
        let src: &dyn SampleSource = if self.cfg.requery_each_epoch {
            requeried = Requeried::new(train, self.cfg.inactive_ratio, self.cfg.r_spk, self.cfg.seed, epoch as u64);
            &requeried
        } else {
            train
        };
        let mut order: Vec<usize> = (0..src.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<MixtureSample> = chunk.iter().map(|&i| src.get(i)).collect::<Result<_>>()?;
            total += self.step(&batch)?.loss * batch.len() as f64;
        }
        Ok(total / src.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.model, &self.meta, Some(&self.adam.state))
    }

    /// Trains for `epochs` further epochs. With `out`, appends to
    /// `train_log.jsonl` and keeps `last.ckpt` and `best.ckpt` there; a
    /// numeric failure leaves `diverged.ckpt` with the parameters that
    /// produced it.
    pub fn fit(
        &mut self,
        train: &dyn SampleSource,
        val: &dyn SampleSource,
        epochs: usize,
        out: Option<&Path>,
    ) -> Result<TrainSummary> {
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
        }
        log::info!(
            "training {} parameters: lr {} batch {} clip {} patience {} decay {}",
            self.model.num_params(),
            self.sched.lr,
            self.cfg.batch_size,
            self.cfg.clip_norm,
            self.cfg.patience,
            self.cfg.lr_decay
        );
        let start = Instant::now();
        let mut summary = TrainSummary {
            epochs: Vec::new(),
            best_val_loss: self.sched.best,
            best_checkpoint: None,
        };
        for _ in 0..epochs {
            let lr = self.sched.lr;
            let snapshot = out.map(|_| self.model.params.clone());
            let result = self.run_epoch(train).and_then(|tl| Ok((tl, self.evaluate_loss(val)?)));
            let (train_loss, val_loss) = match result {
                Ok(v) => v,
                Err(e @ Error::Numeric(_)) => {
                    if let (Some(dir), Some(params)) = (out, snapshot) {
                        let mut diag = self.clone();
                        diag.model.params = params;
                        diag.save(&dir.join("diverged.ckpt"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            self.meta.epoch += 1;
            let improved = self.sched.observe(val_loss);
            self.meta.best_val_loss = self.sched.best;
            self.meta.stale_epochs = self.sched.stale;
            self.meta.lr = self.sched.lr;
            let entry = EpochLog {
                epoch: self.meta.epoch,
                train_loss,
                val_loss,
                lr,
                wall_time: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} train {:.4} val {:.4} lr {:.3e}{}",
                entry.epoch,
                train_loss,
                val_loss,
                lr,
                if improved { " *" } else { "" }
            );
            if let Some(dir) = out {
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("train_log.jsonl"))?;
                serde_json::to_writer(&mut f, &entry)?;
                f.write_all(b"\n")?;
                self.save(&dir.join("last.ckpt"))?;
                if improved {
                    let best = dir.join("best.ckpt");
                    self.save(&best)?;
                    summary.best_checkpoint = Some(best);
                }
            }
            summary.epochs.push(entry);
        }
        summary.best_val_loss = self.sched.best;
        Ok(summary)
    }
}

/// Continues training from `ckpt` with `overrides` applied. `r_spk`
/// relabels every sample and `fraction` selects a seeded subset of `train`.
pub fn finetune(
    ckpt: Checkpoint,
    mut cfg: TrainConfig,
    overrides: &FinetuneOverrides,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    out: Option<&Path>,
) -> Result<(Trainer, TrainSummary)> {
    overrides.validate()?;
    if let Some(e) = overrides.epochs {
        cfg.epochs = e;
    }
    if let Some(r) = overrides.r_spk {
        cfg.r_spk = r;
    }
    let mut trainer = Trainer::resume(ckpt, cfg)?;
    if let Some(lr) = overrides.lr {
        trainer.set_lr(lr);
    }
    let subset;
    let train: &dyn SampleSource = match overrides.fraction {
        Some(f) if f < 1.0 => {
            subset = Subset::fraction(train, f, trainer.cfg.seed);
            &subset
        }
        _ => train,
    };
    let epochs = trainer.cfg.epochs;
    let summary = match overrides.r_spk {
        Some(r) => trainer.fit(&Relabeled::new(train, r), &Relabeled::new(val, r), epochs, out)?,
        None => trainer.fit(train, val, epochs, out)?,
    };
    Ok((trainer, summary))
}
