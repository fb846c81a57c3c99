//! Teacher-forced training, evaluation and checkpoints.

mod checkpoint;
mod dataset;
mod eval;
mod metrics;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{Dataset, NamedRecord, Sample, Split, SplitUnit};
pub use eval::{evaluate, EvalReport, Metrics, RecordReport, WindowReport, AGGREGATION_NOTE};
pub use metrics::{mse_loss, r_squared, rmse, RSquared, Undefined};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tensor};
use crate::sigproc::{WindowPair, WindowSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of records (or windows, for a single record) used for training.
    pub train_fraction: f64,
    pub window: WindowSpec,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-4,
            seed: 0,
            train_fraction: 0.8,
            window: WindowSpec::new(100, 50, 50),
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::config(format!("grad_clip must be non-negative, got {}", self.grad_clip)));
        }
        self.window.validate()
    }
}

/// Errors unless the model consumes the windows `spec` produces.
pub fn check_compatible(cfg: &ModelConfig, spec: &WindowSpec, leads: usize) -> Result<()> {
    if cfg.t_in != spec.t_in || cfg.t_out != spec.t_out {
        return Err(Error::config(format!(
            "model expects {}-{} windows, window spec is {}",
            cfg.t_in,
            cfg.t_out,
            spec.label()
        )));
    }
    if cfg.leads != leads {
        return Err(Error::config(format!(
            "model expects {} leads, dataset has {leads}",
            cfg.leads
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean pre-update loss over the epoch's training windows.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub mean_grad_norm: f64,
    pub clipped_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub window: String,
    pub split: SplitUnit,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters are kept; selected on validation loss, or on
    /// training loss when there is no validation window.
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub losses: Vec<f64>,
    pub grad_norm: f64,
    pub clipped: bool,
}

impl StepStats {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// Model plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub grad_clip: f64,
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

impl Trainer {
    pub fn new(model: Model, adam: AdamConfig, grad_clip: f64) -> Self {
        let adam = AdamState::new(adam, model.params.tensors());
        Trainer { model, adam, grad_clip }
    }

    /// Per-window losses and the batch-mean gradient. Windows are processed in
    /// parallel and reduced in batch order.
    pub fn batch_gradients(&self, batch: &[&WindowPair]) -> Result<(Vec<f64>, Vec<Tensor>)> {
        if batch.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        let per_window: Vec<Result<(f64, Vec<Tensor>)>> = batch
            .par_iter()
            .map(|w| self.model.loss_and_grads(&w.encoder_input, &w.decoder_target))
            .collect();
        let mut losses = Vec::with_capacity(batch.len());
        let mut sum: Option<Vec<Tensor>> = None;
        for r in per_window {
            let (loss, grads) = r?;
            losses.push(loss);
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        let grads = sum.unwrap_or_default().into_iter().map(|g| g.scale(inv)).collect();
        Ok((losses, grads))
    }

    /// Clips to the global-norm ceiling and applies one Adam update.
    pub fn apply(&mut self, mut grads: Vec<Tensor>) -> Result<(f64, bool)> {
        let norm = global_norm(&grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        let clipped = self.grad_clip > 0.0 && norm > self.grad_clip;
        if clipped {
            let f = self.grad_clip / norm;
            grads = grads.into_iter().map(|g| g.scale(f)).collect();
        }
        let refs: Vec<&Tensor> = grads.iter().collect();
        adam_step(&mut self.model.params.tensors_mut(), &refs, &mut self.adam)?;
        Ok((norm, clipped))
    }

    pub fn step(&mut self, batch: &[&WindowPair]) -> Result<StepStats> {
        let (losses, grads) = self.batch_gradients(batch)?;
        let (grad_norm, clipped) = self.apply(grads)?;
        Ok(StepStats {
            losses,
            grad_norm,
            clipped,
        })
    }

    /// Mean teacher-forced loss over `windows`.
    pub fn loss(&self, windows: &[&WindowPair]) -> Result<f64> {
        mean_loss(&self.model, windows)
    }
}

pub fn mean_loss(model: &Model, windows: &[&WindowPair]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Dataset("no windows to score".into()));
    }
    let losses = windows
        .par_iter()
        .map(|w| model.teacher_forced_loss(&w.encoder_input, &w.decoder_target))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Trains a freshly initialized model. `on_epoch` sees each log entry as it
/// is produced. The returned checkpoint holds the best epoch's parameters and
/// the optimizer state after the final step.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint> {
    cfg.validate()?;
    model_cfg.validate()?;
    let first = dataset
        .records
        .first()
        .ok_or_else(|| Error::Dataset("dataset is empty".into()))?;
    check_compatible(model_cfg, &cfg.window, first.record.num_leads())?;
    let split = dataset.split(&cfg.window, cfg.train_fraction, cfg.seed)?;
    let train_w: Vec<&WindowPair> = split.train.iter().map(|s| &s.window).collect();
    let val_w: Vec<&WindowPair> = split.validation.iter().map(|s| &s.window).collect();

    let model = Model::new(model_cfg.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, AdamConfig::with_lr(cfg.lr), cfg.grad_clip);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_w.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut window_loss = vec![0.0; train_w.len()];
        let (mut norm_sum, mut clipped_steps, mut steps) = (0.0, 0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowPair> = chunk.iter().map(|&i| train_w[i]).collect();
            let (losses, grads) = trainer.batch_gradients(&batch).map_err(|e| diverged(epoch, b, e))?;
            if let Some(&bad) = losses.iter().find(|l| !l.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: bad,
                });
            }
            for (&i, l) in chunk.iter().zip(losses) {
                window_loss[i] = l;
            }
            let (norm, clipped) = trainer.apply(grads).map_err(|e| diverged(epoch, b, e))?;
            norm_sum += norm;
            clipped_steps += usize::from(clipped);
            steps += 1;
        }
        let train_loss = window_loss.iter().sum::<f64>() / window_loss.len() as f64;
        let val_loss = if val_w.is_empty() {
            None
        } else {
            Some(trainer.loss(&val_w).map_err(|e| diverged(epoch, steps, e))?)
        };
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            best = Some((epoch, score, trainer.model.params.clone()));
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            mean_grad_norm: norm_sum / steps as f64,
            clipped_steps,
        };
        on_epoch(&entry);
        epochs.push(entry);
    }

    let (best_epoch, best_loss, params) = best.ok_or_else(|| Error::Dataset("no epochs run".into()))?;
    let log = TrainLog {
        seed: cfg.seed,
        window: cfg.window.label(),
        split: split.unit,
        train_windows: train_w.len(),
        validation_windows: val_w.len(),
        epochs,
        best_epoch,
        best_loss,
    };
    Ok(Checkpoint {
        model_config: model_cfg.clone(),
        train_config: Some(cfg.clone()),
        params,
        adam: Some(trainer.adam),
        log: Some(log),
    })
}
