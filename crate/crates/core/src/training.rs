//! Training loops: single-environment localizer, transfer fine-tuning, and
//! the multitask unified MLP. All share one minibatch loop with seeded
//! shuffling, Adam updates and per-epoch evaluation in inference mode.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Environment;
use crate::error::{Error, Result};
use crate::metrics::{env_accuracy, rmse};
use crate::models::{swap_base, LocalizerModel, UmlpModel};
use crate::nn::{bce_loss, mse_loss, AdamConfig, AdamState, Gradients, Mode, Network, Parameterized};
use crate::preprocess::PreparedData;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 20,
            min_delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
    /// Weight of the environment-classification loss in the unified model.
    pub multitask_weight: f64,
    /// Keep the base block fixed during fine-tuning (ablation only).
    pub freeze_base: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            optimizer: AdamConfig::default(),
            seed: 0,
            early_stop: Some(EarlyStop::default()),
            multitask_weight: 1.0,
            freeze_base: false,
        }
    }
}

impl TrainConfig {
    /// Defaults with the environment's batch size: 256 for Wi-Fi, 512 for LoRaWAN.
    pub fn for_environment(env: Environment) -> Self {
        Self {
            batch_size: match env {
                Environment::Indoor => 256,
                Environment::Outdoor => 512,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 for batch norm, got {}",
                self.batch_size
            )));
        }
        if !(self.multitask_weight.is_finite() && self.multitask_weight >= 0.0) {
            return Err(Error::Config(format!(
                "multitask weight must be >= 0, got {}",
                self.multitask_weight
            )));
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(es.min_delta >= 0.0) {
                return Err(Error::Config("early stop needs patience >= 1 and min_delta >= 0".into()));
            }
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub cls_acc: Option<f64>,
}

/// Per-epoch RMSE on normalized coordinates, 1-based epochs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningCurve {
    pub label: String,
    pub records: Vec<EpochRecord>,
}

impl LearningCurve {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn val_at(&self, epoch: usize) -> Option<f64> {
        self.records.iter().find(|r| r.epoch == epoch).map(|r| r.val_rmse)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .min_by(|a, b| a.val_rmse.total_cmp(&b.val_rmse))
    }

    /// First epoch whose validation RMSE is at or below `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.val_rmse <= threshold).map(|r| r.epoch)
    }

    /// `epoch,train_rmse,val_rmse[,cls_acc]` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let with_cls = self.records.iter().any(|r| r.cls_acc.is_some());
        let mut out = String::from("epoch,train_rmse,val_rmse");
        if with_cls {
            out.push_str(",cls_acc");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.epoch, r.train_rmse, r.val_rmse);
            if with_cls {
                let _ = write!(out, ",{}", r.cls_acc.unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Shuffled minibatch partition of `0..n`. A trailing batch of one sample
/// would break batch norm, so it is folded into the previous batch.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(tail);
        }
    }
    batches
}

/// What the shared loop needs from a model.
trait Trainable: Parameterized + Clone {
    fn set_mode(&mut self, mode: Mode);
    fn input_dim(&self) -> usize;
    /// One forward/backward pass; returns the batch loss and gradients.
    fn loss_and_grad(&mut self, data: &PreparedData, rows: &[usize], lambda: f64, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)>;
    /// (coordinate RMSE, environment accuracy) in inference mode.
    fn evaluate(&self, data: &PreparedData) -> Result<(f64, Option<f64>)>;
    /// Tensor indices held fixed when `freeze_base` is set.
    fn frozen_range(&self) -> std::ops::Range<usize> {
        0..0
    }
}

impl Trainable for LocalizerModel {
    fn set_mode(&mut self, mode: Mode) {
        LocalizerModel::set_mode(self, mode)
    }

    fn input_dim(&self) -> usize {
        LocalizerModel::input_dim(self)
    }

    fn loss_and_grad(&mut self, data: &PreparedData, rows: &[usize], _lambda: f64, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        let x = data.inputs.select(Axis(0), rows);
        let y = data.targets.select(Axis(0), rows);
        let pred = self.forward(x.view(), rng)?;
        let (loss, grad) = mse_loss(pred.view(), y.view())?;
        let (grads, _) = self.backward(grad.view())?;
        Ok((loss, grads))
    }

    fn evaluate(&self, data: &PreparedData) -> Result<(f64, Option<f64>)> {
        let pred = self.predict(data.inputs.view())?;
        Ok((rmse(pred.view(), data.targets.view())?, None))
    }

    fn frozen_range(&self) -> std::ops::Range<usize> {
        self.base_param_range()
    }
}

impl Trainable for UmlpModel {
    fn set_mode(&mut self, mode: Mode) {
        UmlpModel::set_mode(self, mode)
    }

    fn input_dim(&self) -> usize {
        UmlpModel::input_dim(self)
    }

    fn loss_and_grad(&mut self, data: &PreparedData, rows: &[usize], lambda: f64, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        let x = data.inputs.select(Axis(0), rows);
        let y = data.targets.select(Axis(0), rows);
        let labels: Array2<f64> = Array2::from_shape_fn((rows.len(), 1), |(i, _)| data.env[rows[i]].label());
        let (reg, cls) = self.forward(x.view(), rng)?;
        let (reg_loss, reg_grad) = mse_loss(reg.view(), y.view())?;
        let (cls_loss, cls_grad) = bce_loss(cls.view(), labels.view())?;
        let grads = self.backward(reg_grad.view(), (cls_grad * lambda).view())?;
        Ok((reg_loss + lambda * cls_loss, grads))
    }

    fn evaluate(&self, data: &PreparedData) -> Result<(f64, Option<f64>)> {
        let (reg, cls) = self.predict(data.inputs.view())?;
        let labels: Vec<f64> = data.env.iter().map(|e| e.label()).collect();
        let logits: Vec<f64> = cls.iter().copied().collect();
        Ok((rmse(reg.view(), data.targets.view())?, Some(env_accuracy(&logits, &labels)?)))
    }
}

fn check_data(model_dim: usize, data: &PreparedData, name: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(name));
    }
    if data.width() != model_dim {
        return Err(Error::Shape(format!(
            "{name} has {} features, model expects {model_dim}",
            data.width()
        )));
    }
    if data.targets.ncols() != 2 {
        return Err(Error::Shape(format!("{name} targets must have 2 columns")));
    }
    Ok(())
}

fn run_training<M: Trainable>(
    mut model: M,
    train: &PreparedData,
    val: &PreparedData,
    config: &TrainConfig,
    label: &str,
) -> Result<(M, LearningCurve)> {
    config.validate()?;
    check_data(model.input_dim(), train, "training set")?;
    check_data(model.input_dim(), val, "validation set")?;
    let mut curve = LearningCurve::new(label);
    if config.epochs == 0 {
        return Ok((model, curve));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut adam = AdamState::new(config.optimizer)?;
    let frozen = if config.freeze_base { model.frozen_range() } else { 0..0 };

    let mut best: Option<(f64, M)> = None;
    let mut patience_ref = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        model.set_mode(Mode::Train);
        for (b, rows) in epoch_batches(train.len(), config.batch_size, &mut shuffle_rng).iter().enumerate() {
            let (loss, mut grads) = model.loss_and_grad(train, rows, config.multitask_weight, &mut dropout_rng)?;
            if !loss.is_finite() || grads.has_non_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            for t in frozen.clone() {
                grads.tensors[t].iter_mut().for_each(|g| *g = 0.0);
            }
            adam.step(&mut model.params_mut(), &grads)?;
        }
        model.set_mode(Mode::Infer);

        let (train_rmse, _) = model.evaluate(train)?;
        let (val_rmse, cls_acc) = model.evaluate(val)?;
        if !train_rmse.is_finite() || !val_rmse.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        curve.records.push(EpochRecord {
            epoch,
            train_rmse,
            val_rmse,
            cls_acc,
        });

        if let Some(es) = config.early_stop {
            if best.as_ref().is_none_or(|(v, _)| val_rmse < *v) {
                best = Some((val_rmse, model.clone()));
            }
            if val_rmse < patience_ref - es.min_delta {
                patience_ref = val_rmse;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, snapshot)) = best {
        model = snapshot;
    }
    Ok((model, curve))
}

/// Trains a localizer on normalized coordinates with MSE loss.
pub fn train_localizer(
    model: LocalizerModel,
    train: &PreparedData,
    val: &PreparedData,
    config: &TrainConfig,
) -> Result<(LocalizerModel, LearningCurve)> {
    run_training(model, train, val, config, "without TL")
}

/// Copies `source_base` into the freshly built `target`, then trains it as
/// [`train_localizer`] would.
pub fn train_with_transfer(
    source_base: &Network,
    target: LocalizerModel,
    train: &PreparedData,
    val: &PreparedData,
    config: &TrainConfig,
) -> Result<(LocalizerModel, LearningCurve)> {
    let target = swap_base(target, source_base)?;
    run_training(target, train, val, config, "with TL")
}

/// Trains both heads jointly on `mse + multitask_weight * bce`. The returned
/// curve carries per-epoch validation environment accuracy.
pub fn train_umlp(
    model: UmlpModel,
    train: &PreparedData,
    val: &PreparedData,
    config: &TrainConfig,
) -> Result<(UmlpModel, LearningCurve)> {
    run_training(model, train, val, config, "U-MLP")
}
