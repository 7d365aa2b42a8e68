//! The training loop: seeded mini-batch shuffling, cross-entropy loss with
//! Adam updates, per-epoch loss/IoU curves, and best-checkpoint selection
//! by validation IoU.
//!
//! Determinism contract: a fixed (seed, data, config) triple reproduces the
//! curves and the returned parameters bit for bit. Each epoch draws its
//! shuffle from the master seed on a separate ChaCha stream, so batch order
//! is independent of everything else that consumes randomness.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{confusion, segmentation_metrics};
use crate::model::Model;
use crate::postproc::binarize;
use crate::raster::{batch_targets, batch_tensor};
use crate::scalar::Scalar;
use crate::tensor::{adam_step, AdamParams, AdamState, Graph};

/// Optimizer and loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            epochs: 100,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed deliberately: a zero-step run is the cheapest
        // way to check that the loop itself leaves parameters alone.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{} must lie in [0, 1), got {}", name, b)));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch series plus the index of the best validation epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCurves {
    pub train_loss: Vec<f64>,
    pub train_iou: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_iou: Vec<f64>,
    /// 1-based epoch of the maximum validation IoU (earliest on ties),
    /// matching the epoch numbering of the CSV rows.
    pub best_epoch: usize,
}

/// Earliest argmax as a 1-based epoch number.
fn best_epoch_of(val_iou: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in val_iou.iter().enumerate() {
        if v > val_iou[best] {
            best = i;
        }
    }
    best + 1
}

impl TrainingCurves {
    /// CSV with a header and one 1-based row per epoch. Floats use the
    /// shortest round-trip form, so reading the file back is lossless.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_iou,val_loss,val_iou\n");
        for i in 0..self.train_loss.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                self.train_loss[i],
                self.train_iou[i],
                self.val_loss[i],
                self.val_iou[i]
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut curves = TrainingCurves {
            train_loss: Vec::new(),
            train_iou: Vec::new(),
            val_loss: Vec::new(),
            val_iou: Vec::new(),
            best_epoch: 0,
        };
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Data(format!(
                    "{}:{}: expected 5 fields, got {}",
                    path.display(),
                    i + 1,
                    fields.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::Data(format!("{}:{}: '{}' is not a number", path.display(), i + 1, s))
                })
            };
            curves.train_loss.push(num(fields[1])?);
            curves.train_iou.push(num(fields[2])?);
            curves.val_loss.push(num(fields[3])?);
            curves.val_iou.push(num(fields[4])?);
        }
        if curves.train_loss.is_empty() {
            return Err(Error::Data(format!("{} holds no epochs", path.display())));
        }
        curves.best_epoch = best_epoch_of(&curves.val_iou);
        Ok(curves)
    }
}

/// Snapshot handed to the progress callback after each epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub epochs: usize,
    pub train_loss: f64,
    pub train_iou: f64,
    pub val_loss: f64,
    pub val_iou: f64,
    pub is_best: bool,
}

/// Mean loss and mean IoU of a model over a dataset, one image at a time,
/// with predictions binarized by per-pixel argmax. Parameters are not
/// touched.
pub fn evaluate_epoch<T: Scalar>(model: &Model<T>, dataset: &[Sample]) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut loss_sum = 0.0;
    let mut iou_sum = 0.0;
    for s in dataset {
        let mut g = Graph::new();
        let input = batch_tensor::<T>(&[&s.image])?;
        let pass = model.forward(&mut g, input)?;
        let targets = batch_targets(&[&s.mask])?;
        let loss = g.cross_entropy_logits(pass.logits, &targets)?;
        loss_sum += g.value(loss).data[0].to_f64();
        let pred = binarize(g.value(pass.probs), 0.5)?.remove(0);
        iou_sum += segmentation_metrics(&confusion(&pred, &s.mask)?).jaccard;
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, iou_sum / n))
}

/// Trains `model` and returns the parameters from the epoch with the best
/// validation IoU, along with the full curves. `on_epoch` fires once per
/// epoch for progress reporting.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    hyper: &HyperParams,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model<T>, TrainingCurves)> {
    hyper.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let adam = AdamParams {
        lr: T::from_f64(hyper.lr),
        beta1: T::from_f64(hyper.beta1),
        beta2: T::from_f64(hyper.beta2),
        eps: T::from_f64(hyper.eps),
    };
    let mut state = AdamState::new(&model.values);
    let mut curves = TrainingCurves {
        train_loss: Vec::with_capacity(hyper.epochs),
        train_iou: Vec::with_capacity(hyper.epochs),
        val_loss: Vec::with_capacity(hyper.epochs),
        val_iou: Vec::with_capacity(hyper.epochs),
        best_epoch: 0,
    };
    let mut best_iou = f64::NEG_INFINITY;
    let mut best_values: Option<Vec<_>> = None;

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut iou_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let images: Vec<_> = chunk.iter().map(|&i| &train_set[i].image).collect();
            let masks: Vec<_> = chunk.iter().map(|&i| &train_set[i].mask).collect();
            let input = batch_tensor::<T>(&images)?;
            let targets = batch_targets(&masks)?;

            let mut g = Graph::new();
            let pass = model.forward(&mut g, input)?;
            let loss_node = g.cross_entropy_logits(pass.logits, &targets)?;
            let loss = g.value(loss_node).data[0].to_f64();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss became non-finite at epoch {}, batch {}",
                    epoch + 1,
                    batch_idx + 1
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            for (pred, &i) in
                binarize(g.value(pass.probs), 0.5)?.iter().zip(chunk.iter())
            {
                iou_sum += segmentation_metrics(&confusion(pred, &train_set[i].mask)?).jaccard;
            }

            g.backward(loss_node)?;
            let grads: Vec<Vec<T>> = pass
                .param_nodes
                .iter()
                .map(|&n| g.grad(n).expect("parameter gradients exist after backward").to_vec())
                .collect();
            adam_step(&mut model.values, &grads, &mut state, &adam)?;
        }

        let n = train_set.len() as f64;
        let train_loss = loss_sum / n;
        let train_iou = iou_sum / n;
        let (val_loss, val_iou) = evaluate_epoch(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss became non-finite at epoch {}",
                epoch + 1
            )));
        }
        curves.train_loss.push(train_loss);
        curves.train_iou.push(train_iou);
        curves.val_loss.push(val_loss);
        curves.val_iou.push(val_iou);

        let is_best = val_iou > best_iou;
        if is_best {
            best_iou = val_iou;
            curves.best_epoch = epoch + 1;
            best_values = Some(model.values.clone());
        }
        on_epoch(&EpochStats {
            epoch: epoch + 1,
            epochs: hyper.epochs,
            train_loss,
            train_iou,
            val_loss,
            val_iou,
            is_best,
        });
    }
    debug_assert_eq!(curves.best_epoch, best_epoch_of(&curves.val_iou));
    model.values = best_values.expect("at least one epoch ran");
    Ok((model, curves))
}
