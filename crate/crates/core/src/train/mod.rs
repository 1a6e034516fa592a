//! Training: warmup/inverse-square-root learning-rate schedule, Adam with an
//! L2 term, class-balanced cross-entropy, and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::error::{invalid, Error, Result};
use crate::models::{argmax, DropoutCtx, Model};
use crate::nn::{softmax_cross_entropy, softmax_rows};
use crate::real::Real;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    #[default]
    Balanced,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub warmup_steps: u64,
    pub d_model: usize,
    pub peak_lr: f64,
    pub l2_weight: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d_model = 128;
        Self {
            beta1: 0.9,
            beta2: 0.98,
            adam_epsilon: 1e-9,
            warmup_steps: 4000,
            d_model,
            peak_lr: 0.05 / (d_model as f64).sqrt(),
            l2_weight: 1e-6,
            dropout: 0.1,
            batch_size: 64,
            epochs: 30,
            seed: 42,
            class_weighting: ClassWeighting::Balanced,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0 && self.peak_lr > 0.0) {
            return Err(invalid("adam epsilon and peak learning rate must be positive"));
        }
        if self.warmup_steps == 0 || self.batch_size == 0 || self.d_model == 0 {
            return Err(invalid("warmup_steps, batch_size and d_model must be positive"));
        }
        if self.l2_weight.is_nan() || self.l2_weight < 0.0 || !unit(self.dropout) {
            return Err(invalid("l2_weight must be non-negative and dropout in [0, 1)"));
        }
        Ok(())
    }
}

/// `peak * min(step / warmup, sqrt(warmup / step))`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step == 0 {
        return Err(invalid("learning-rate schedule starts at step 1"));
    }
    let (s, w) = (step as f64, cfg.warmup_steps as f64);
    Ok(cfg.peak_lr * (s / w).min((w / s).sqrt()))
}

/// `N / (K * n_c)` per class.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(invalid("no classes"));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(invalid(format!("class {c} has no samples")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

/// Adam moments, one buffer pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![T::zero(); p.numel()], vec![T::zero(); p.numel()]))
            .unzip();
        Self { m, v, step: 0 }
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to `params[i]`; the L2
/// gradient `2 * l2_weight * p` is added first.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&[T]],
    names: &[String],
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || names.len() != params.len() {
        return Err(invalid("parameter, gradient and optimizer lists differ in length"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || state.m[i].len() != g.len() {
            return Err(invalid(format!("gradient shape mismatch for {}", names[i])));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {} at element {j}",
                names[i]
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let bc1 = c(1.0 - cfg.beta1.powi(t));
    let bc2 = c(1.0 - cfg.beta2.powi(t));
    let (lr, eps, l2) = (c(lr), c(cfg.adam_epsilon), c(2.0 * cfg.l2_weight));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] + l2 * *w;
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *w = *w - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Features with integer labels in `0..n_classes`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet<T> {
    pub features: Vec<FeatureMatrix<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut c = vec![0; n_classes];
        for &l in &self.labels {
            if l < n_classes {
                c[l] += 1;
            }
        }
        c
    }

    fn check(&self, n_classes: usize, what: &str) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(invalid(format!("{what}: features and labels differ in length")));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= n_classes) {
            return Err(invalid(format!("{what}: label {l} out of range for {n_classes} classes")));
        }
        Ok(())
    }
}

/// Weighted loss and parameter gradients for one batch.
pub fn batch_gradients<T: Real>(
    model: &Model<T>,
    batch: &[&FeatureMatrix<T>],
    labels: &[usize],
    weights: Option<&[T]>,
    dropout: Option<DropoutCtx<'_>>,
) -> Result<(T, Vec<Vec<T>>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g)?;
    let x = model.input(&mut g, batch)?;
    let logits = model.forward(&mut g, &p, x, dropout)?;
    let loss = softmax_cross_entropy(&mut g, logits, labels, weights)?;
    let value = g.value(loss)[0];
    g.backward(loss)?;
    let grads = p
        .iter()
        .map(|&v| g.grad(v).expect("parameters are leaves").to_vec())
        .collect();
    Ok((value, grads))
}

/// Unweighted mean cross-entropy and accuracy.
pub fn evaluate_loss<T: Real>(model: &Model<T>, set: &LabeledSet<T>, chunk: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(invalid("evaluation set is empty"));
    }
    let refs: Vec<&FeatureMatrix<T>> = set.features.iter().collect();
    let logits = model.predict_logits(&refs, chunk)?;
    let k = model.n_classes();
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &label) in logits.iter().zip(&set.labels) {
        let p = softmax_rows(row, k);
        loss -= p[label].to_f64_lossy().max(f64::MIN_POSITIVE).ln();
        if argmax(row) == label {
            correct += 1;
        }
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr_last: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the highest validation accuracy.
    pub best: Model<T>,
    pub best_epoch: Option<usize>,
    pub last: Model<T>,
    pub log: Vec<EpochLog>,
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch Adam. `on_epoch` sees each
/// log record as soon as it is produced.
pub fn train<T: Real>(
    model: Model<T>,
    train_set: &LabeledSet<T>,
    val_set: &LabeledSet<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let k = model.n_classes();
    train_set.check(k, "training set")?;
    val_set.check(k, "validation set")?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid("training and validation sets must be non-empty"));
    }
    let counts = train_set.class_counts(k);
    let class_w = match class_weights(&counts) {
        Ok(w) => w,
        Err(_) => {
            let missing = counts.iter().position(|&c| c == 0).unwrap_or(0);
            return Err(invalid(format!("class {missing} has no training samples")));
        }
    };
    let sample_w: Vec<T> = train_set
        .labels
        .iter()
        .map(|&l| match cfg.class_weighting {
            ClassWeighting::Balanced => T::from_f64_lossy(class_w[l]),
            ClassWeighting::None => T::one(),
        })
        .collect();

    let mut model = model;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut opt = OptimizerState::new(model.named_params().into_iter().map(|(_, t)| t));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&FeatureMatrix<T>> = idx.iter().map(|&i| &train_set.features[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let weights: Vec<T> = idx.iter().map(|&i| sample_w[i]).collect();
            let drop = (cfg.dropout > 0.0).then_some(DropoutCtx {
                rate: cfg.dropout,
                rng: &mut rng,
            });
            let (loss, grads) = batch_gradients(&model, &batch, &labels, Some(&weights), drop)?;
            loss_sum += loss.to_f64_lossy() * idx.len() as f64;
            model.step += 1;
            lr = lr_at(model.step, cfg)?;
            let grads: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
            let mut params = model.params_mut();
            adam_step(&mut params, &grads, &names, &mut opt, lr, cfg)?;
        }
        let (val_loss, val_accuracy) = evaluate_loss(&model, val_set, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_accuracy,
            lr_last: lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.4}",
            entry.train_loss,
            entry.val_loss,
            entry.val_accuracy
        );
        on_epoch(&entry);
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = model.clone();
            best_epoch = Some(epoch);
        }
        log.push(entry);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        log,
    })
}

#[cfg(test)]
mod tests;
