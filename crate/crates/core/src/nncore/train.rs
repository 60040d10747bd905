//! From-scratch training: analytic backprop, SGD with momentum, on-the-fly
//! augmentation, and evaluation with per-class confusion.

use super::layer::{self, LayerSpec};
use super::model::{argmax, forward_trace, FloatModel, ModelSpec, Trace};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::simenv::{Dataset, LineImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Max absolute pixel shift (edge-replicated).
    pub shift: usize,
    /// Brightness multiplier drawn from [1 - b, 1 + b].
    pub brightness: f32,
    /// Additive Gaussian pixel noise.
    pub noise_sigma: f32,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation {
            shift: 4,
            brightness: 0.2,
            noise_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub augmentation: Option<Augmentation>,
    /// Dropout probability on the final FC input, training only.
    pub dropout: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            augmentation: Some(Augmentation::default()),
            dropout: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale run: everything stock, epochs reduced to 200.
    pub fn desk_scale(seed: u64) -> Self {
        TrainConfig {
            epochs: 200,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f32>,
    pub val_accuracy: Vec<f64>,
}

pub fn augment(img: &LineImage, aug: &Augmentation, rng: &mut ChaCha8Rng) -> LineImage {
    let w = img.width();
    let src = img.pixels();
    let shift = if aug.shift > 0 {
        rng.random_range(-(aug.shift as i64)..=(aug.shift as i64)) as isize
    } else {
        0
    };
    let brightness = if aug.brightness > 0.0 {
        rng.random_range((1.0 - aug.brightness)..=(1.0 + aug.brightness))
    } else {
        1.0
    };
    let normal = (aug.noise_sigma > 0.0)
        .then(|| Normal::new(0.0f32, aug.noise_sigma).ok())
        .flatten();
    let mut out = Vec::with_capacity(w);
    for x in 0..w {
        let sx = (x as isize + shift).clamp(0, w as isize - 1) as usize;
        let mut v = src[sx] as f32 * brightness;
        if let Some(n) = &normal {
            v += n.sample(rng);
        }
        out.push(v.round().clamp(0.0, 255.0) as u8);
    }
    LineImage::new(out)
}

struct Gradients {
    dw: Vec<Tensor>,
    db: Vec<Vec<f32>>,
}

impl Gradients {
    fn zeros_like(model: &FloatModel) -> Gradients {
        Gradients {
            dw: model.params.iter().map(|p| Tensor::zeros(p.w.shape())).collect(),
            db: model.params.iter().map(|p| vec![0.0; p.b.len()]).collect(),
        }
    }

    fn scale(&mut self, s: f32) {
        for t in &mut self.dw {
            for v in t.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.db {
            for v in b {
                *v *= s;
            }
        }
    }
}

/// Backprop through one traced sample; accumulates into `grads` and returns
/// the sample loss.
fn backward_sample(model: &FloatModel, trace: &Trace, label: usize, grads: &mut Gradients) -> f32 {
    let logits = trace.acts.last().unwrap().data();
    let (loss, dlogits) = layer::softmax_cross_entropy(logits, label);
    let mut dy = Tensor::from_vec(&[dlogits.len()], dlogits);
    let mut pi = model.params.len();
    for (li, l) in model.spec.layers.iter().enumerate().rev() {
        let x = &trace.acts[li];
        match *l {
            LayerSpec::Fc { .. } => {
                pi -= 1;
                let g = layer::fc_backward(x, &model.params[pi].w, &dy);
                add_assign(&mut grads.dw[pi], &g.dw);
                for (a, b) in grads.db[pi].iter_mut().zip(&g.db) {
                    *a += b;
                }
                dy = g.dx;
                // Undo dropout on the way back down if it was applied to
                // this layer's input.
                if li == model.spec.layers.len() - 1 {
                    if let Some(mask) = &trace.dropout_mask {
                        for (v, m) in dy.data_mut().iter_mut().zip(mask) {
                            *v *= m;
                        }
                    }
                }
            }
            LayerSpec::Conv1d { stride, .. } => {
                pi -= 1;
                let g = layer::conv1d_backward(x, &model.params[pi].w, stride, &dy);
                add_assign(&mut grads.dw[pi], &g.dw);
                for (a, b) in grads.db[pi].iter_mut().zip(&g.db) {
                    *a += b;
                }
                dy = g.dx;
            }
            LayerSpec::MaxPool1d { kernel, stride } => {
                dy = layer::maxpool1d_backward(x, kernel, stride, &dy);
            }
            LayerSpec::Relu => {
                dy = layer::relu_backward(x, &dy);
            }
            LayerSpec::Flatten => {
                dy = dy.reshaped(x.shape());
            }
        }
    }
    loss
}

fn add_assign(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

struct Momentum {
    vw: Vec<Tensor>,
    vb: Vec<Vec<f32>>,
}

impl Momentum {
    fn zeros_like(model: &FloatModel) -> Momentum {
        Momentum {
            vw: model.params.iter().map(|p| Tensor::zeros(p.w.shape())).collect(),
            vb: model.params.iter().map(|p| vec![0.0; p.b.len()]).collect(),
        }
    }
}

fn sgd_update(model: &mut FloatModel, grads: &Gradients, vel: &mut Momentum, lr: f32, momentum: f32) {
    for i in 0..model.params.len() {
        for ((w, v), g) in model.params[i]
            .w
            .data_mut()
            .iter_mut()
            .zip(vel.vw[i].data_mut())
            .zip(grads.dw[i].data())
        {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
        for ((b, v), g) in model.params[i].b.iter_mut().zip(&mut vel.vb[i]).zip(&grads.db[i]) {
            *v = momentum * *v + g;
            *b -= lr * *v;
        }
    }
}

/// One minibatch step: mean loss over the batch, momentum SGD update.
/// Dropout is active; augmentation is the caller's business.
pub fn sgd_step(
    model: &mut FloatModel,
    batch: &[(&LineImage, usize)],
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    vel: &mut Momentum,
) -> Result<f32> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0f32;
    for (img, label) in batch {
        let input = FloatModel::normalize(img);
        let trace = forward_trace(model, input, Some((dropout_rng, cfg.dropout)))?;
        loss += backward_sample(model, &trace, *label, &mut grads);
    }
    let inv = 1.0 / batch.len() as f32;
    grads.scale(inv);
    sgd_update(model, &grads, vel, cfg.lr, cfg.momentum);
    Ok(loss * inv)
}

/// Trains from a fresh fan-in init; deterministic for a fixed seed. Labels
/// must already be in `0..spec.classes`.
pub fn train_labeled(
    spec: &ModelSpec,
    train_set: &[(LineImage, usize)],
    val_set: &[(LineImage, usize)],
    cfg: &TrainConfig,
) -> Result<(FloatModel, TrainHistory)> {
    cfg.validate()?;
    spec.validate()?;
    if train_set.is_empty() {
        return Err(Error::InsufficientSamples { need: 1, have: 0 });
    }
    if let Some((_, l)) = train_set.iter().find(|(_, l)| *l >= spec.classes) {
        return Err(Error::LabelMismatch(format!(
            "label {l} out of range for {} classes",
            spec.classes
        )));
    }

    let mut model = FloatModel::init(spec, cfg.seed);
    let mut history = TrainHistory::default();
    let mut vel = Momentum::zeros_like(&model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = stream(cfg.seed, domain::SHUFFLE, epoch as u64);
        let mut aug_rng = stream(cfg.seed, domain::AUGMENT, epoch as u64);
        let mut dropout_rng = stream(cfg.seed, domain::DROPOUT, epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // Augmented copies live only for the batch.
            let staged: Vec<(LineImage, usize)> = chunk
                .iter()
                .map(|&i| {
                    let (img, label) = &train_set[i];
                    let img = match &cfg.augmentation {
                        Some(aug) => augment(img, aug, &mut aug_rng),
                        None => img.clone(),
                    };
                    (img, *label)
                })
                .collect();
            let batch: Vec<(&LineImage, usize)> = staged.iter().map(|(i, l)| (i, *l)).collect();
            epoch_loss += sgd_step(&mut model, &batch, cfg, &mut dropout_rng, &mut vel)? as f64;
            batches += 1;
        }
        let mean_loss = (epoch_loss / batches.max(1) as f64) as f32;
        history.loss.push(mean_loss);
        if !val_set.is_empty() {
            history.val_accuracy.push(accuracy_labeled(&model, val_set)?);
        }
        model.train_meta.final_loss = mean_loss;
    }
    model.train_meta.epochs = cfg.epochs;
    model.train_meta.seed = cfg.seed;
    Ok((model, history))
}

pub fn dataset_pairs(data: &Dataset) -> Vec<(LineImage, usize)> {
    data.samples
        .iter()
        .map(|s| (s.image.clone(), s.label.as_u8() as usize))
        .collect()
}

/// Trains on a dataset's track-state labels.
pub fn train(
    spec: &ModelSpec,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(FloatModel, TrainHistory)> {
    let tr = dataset_pairs(train_set);
    let va = val_set.map(dataset_pairs).unwrap_or_default();
    train_labeled(spec, &tr, &va, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

pub fn accuracy_labeled(model: &FloatModel, data: &[(LineImage, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (img, label) in data {
        let logits = super::model::forward(model, img)?;
        if argmax(&logits) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn evaluate(model: &FloatModel, data: &Dataset) -> Result<EvalReport> {
    let classes = model.spec.classes;
    let mut confusion = vec![vec![0usize; classes]; classes];
    for s in &data.samples {
        let pred = super::model::predict(model, &s.image)?;
        confusion[s.label.as_u8() as usize][pred] += 1;
    }
    let total = data.samples.len();
    let trace: usize = (0..classes).map(|i| confusion[i][i]).sum();
    Ok(EvalReport {
        accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        confusion,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::model::Arch;
    use crate::simenv::{generate_dataset, DatasetSpec, Origin};

    fn tiny_data(seed: u64) -> (Dataset, Dataset) {
        generate_dataset(&DatasetSpec::dset(Origin::D20, 4, 2, seed)).unwrap()
    }

    #[test]
    fn zero_lr_rejected_but_tiny_lr_keeps_params_close() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_init_model() {
        let (train_set, _) = tiny_data(1);
        let spec = Arch::Vnn1.spec(128);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let (model, history) = train(&spec, &train_set, None, &cfg).unwrap();
        let init = FloatModel::init(&spec, 9);
        assert_eq!(model.params, init.params);
        assert!(history.loss.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (train_set, test_set) = tiny_data(2);
        let spec = Arch::Vnn1.spec(128);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let (a, _) = train(&spec, &train_set, Some(&test_set), &cfg).unwrap();
        let (b, _) = train(&spec, &train_set, Some(&test_set), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn single_sample_overfit() {
        let (train_set, _) = tiny_data(3);
        let one = Dataset {
            samples: vec![train_set.samples[0].clone()],
            split: train_set.split,
            manifest: train_set.manifest.clone(),
        };
        let spec = Arch::Vnn1.spec(128);
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 1,
            lr: 0.05,
            momentum: 0.9,
            augmentation: None,
            dropout: 0.0,
            seed: 1,
        };
        let (_, history) = train(&spec, &one, None, &cfg).unwrap();
        let best = history.loss.iter().copied().fold(f32::INFINITY, f32::min);
        assert!(best < 0.01, "failed to overfit one sample: best loss {best}");
    }

    #[test]
    fn constant_classifier_scores_one_seventh() {
        let (_, test_set) = tiny_data(4);
        let spec = Arch::Vnn1.spec(128);
        let mut model = FloatModel::init(&spec, 0);
        for p in &mut model.params {
            p.w.data_mut().fill(0.0);
            p.b.fill(0.0);
        }
        // Bias class 0 up: the model always answers class 0.
        model.params.last_mut().unwrap().b[0] = 1.0;
        let report = evaluate(&model, &test_set).unwrap();
        assert!((report.accuracy - 1.0 / 7.0).abs() < 1e-9);
        // Confusion row sums are the per-class counts.
        for (row, count) in report.confusion.iter().zip(test_set.per_class_counts()) {
            assert_eq!(row.iter().sum::<usize>(), count);
        }
    }

    #[test]
    fn evaluate_matches_streaming_prediction() {
        let (train_set, test_set) = tiny_data(5);
        let spec = Arch::Vnn1.spec(128);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let (model, _) = train(&spec, &train_set, None, &cfg).unwrap();
        let report = evaluate(&model, &test_set).unwrap();
        let mut correct = 0usize;
        for s in &test_set.samples {
            if super::super::model::predict(&model, &s.image).unwrap() == s.label.as_u8() as usize {
                correct += 1;
            }
        }
        assert_eq!(report.accuracy, correct as f64 / test_set.samples.len() as f64);
    }

    #[test]
    fn augment_is_bounded_and_deterministic() {
        let (train_set, _) = tiny_data(6);
        let img = &train_set.samples[0].image;
        let aug = Augmentation::default();
        let mut r1 = stream(1, domain::AUGMENT, 0);
        let mut r2 = stream(1, domain::AUGMENT, 0);
        let a = augment(img, &aug, &mut r1);
        let b = augment(img, &aug, &mut r2);
        assert_eq!(a, b);
        assert_eq!(a.width(), img.width());
    }
}
