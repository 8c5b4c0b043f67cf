//! Training loop: seeded shuffling, cross-entropy over mini-batches, Adam
//! updates, per-epoch logging, and best-validation checkpoint selection.

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::layers;
use crate::manifest::{DatasetManifest, Label};
use crate::model::{preprocess, stack_batch, Model, ModelConfig};
use crate::rng::{derive_seed, DetRng};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Initial learning rate; see `lr_decay`.
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Per-epoch multiplicative decay of the learning rate (1.0 = constant).
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
}

fn default_lr_decay() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.001,
            epochs: 30,
            seed: 42,
            shuffle: true,
            lr_decay: 1.0,
        }
    }
}

/// One line of the JSONL training log. Epoch 0 is the untrained baseline.
/// `loss` and both accuracies are measured after the epoch's updates, in
/// inference mode over the full sets, so entries are directly comparable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<EpochStats>,
}

struct LoadedSet {
    inputs: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

fn load_set(manifest: &DatasetManifest, config: &ModelConfig) -> Result<LoadedSet> {
    let mut inputs = Vec::with_capacity(manifest.len());
    let mut labels = Vec::with_capacity(manifest.len());
    for rec in &manifest.records {
        let img = ImageRGB::load_png(manifest.resolve(&rec.image_path))?;
        inputs.push(preprocess::<f32>(config, &img)?);
        labels.push(rec.label.class_index());
    }
    Ok(LoadedSet { inputs, labels })
}

/// Mean loss and accuracy of the current model over a set, inference mode.
fn measure(model: &Model<f32>, set: &LoadedSet, batch_size: usize) -> Result<(f64, f64)> {
    let mut total_loss = 0.0f64;
    let mut correct = 0usize;
    let mut idx = 0usize;
    while idx < set.inputs.len() {
        let end = (idx + batch_size).min(set.inputs.len());
        let batch = stack_batch(&set.inputs[idx..end])?;
        let labels = &set.labels[idx..end];
        let logits = model.forward_infer(&batch)?;
        let (loss, _) = layers::cross_entropy_forward(&logits, labels)?;
        total_loss += loss.item() as f64 * (end - idx) as f64;
        let k = logits.shape()[1];
        for (row, &y) in labels.iter().enumerate() {
            let slice = &logits.data()[row * k..(row + 1) * k];
            let mut best = 0usize;
            for j in 1..k {
                if slice[j] > slice[best] {
                    best = j;
                }
            }
            if best == y {
                correct += 1;
            }
        }
        idx = end;
    }
    let n = set.inputs.len() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

/// Trains a fresh model on the manifest. Fully determined by
/// `(manifest, model_cfg, train_cfg)`: initialization, shuffle order, and
/// batch statistics all flow from the config seed.
///
/// With a validation manifest, the returned model is the epoch with the best
/// validation accuracy (earliest on ties); otherwise the final epoch.
pub fn train(
    manifest: &DatasetManifest,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    val: Option<&DatasetManifest>,
) -> Result<TrainOutcome> {
    if train_cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if train_cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument("learning_rate must be positive".into()));
    }
    let normals = manifest.count_label(Label::Normal);
    let glitches = manifest.count_label(Label::Glitch);
    if normals == 0 || glitches == 0 {
        return Err(Error::Dataset(format!(
            "training needs both classes; manifest has {normals} normal and {glitches} glitch"
        )));
    }

    let train_set = load_set(manifest, model_cfg)?;
    let val_set = val.map(|m| load_set(m, model_cfg)).transpose()?;

    let mut model: Model<f32> = Model::build(model_cfg.clone(), train_cfg.seed)?;
    let mut adam = AdamState::new(&model.trainable_shapes(), train_cfg.learning_rate as f32);

    let mut log = Vec::with_capacity(train_cfg.epochs + 1);
    let (loss0, acc0) = measure(&model, &train_set, train_cfg.batch_size)?;
    let val0 = val_set
        .as_ref()
        .map(|s| measure(&model, s, train_cfg.batch_size).map(|(_, a)| a))
        .transpose()?;
    log.push(EpochStats { epoch: 0, loss: loss0, train_acc: acc0, val_acc: val0 });

    let mut best: Option<(f64, Model<f32>)> = None;
    for epoch in 1..=train_cfg.epochs {
        adam.learning_rate =
            (train_cfg.learning_rate * train_cfg.lr_decay.powi(epoch as i32 - 1)) as f32;
        let mut order: Vec<usize> = (0..train_set.inputs.len()).collect();
        if train_cfg.shuffle {
            let mut rng = DetRng::new(derive_seed(train_cfg.seed, 0xE70C + epoch as u64));
            rng.shuffle(&mut order);
        }

        for chunk in order.chunks(train_cfg.batch_size) {
            let inputs: Vec<Tensor<f32>> =
                chunk.iter().map(|&i| train_set.inputs[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let batch = stack_batch(&inputs)?;

            let mut tape = Tape::new();
            let graph = model.forward_train(&mut tape, batch)?;
            let loss = tape.cross_entropy(graph.logits, &labels)?;
            let mut grads = tape.backward(loss)?;

            let grad_tensors: Vec<Tensor<f32>> = graph
                .params
                .iter()
                .map(|&v| {
                    grads.take(v).ok_or_else(|| {
                        Error::ShapeMismatch("missing parameter gradient".into())
                    })
                })
                .collect::<Result<_>>()?;
            let grad_refs: Vec<&Tensor<f32>> = grad_tensors.iter().collect();
            let mut params = model.trainable_mut();
            adam.step(&mut params, &grad_refs)?;
        }

        let (train_loss, train_acc) = measure(&model, &train_set, train_cfg.batch_size)?;
        let val_acc = val_set
            .as_ref()
            .map(|s| measure(&model, s, train_cfg.batch_size).map(|(_, a)| a))
            .transpose()?;
        if let Some(acc) = val_acc {
            let improved = best.as_ref().map(|(b, _)| acc > *b).unwrap_or(true);
            if improved {
                best = Some((acc, model.clone()));
            }
        }
        log.push(EpochStats { epoch, loss: train_loss, train_acc, val_acc });
    }

    let model = match best {
        Some((_, snapshot)) => snapshot,
        None => model,
    };
    Ok(TrainOutcome { model, log })
}

/// Writes the epoch log as JSON Lines.
pub fn save_log(log: &[EpochStats], path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for entry in log {
        let line = serde_json::to_string(entry).map_err(|e| Error::json(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
