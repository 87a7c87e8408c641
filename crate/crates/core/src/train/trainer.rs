use std::ops::ControlFlow;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::manifest::{Label, Manifest, ManifestEntry, Split};
use super::metrics::{confusion, metrics_from_confusion, ConfusionMatrix, Metrics};
use super::optim::Adam;
use super::TrainError;
use crate::model::{forward, ForwardOptions, MfcmNet, MfcmNetConfig};
use crate::tensor::{Tape, TensorError};

/// The `train` section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub input_height: usize,
    pub input_width: usize,
    /// File name of the best-validation checkpoint inside the output
    /// directory.
    pub checkpoint_path: PathBuf,
    /// Directory for cached feature tensors; `None` disables the cache.
    pub feature_cache: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 1337,
            input_height: 224,
            input_width: 224,
            checkpoint_path: PathBuf::from("best.mfck"),
            feature_cache: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(format!("learning_rate {} is not a non-negative number", self.learning_rate));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err("input size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last completed epoch.
    pub last: MfcmNet,
    /// Parameters of the epoch with the highest validation accuracy (the
    /// latest such epoch on ties); the last epoch when there is no
    /// validation split.
    pub best: MfcmNet,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn labels_of(entries: &[&ManifestEntry]) -> Vec<f64> {
    entries.iter().map(|e| f64::from(e.label.value())).collect()
}

/// Trains from freshly initialized parameters. `on_epoch` sees each epoch's
/// record and the current network and may stop training early.
pub fn train(
    manifest: &Manifest,
    model: &MfcmNetConfig,
    cfg: &TrainConfig,
    features: &FeatureExtractor,
    mut on_epoch: impl FnMut(&EpochRecord, &MfcmNet) -> ControlFlow<()>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if model.input_shape != features.input_shape() {
        return Err(TrainError::Config(format!(
            "model input {:?} differs from feature shape {:?}",
            model.input_shape,
            features.input_shape()
        )));
    }
    let train_set = manifest.split(Split::Training);
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Training));
    }
    let val_set = manifest.split(Split::Validation);

    let mut net = MfcmNet::new(model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, MfcmNet)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let entries: Vec<&ManifestEntry> = idx.iter().map(|&i| train_set[i]).collect();
            let paths: Vec<&std::path::Path> = entries.iter().map(|e| e.path.as_path()).collect();
            let x = features.batch(&paths)?;
            let fault = |source: TensorError| TrainError::NumericalFault {
                epoch,
                batch,
                first_path: paths[0].to_path_buf(),
                source,
            };

            let mut tape = Tape::new();
            let p = net.params.bind(&mut tape, true);
            let xv = tape.constant(x);
            let out = forward(&mut tape, &net.config, &p, &mut net.bn, xv, ForwardOptions::train())
                .map_err(|e| fault(e.into()))?;
            let loss = tape.bce_with_logits(out.logits, &labels_of(&entries)).map_err(fault)?;
            tape.backward(loss).map_err(fault)?;
            let mut grads = Vec::new();
            p.visit(|_, &v| grads.push(tape.grad(v).cloned().expect("parameters are trainable")));
            adam.step(&mut net.params, &grads);
            let mut finite = true;
            net.params.visit(|_, t| finite &= t.is_finite());
            if !finite {
                return Err(fault(TensorError::NumericalFault { op: "adam" }));
            }
            loss_sum += tape.value(loss).data()[0] * idx.len() as f64;
        }
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_entries(&net, &val_set, features, cfg.batch_size)?.metrics)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val,
        };
        let acc = record.val.and_then(|m| m.accuracy).unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| acc >= *b) {
            best = Some((acc, epoch, net.clone()));
        }
        let flow = on_epoch(&record, &net);
        history.push(record);
        if flow.is_break() {
            break;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        last: net,
        best,
        best_epoch,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub path: PathBuf,
    pub score: f64,
    pub prediction: Label,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub scores: Vec<ScoreRow>,
}

/// Eval-mode scores at threshold 0.5 for one split.
pub fn evaluate(
    net: &MfcmNet,
    manifest: &Manifest,
    split: Split,
    features: &FeatureExtractor,
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    if net.config.input_shape != features.input_shape() {
        return Err(TrainError::CheckpointMismatch(format!(
            "checkpoint expects input {:?}, features are {:?}",
            net.config.input_shape,
            features.input_shape()
        )));
    }
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    evaluate_entries(net, &entries, features, batch_size)
}

fn evaluate_entries(
    net: &MfcmNet,
    entries: &[&ManifestEntry],
    features: &FeatureExtractor,
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    let chunks: Vec<Vec<f64>> = entries
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let paths: Vec<&std::path::Path> = chunk.iter().map(|e| e.path.as_path()).collect();
            let x = features.batch(&paths)?;
            Ok(net.scores(&x)?)
        })
        .collect::<Result<_, TrainError>>()?;
    let scores: Vec<f64> = chunks.into_iter().flatten().collect();
    let rows: Vec<ScoreRow> = entries
        .iter()
        .zip(&scores)
        .map(|(e, &s)| ScoreRow {
            path: e.path.clone(),
            score: s,
            prediction: if s >= 0.5 { Label::Fake } else { Label::Real },
            label: e.label,
        })
        .collect();
    let preds: Vec<u8> = rows.iter().map(|r| r.prediction.value()).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label.value()).collect();
    let cm = confusion(&preds, &labels)?;
    Ok(Evaluation {
        confusion: cm,
        metrics: metrics_from_confusion(&cm),
        scores: rows,
    })
}
