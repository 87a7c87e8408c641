//! File-level train, evaluate and infer flows used by the command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use super::features::FeatureExtractor;
use super::manifest::{load_manifest, Label, Split};
use super::metrics::format_metric;
use super::trainer::{evaluate, train, EpochRecord, Evaluation, ScoreRow};
use super::TrainError;
use crate::config::RunConfig;
use crate::model::{load_checkpoint, save_checkpoint, MfcmNet};
use crate::wav::read_wav;

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,val_accuracy,val_precision,val_recall,val_f1_standard,val_f1_halved";
pub const LAST_CHECKPOINT: &str = "last.mfck";
pub const EPOCH_LOG: &str = "epochs.csv";
pub const RESOLVED_CONFIG: &str = "config.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn features_for(run: &RunConfig) -> Result<FeatureExtractor, TrainError> {
    let fx = FeatureExtractor::new(run.dsp.clone(), run.train.input_height, run.train.input_width)
        .map_err(|e| TrainError::Config(format!("dsp: {e}")))?;
    Ok(match &run.train.feature_cache {
        Some(dir) => fx.with_disk_cache(dir),
        None => fx,
    })
}

pub fn write_epoch_log<W: Write>(w: &mut W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "{EPOCH_LOG_HEADER}")?;
    for r in history {
        let m = |f: fn(&super::metrics::Metrics) -> Option<f64>| format_metric(r.val.as_ref().and_then(f));
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            m(|v| v.accuracy),
            m(|v| v.precision),
            m(|v| v.recall),
            m(|v| v.f1_standard),
            m(|v| v.f1_halved)
        )?;
    }
    Ok(())
}

/// `path,score,prediction,label` rows.
pub fn write_scores<W: Write>(w: W, rows: &[ScoreRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["path", "score", "prediction", "label"])?;
    for r in rows {
        out.write_record([
            r.path.to_string_lossy().as_ref(),
            &r.score.to_string(),
            r.prediction.as_str(),
            r.label.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub epoch_log: PathBuf,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains on the manifest at `manifest_root` and writes the best and last
/// checkpoints, the epoch log and the resolved configuration to `out_dir`.
pub fn run_training(
    manifest_root: &Path,
    run: &RunConfig,
    out_dir: &Path,
    on_epoch: impl FnMut(&EpochRecord, &MfcmNet) -> ControlFlow<()>,
) -> Result<TrainReport, TrainError> {
    run.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    let manifest = load_manifest(manifest_root)?;
    let features = features_for(run)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let outcome = train(&manifest, &run.model, &run.train, &features, on_epoch)?;

    let best_checkpoint = out_dir.join(&run.train.checkpoint_path);
    let last_checkpoint = out_dir.join(LAST_CHECKPOINT);
    save_checkpoint(&best_checkpoint, &outcome.best)?;
    save_checkpoint(&last_checkpoint, &outcome.last)?;
    let epoch_log = out_dir.join(EPOCH_LOG);
    let mut w = BufWriter::new(File::create(&epoch_log).map_err(io_err(&epoch_log))?);
    write_epoch_log(&mut w, &outcome.history)
        .and_then(|_| w.flush())
        .map_err(io_err(&epoch_log))?;
    let cfg_path = out_dir.join(RESOLVED_CONFIG);
    let json = serde_json::to_string_pretty(run).expect("config serializes");
    std::fs::write(&cfg_path, json).map_err(io_err(&cfg_path))?;
    Ok(TrainReport {
        best_checkpoint,
        last_checkpoint,
        epoch_log,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    })
}

pub fn run_evaluation(
    checkpoint: &Path,
    manifest_root: &Path,
    split: Split,
    run: &RunConfig,
) -> Result<Evaluation, TrainError> {
    let net = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest_root)?;
    evaluate(&net, &manifest, split, &features_for(run)?, run.train.batch_size)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Inference {
    pub score: f64,
    pub prediction: Label,
}

pub fn run_inference(checkpoint: &Path, wav: &Path, run: &RunConfig) -> Result<Inference, TrainError> {
    let net = load_checkpoint(checkpoint)?;
    let features = features_for(run)?;
    if net.config.input_shape != features.input_shape() {
        return Err(TrainError::CheckpointMismatch(format!(
            "checkpoint expects input {:?}, features are {:?}",
            net.config.input_shape,
            features.input_shape()
        )));
    }
    let (_, clip) = read_wav(wav).map_err(|source| TrainError::Wav {
        path: wav.to_path_buf(),
        source,
    })?;
    let x = features.from_clip(&clip).map_err(|source| TrainError::Dsp {
        path: wav.to_path_buf(),
        source,
    })?;
    let [c, h, w] = features.input_shape();
    let x = x.reshape(&[1, c, h, w])?;
    let score = net.scores(&x)?[0];
    Ok(Inference {
        score,
        prediction: if score >= 0.5 { Label::Fake } else { Label::Real },
    })
}
