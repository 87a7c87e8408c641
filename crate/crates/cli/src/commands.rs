use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::exit::{io_failure, ExitClass, Failure};
use mfcm_core::dsp::export::{mel_to_csv, mel_to_pgm, mfcc_to_csv};
use mfcm_core::dsp::{mfcc, to_model_input};
use mfcm_core::model::{network_grad_check, perturb_batch_norm, MfcmNet, MfcmNetConfig};
use mfcm_core::tensor::gradcheck::{op_suite, GRAD_EPS};
use mfcm_core::tensor::io::{write_tensor, DType};
use mfcm_core::tensor::{BatchNormMode, Tensor};
use mfcm_core::train::pipeline::{run_evaluation, run_inference, run_training, write_scores};
use mfcm_core::train::Split;
use mfcm_core::wav::read_wav;
use mfcm_core::RunConfig;

const DEFAULT_OUT: &str = "mfcm-out";

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn extract(cfg: &RunConfig, wav: &Path, prefix: Option<PathBuf>, out: Option<&Path>) -> Result<(), Failure> {
    let prefix = prefix.unwrap_or_else(|| {
        let stem = wav.file_stem().map_or_else(|| "clip".into(), |s| s.to_owned());
        out.unwrap_or(Path::new(".")).join(stem)
    });
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    let (_, clip) = read_wav(wav)?;
    let features = cfg.dsp.analyze(&clip)?;
    let cepstrum = mfcc(&features.power, cfg.dsp.n_mfcc, cfg.dsp.log_base)?;
    let input = to_model_input(&features.decibel, cfg.train.input_height, cfg.train.input_width)?;

    let files = [
        with_suffix(&prefix, ".mel.csv"),
        with_suffix(&prefix, ".mel.pgm"),
        with_suffix(&prefix, ".mfcc.csv"),
        with_suffix(&prefix, ".input.mfct"),
    ];
    write_file(&files[0], mel_to_csv(&features.decibel).as_bytes())?;
    write_file(&files[1], &mel_to_pgm(&features.decibel))?;
    write_file(&files[2], mfcc_to_csv(&cepstrum).as_bytes())?;
    let mut tensor = Vec::new();
    write_tensor(&mut tensor, &input, DType::F32).map_err(|e| Failure::new(ExitClass::InputParse, e))?;
    write_file(&files[3], &tensor)?;

    eprintln!(
        "{}: {} frames × {} mel bands, {} coefficients",
        wav.display(),
        features.decibel.frames(),
        features.decibel.bands(),
        cepstrum.n_coeffs()
    );
    print_json(&json!({
        "frames": features.decibel.frames(),
        "n_mels": features.decibel.bands(),
        "n_mfcc": cepstrum.n_coeffs(),
        "input_shape": input.shape(),
        "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
    }));
    Ok(())
}

pub fn train(cfg: &RunConfig, manifest: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let out = out.unwrap_or(Path::new(DEFAULT_OUT));
    let report = run_training(manifest, cfg, out, |rec, _| {
        let val = rec.val.and_then(|m| m.accuracy);
        eprintln!(
            "epoch {:>3}  loss {:.5}  val accuracy {}",
            rec.epoch,
            rec.train_loss,
            val.map_or_else(|| "undefined".into(), |a| format!("{a:.4}"))
        );
        ControlFlow::Continue(())
    })?;
    print_json(&json!({
        "best_checkpoint": report.best_checkpoint,
        "last_checkpoint": report.last_checkpoint,
        "epoch_log": report.epoch_log,
        "best_epoch": report.best_epoch,
        "epochs": report.history,
    }));
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, split: Split, out: Option<&Path>) -> Result<(), Failure> {
    let result = run_evaluation(checkpoint, manifest, split, cfg)?;
    let scores = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            let path = dir.join(format!("scores-{split}.csv"));
            let f = File::create(&path).map_err(|e| io_failure(&path, e))?;
            write_scores(BufWriter::new(f), &result.scores).map_err(|e| Failure::new(ExitClass::InputParse, e))?;
            Some(path)
        }
        None => None,
    };
    let m = result.metrics;
    print_json(&json!({
        "split": split,
        "samples": result.scores.len(),
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "f1_standard": m.f1_standard,
        "f1_halved": m.f1_halved,
        "confusion": result.confusion,
        "scores_csv": scores,
    }));
    Ok(())
}

pub fn infer(cfg: &RunConfig, checkpoint: &Path, wav: &Path) -> Result<(), Failure> {
    let r = run_inference(checkpoint, wav, cfg)?;
    println!("{}", serde_json::to_string(&r).expect("inference serializes"));
    Ok(())
}

pub fn gradcheck(seed: u64) -> Result<(), Failure> {
    let ops = op_suite(seed)?;
    let mut net = MfcmNet::new(MfcmNetConfig::micro(12, 12), seed)?;
    perturb_batch_norm(&mut net, seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[1, 3, 12, 12], |_| rng.random_range(0.0..1.0));
    let full = network_grad_check(&net, &x, &[1.0], BatchNormMode::Eval, GRAD_EPS)?;

    let mut rows: Vec<(&str, f64, f64, usize)> = ops
        .iter()
        .map(|o| (o.name, o.report.max_rel_error, o.threshold, o.report.checked))
        .collect();
    rows.push(("micro_network", full.max_rel_error, 1e-4, full.checked));
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let mut failed = 0;
    let _ = writeln!(w, "op,max_rel_error,threshold,checked,status");
    for (name, err, threshold, checked) in &rows {
        let ok = err < threshold;
        failed += usize::from(!ok);
        let _ = writeln!(
            w,
            "{name},{err:.3e},{threshold:.0e},{checked},{}",
            if ok { "pass" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(Failure::new(
            ExitClass::NumericFault,
            format!("{failed} gradient check(s) over threshold"),
        ));
    }
    eprintln!("all {} gradient checks passed", rows.len());
    Ok(())
}
