//! Quick wall-clock timing of single kernels. The criterion suite in the
//! bench crate is the careful version; this is for ad-hoc shapes.

use std::time::Instant;

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::exit::{ExitClass, Failure};
use mfcm_core::dsp::fft::fft;
use mfcm_core::dsp::mel_spectrogram;
use mfcm_core::model::{MfcmNet, MfcmNetConfig};
use mfcm_core::tensor::{ConvSpec, Tape, Tensor};
use mfcm_core::{AudioClip, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchOp {
    Fft,
    Conv2d,
    Depthwise,
    Mel,
    Forward,
}

fn parse_shape(s: Option<&str>, default: &[usize]) -> Result<Vec<usize>, Failure> {
    let Some(s) = s else {
        return Ok(default.to_vec());
    };
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::new(ExitClass::Usage, format!("bad --shape {s:?}: {e}")))?;
    if dims.len() != default.len() || dims.contains(&0) {
        return Err(Failure::new(
            ExitClass::Usage,
            format!("--shape needs {} positive dims, got {s:?}", default.len()),
        ));
    }
    Ok(dims)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn time(iters: usize, mut f: impl FnMut() -> Result<(), Failure>) -> Result<f64, Failure> {
    f()?;
    let start = Instant::now();
    for _ in 0..iters {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / iters as f64)
}

pub fn run(cfg: &RunConfig, op: BenchOp, shape: Option<&str>, iters: usize) -> Result<(), Failure> {
    if iters == 0 {
        return Err(Failure::new(ExitClass::Usage, "--iters must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let (dims, secs, items) = match op {
        BenchOp::Fft => {
            let dims = parse_shape(shape, &[1024])?;
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let secs = time(iters, || fft(&x).map(|_| ()).map_err(Failure::from))?;
            (dims, secs, 1.0)
        }
        BenchOp::Conv2d | BenchOp::Depthwise => {
            let dims = parse_shape(shape, &[8, 16, 56, 56])?;
            let c = dims[1];
            let spec = if op == BenchOp::Conv2d {
                ConvSpec::new(c, c, 3, 1, 1)
            } else {
                ConvSpec::depthwise(c, 3, 1, 1)
            };
            let x = random(&dims, &mut rng);
            let w = random(&spec.weight_shape(), &mut rng);
            let secs = time(iters, || {
                let mut tape = Tape::new();
                let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
                if spec.groups == 1 {
                    tape.conv2d(xv, wv, None, spec)?;
                } else {
                    tape.depthwise_conv2d(xv, wv, None, spec)?;
                }
                Ok(())
            })?;
            (dims.clone(), secs, dims[0] as f64)
        }
        BenchOp::Mel => {
            let dims = parse_shape(shape, &[16000])?;
            let clip = AudioClip::new(
                (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
                cfg.dsp.sample_rate,
            );
            let bank = cfg.dsp.filterbank()?;
            let framing = cfg.dsp.framing();
            let secs = time(iters, || {
                mel_spectrogram(&clip, &framing, &bank)?;
                Ok(())
            })?;
            (dims, secs, 1.0)
        }
        BenchOp::Forward => {
            let dims = parse_shape(shape, &[8, 3, 224, 224])?;
            let net = MfcmNet::new(MfcmNetConfig::micro(dims[2], dims[3]), cfg.train.seed)?;
            if dims[1] != 3 {
                return Err(Failure::new(ExitClass::Usage, "forward input needs 3 channels"));
            }
            let x = random(&dims, &mut rng);
            let secs = time(iters, || {
                net.logits(&x)?;
                Ok(())
            })?;
            (dims.clone(), secs, dims[0] as f64)
        }
    };
    println!(
        "{}",
        json!({
            "op": format!("{op:?}").to_lowercase(),
            "shape": dims,
            "iters": iters,
            "mean_seconds": secs,
            "items_per_second": items / secs,
        })
    );
    Ok(())
}
