//! Plain-text and image dumps of spectrograms for inspection.

use std::fmt::Write as _;

use super::mel::{MelScale, MelSpectrogram};
use super::mfcc::MfccMatrix;

fn csv_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> String {
    let mut out = String::new();
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// One line per frame, one column per mel band.
pub fn mel_to_csv(ms: &MelSpectrogram) -> String {
    csv_rows((0..ms.frames()).map(|t| ms.row(t)))
}

/// One line per frame, one column per coefficient.
pub fn mfcc_to_csv(m: &MfccMatrix) -> String {
    csv_rows((0..m.frames()).map(|t| m.row(t)))
}

/// Binary PGM (P5): width = frames, height = mel bands with the highest
/// band on the top row. Decibel values map linearly from `[-top_db, 0]`
/// onto `[0, 255]`. Power-scale input is mapped from `[0, max]`.
pub fn mel_to_pgm(ms: &MelSpectrogram) -> Vec<u8> {
    let (w, h) = (ms.frames(), ms.bands());
    let map: Box<dyn Fn(f64) -> u8> = match ms.scale {
        MelScale::Decibel { top_db } => {
            Box::new(move |v: f64| (((v + top_db) / top_db).clamp(0.0, 1.0) * 255.0).round() as u8)
        }
        MelScale::Power => {
            let max = ms.values().iter().cloned().fold(0.0, f64::max);
            Box::new(move |v: f64| {
                if max > 0.0 {
                    ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8
                } else {
                    0
                }
            })
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for band in (0..h).rev() {
        for t in 0..w {
            out.push(map(ms.get(t, band)));
        }
    }
    out
}
