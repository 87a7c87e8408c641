//! RIFF/WAVE ingestion.
//!
//! Decodes PCM-16, PCM-32 and IEEE float-32 WAV images into a mono
//! [`AudioClip`] with amplitudes normalized to `[-1, 1]`. Multi-channel
//! input is mixed down by the arithmetic mean of channels. Chunks other
//! than `fmt ` and `data` are skipped.

use std::path::Path;

use thiserror::Error;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

/// Tolerance on the unit amplitude range.
pub const AMPLITUDE_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported encoding: format code {format}, {bits} bits per sample")]
    UnsupportedEncoding { format: u16, bits: u16 },
    #[error("truncated data: chunk declares {declared} bytes but only {available} remain")]
    TruncatedData { declared: usize, available: usize },
    #[error("data chunk holds no samples")]
    NoSamples,
    #[error("non-finite sample at frame {0}")]
    NonFiniteSample(usize),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    PcmInteger,
    IeeeFloat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WavFormatInfo {
    pub num_channels: u16,
    pub bits_per_sample: u16,
    pub sample_format: SampleFormat,
    pub sample_rate: u32,
    pub num_frames: usize,
}

impl WavFormatInfo {
    pub fn bytes_per_frame(&self) -> usize {
        self.num_channels as usize * (self.bits_per_sample as usize / 8)
    }
}

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_path: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            source_path: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Sample encodings the writer can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Pcm32,
    Float32,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn malformed(msg: &str) -> WavError {
    WavError::MalformedHeader(msg.to_string())
}

/// Parses a complete WAV file image.
pub fn parse_wav(bytes: &[u8]) -> Result<(WavFormatInfo, AudioClip), WavError> {
    let mut r = Reader { bytes, pos: 0 };
    let riff = r.take(4).ok_or_else(|| malformed("file shorter than RIFF header"))?;
    if riff != b"RIFF" {
        return Err(malformed("missing RIFF magic"));
    }
    r.u32().ok_or_else(|| malformed("file shorter than RIFF header"))?;
    let wave = r.take(4).ok_or_else(|| malformed("file shorter than RIFF header"))?;
    if wave != b"WAVE" {
        return Err(malformed("missing WAVE form type"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let data: &[u8] = loop {
        if r.remaining() < 8 {
            return Err(malformed("no data chunk"));
        }
        let id = r.take(4).expect("checked length");
        let len = r.u32().expect("checked length") as usize;
        match id {
            b"fmt " => {
                let body = r.take(len).ok_or_else(|| malformed("fmt chunk truncated"))?;
                if len < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                let mut f = Reader { bytes: body, pos: 0 };
                let format = f.u16().expect("len >= 16");
                let channels = f.u16().expect("len >= 16");
                let rate = f.u32().expect("len >= 16");
                let _byte_rate = f.u32();
                let _block_align = f.u16();
                let bits = f.u16().expect("len >= 16");
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                if fmt.is_none() {
                    return Err(malformed("data chunk precedes fmt chunk"));
                }
                let available = r.remaining();
                break r.take(len).ok_or(WavError::TruncatedData {
                    declared: len,
                    available,
                })?;
            }
            _ => {
                // Unknown chunk (LIST, fact, ...): skip including pad byte.
                if len > r.remaining() {
                    return Err(malformed("chunk truncated"));
                }
                let skip = (len + (len & 1)).min(r.remaining());
                r.take(skip);
            }
        }
    };

    let (format, channels, rate, bits) = fmt.expect("checked above");
    let sample_format = match (format, bits) {
        (FORMAT_PCM, 16) | (FORMAT_PCM, 32) => SampleFormat::PcmInteger,
        (FORMAT_IEEE_FLOAT, 32) => SampleFormat::IeeeFloat,
        _ => return Err(WavError::UnsupportedEncoding { format, bits }),
    };
    if !(1..=2).contains(&channels) {
        return Err(malformed("channel count must be 1 or 2"));
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    let mut info = WavFormatInfo {
        num_channels: channels,
        bits_per_sample: bits,
        sample_format,
        sample_rate: rate,
        num_frames: 0,
    };
    let frame_bytes = info.bytes_per_frame();
    if data.len() % frame_bytes != 0 {
        return Err(malformed("data length is not a whole number of frames"));
    }
    info.num_frames = data.len() / frame_bytes;
    if info.num_frames == 0 {
        return Err(WavError::NoSamples);
    }

    let width = bits as usize / 8;
    let decode = |b: &[u8]| -> f64 {
        match (sample_format, bits) {
            (SampleFormat::PcmInteger, 16) => i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
            (SampleFormat::PcmInteger, _) => {
                i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2147483648.0
            }
            (SampleFormat::IeeeFloat, _) => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        }
    };

    let mut samples = Vec::with_capacity(info.num_frames);
    for (i, frame) in data.chunks_exact(frame_bytes).enumerate() {
        let sum: f64 = frame.chunks_exact(width).map(decode).sum();
        let v = sum / channels as f64;
        if !v.is_finite() {
            return Err(WavError::NonFiniteSample(i));
        }
        samples.push(v.clamp(-1.0, 1.0));
    }
    Ok((info, AudioClip::new(samples, rate)))
}

/// Reads and parses a WAV file from disk.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(WavFormatInfo, AudioClip), WavError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (info, mut clip) = parse_wav(&bytes)?;
    clip.source_path = Some(path.display().to_string());
    Ok((info, clip))
}

/// Encodes a mono clip as a canonical 44-byte-header WAV image.
///
/// Integer encodings round to nearest and saturate at full scale.
pub fn encode_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let (format, bits) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 16u16),
        WavEncoding::Pcm32 => (FORMAT_PCM, 32),
        WavEncoding::Float32 => (FORMAT_IEEE_FLOAT, 32),
    };
    let width = bits as u32 / 8;
    let data_len = clip.samples.len() as u32 * width;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * width).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Pcm32 => {
                let v = (s * 2147483648.0).round().clamp(-2147483648.0, 2147483647.0) as i32;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    out
}

pub fn write_wav(
    path: impl AsRef<Path>,
    clip: &AudioClip,
    encoding: WavEncoding,
) -> std::io::Result<()> {
    std::fs::write(path, encode_wav(clip, encoding))
}

/// Linear-interpolation resampling onto a uniform grid at `target_rate`.
///
/// Output length is `ceil(n * target / source)`. Positions past the last
/// input sample hold the last sample.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target_rate must be positive");
    if target_rate == clip.sample_rate || clip.samples.is_empty() {
        return AudioClip {
            sample_rate: target_rate,
            ..clip.clone()
        };
    }
    let n = clip.samples.len();
    let src = clip.sample_rate as u64;
    let dst = target_rate as u64;
    let out_len = ((n as u64 * dst).div_ceil(src)) as usize;
    let last = clip.samples[n - 1];
    let samples = (0..out_len)
        .map(|i| {
            // Exact integer position numerator keeps grid points exact.
            let num = i as u64 * src;
            let idx = (num / dst) as usize;
            if idx + 1 >= n {
                return last;
            }
            let frac = (num % dst) as f64 / dst as f64;
            let a = clip.samples[idx];
            let b = clip.samples[idx + 1];
            if frac == 0.0 {
                a
            } else {
                a + (b - a) * frac
            }
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: target_rate,
        source_path: clip.source_path.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(channels: u16, rate: u32, bits: u16, format: u16, data_len: u32) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut h = Vec::new();
        h.extend_from_slice(b"RIFF");
        h.extend_from_slice(&(36 + data_len).to_le_bytes());
        h.extend_from_slice(b"WAVE");
        h.extend_from_slice(b"fmt ");
        h.extend_from_slice(&16u32.to_le_bytes());
        h.extend_from_slice(&format.to_le_bytes());
        h.extend_from_slice(&channels.to_le_bytes());
        h.extend_from_slice(&rate.to_le_bytes());
        h.extend_from_slice(&(rate * block as u32).to_le_bytes());
        h.extend_from_slice(&block.to_le_bytes());
        h.extend_from_slice(&bits.to_le_bytes());
        h.extend_from_slice(b"data");
        h.extend_from_slice(&data_len.to_le_bytes());
        h
    }

    #[test]
    fn canonical_pcm16_scaling() {
        let mut bytes = header(1, 8000, 16, 1, 8);
        assert_eq!(bytes.len(), 44);
        for v in [0i16, 16384, -16384, 32767] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (info, clip) = parse_wav(&bytes).unwrap();
        assert_eq!(info.num_frames, 4);
        assert_eq!(info.sample_rate, 8000);
        assert_eq!(clip.samples, vec![0.0, 0.5, -0.5, 32767.0 / 32768.0]);
    }

    #[test]
    fn stereo_identical_channels_mix_to_channel() {
        let chan = [100i16, -2000, 31000, -32768, 7];
        let mut bytes = header(2, 16000, 16, 1, (chan.len() * 4) as u32);
        for v in chan {
            bytes.extend_from_slice(&v.to_le_bytes());
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (info, clip) = parse_wav(&bytes).unwrap();
        assert_eq!(info.num_channels, 2);
        let expect: Vec<f64> = chan.iter().map(|&v| v as f64 / 32768.0).collect();
        assert_eq!(clip.samples, expect);
    }

    #[test]
    fn stereo_mixdown_is_mean() {
        let mut bytes = header(2, 16000, 16, 1, 4);
        bytes.extend_from_slice(&16384i16.to_le_bytes());
        bytes.extend_from_slice(&0i16.to_le_bytes());
        let (_, clip) = parse_wav(&bytes).unwrap();
        assert_eq!(clip.samples, vec![0.25]);
    }

    #[test]
    fn rifx_is_malformed() {
        let mut bytes = header(1, 8000, 16, 1, 2);
        bytes[..4].copy_from_slice(b"RIFX");
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(parse_wav(&bytes), Err(WavError::MalformedHeader(_))));
    }

    #[test]
    fn missing_wave_is_malformed() {
        let mut bytes = header(1, 8000, 16, 1, 2);
        bytes[8..12].copy_from_slice(b"AVI ");
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(parse_wav(&bytes), Err(WavError::MalformedHeader(_))));
    }

    #[test]
    fn unsupported_codes() {
        let mut bytes = header(1, 8000, 16, 2, 2);
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(
            parse_wav(&bytes),
            Err(WavError::UnsupportedEncoding { format: 2, bits: 16 })
        ));
        let mut bytes = header(1, 8000, 24, 1, 3);
        bytes.extend_from_slice(&[0, 0, 0]);
        assert!(matches!(
            parse_wav(&bytes),
            Err(WavError::UnsupportedEncoding { format: 1, bits: 24 })
        ));
    }

    #[test]
    fn truncated_data() {
        let mut bytes = header(1, 8000, 16, 1, 8);
        bytes.extend_from_slice(&[0, 0, 1, 0]);
        assert!(matches!(
            parse_wav(&bytes),
            Err(WavError::TruncatedData {
                declared: 8,
                available: 4
            })
        ));
    }

    #[test]
    fn skips_list_chunk() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        let canonical = header(1, 22050, 16, 1, 4);
        bytes.extend_from_slice(&canonical[12..36]);
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(b"INFOx\0");
        bytes.extend_from_slice(&canonical[36..44]);
        bytes.extend_from_slice(&(-16384i16).to_le_bytes());
        bytes.extend_from_slice(&8192i16.to_le_bytes());
        let (info, clip) = parse_wav(&bytes).unwrap();
        assert_eq!(info.sample_rate, 22050);
        assert_eq!(clip.samples, vec![-0.5, 0.25]);
    }

    #[test]
    fn float_and_pcm32_decode() {
        let clip = AudioClip::new(vec![0.0, 0.25, -1.0, 0.5], 16000);
        let (info, back) = parse_wav(&encode_wav(&clip, WavEncoding::Float32)).unwrap();
        assert_eq!(info.sample_format, SampleFormat::IeeeFloat);
        assert_eq!(back.samples, clip.samples);
        let (info, back) = parse_wav(&encode_wav(&clip, WavEncoding::Pcm32)).unwrap();
        assert_eq!(info.bits_per_sample, 32);
        assert_eq!(back.samples, clip.samples);
    }

    #[test]
    fn empty_data_rejected() {
        let bytes = header(1, 8000, 16, 1, 0);
        assert!(matches!(parse_wav(&bytes), Err(WavError::NoSamples)));
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let clip = AudioClip::new(vec![0.1, -0.3, 0.7, 0.123456789], 16000);
        assert_eq!(resample_linear(&clip, 16000), clip);
    }

    #[test]
    fn resample_ramp_downsample() {
        let clip = AudioClip::new(vec![0.0, 1.0, 2.0, 3.0], 4);
        let out = resample_linear(&clip, 2);
        assert_eq!(out.samples, vec![0.0, 2.0]);
        assert_eq!(out.sample_rate, 2);
    }

    #[test]
    fn resample_ramp_upsample() {
        let clip = AudioClip::new(vec![0.0, 1.0, 2.0], 2);
        let out = resample_linear(&clip, 4);
        assert_eq!(out.samples, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.0]);
    }

    proptest! {
        #[test]
        fn resample_constant_stays_constant(c in -1.0f64..1.0, n in 1usize..200, src in 1u32..48000, dst in 1u32..48000) {
            let clip = AudioClip::new(vec![c; n], src);
            let out = resample_linear(&clip, dst);
            prop_assert!(out.samples.iter().all(|&v| v == c));
        }

        #[test]
        fn resample_preserves_bounds(samples in proptest::collection::vec(-1.0f64..1.0, 1..300), src in 100u32..48000, dst in 100u32..48000) {
            let clip = AudioClip::new(samples.clone(), src);
            let out = resample_linear(&clip, dst);
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let expected_len = (samples.len() as u64 * dst as u64).div_ceil(src as u64) as usize;
            prop_assert_eq!(out.samples.len(), expected_len);
            prop_assert!(out.samples.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn pcm16_round_trip(samples in proptest::collection::vec(-1.0f64..1.0, 1..500)) {
            let clip = AudioClip::new(samples, 16000);
            let (_, back) = parse_wav(&encode_wav(&clip, WavEncoding::Pcm16)).unwrap();
            for (a, b) in clip.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
