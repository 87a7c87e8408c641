//! Clip → model-input feature extraction with optional memory and disk
//! caches. Cached tensors are stored as float64 MFCT files, so a cache hit
//! returns exactly the values a fresh extraction would.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::{DspConfig, DspError, MelFilterBank};
use crate::tensor::io::{read_tensor, write_tensor, DType, MfctError};
use crate::tensor::Tensor;
use crate::wav::{read_wav, AudioClip, WavError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error("{path}: {source}")]
    Dsp {
        path: PathBuf,
        #[source]
        source: DspError,
    },
    #[error("feature cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: MfctError,
    },
}

#[derive(Debug)]
pub struct FeatureExtractor {
    dsp: DspConfig,
    bank: MelFilterBank,
    height: usize,
    width: usize,
    disk_cache: Option<PathBuf>,
    memory: Option<Mutex<HashMap<PathBuf, Tensor>>>,
}

impl FeatureExtractor {
    pub fn new(dsp: DspConfig, height: usize, width: usize) -> Result<Self, DspError> {
        dsp.validate()?;
        let bank = dsp.filterbank()?;
        Ok(Self {
            dsp,
            bank,
            height,
            width,
            disk_cache: None,
            memory: None,
        })
    }

    /// Stores features under `dir` as `<sha256>.mfct`.
    pub fn with_disk_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.disk_cache = Some(dir.into());
        self
    }

    /// Keeps every extracted tensor in memory for the extractor's lifetime.
    pub fn with_memory_cache(mut self) -> Self {
        self.memory = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn dsp(&self) -> &DspConfig {
        &self.dsp
    }

    /// `[3, height, width]`.
    pub fn input_shape(&self) -> [usize; 3] {
        [3, self.height, self.width]
    }

    pub fn from_clip(&self, clip: &AudioClip) -> Result<Tensor, DspError> {
        self.dsp.model_input(clip, &self.bank, self.height, self.width)
    }

    /// Hex SHA-256 of the path, the front-end configuration and the output
    /// size.
    pub fn cache_key(&self, path: &Path) -> String {
        let mut h = Sha256::new();
        h.update(path.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(&self.dsp).expect("config serializes"));
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn extract(&self, path: &Path) -> Result<Tensor, FeatureError> {
        if let Some(mem) = &self.memory {
            if let Some(t) = mem.lock().expect("cache lock").get(path) {
                return Ok(t.clone());
            }
        }
        let t = match &self.disk_cache {
            Some(dir) => self.extract_disk(path, dir)?,
            None => self.compute(path)?,
        };
        if let Some(mem) = &self.memory {
            mem.lock().expect("cache lock").insert(path.to_path_buf(), t.clone());
        }
        Ok(t)
    }

    fn compute(&self, path: &Path) -> Result<Tensor, FeatureError> {
        let (_, clip) = read_wav(path).map_err(|source| FeatureError::Wav {
            path: path.to_path_buf(),
            source,
        })?;
        self.from_clip(&clip).map_err(|source| FeatureError::Dsp {
            path: path.to_path_buf(),
            source,
        })
    }

    fn extract_disk(&self, path: &Path, dir: &Path) -> Result<Tensor, FeatureError> {
        let file = dir.join(format!("{}.mfct", self.cache_key(path)));
        let cache_err = |source: MfctError| FeatureError::Cache {
            path: file.clone(),
            source,
        };
        if let Ok(f) = File::open(&file) {
            if let Ok((t, DType::F64)) = read_tensor(&mut BufReader::new(f)) {
                if t.shape() == self.input_shape() {
                    return Ok(t);
                }
            }
        }
        let t = self.compute(path)?;
        fs::create_dir_all(dir).map_err(|e| cache_err(e.into()))?;
        // Write then rename so concurrent readers never see a partial file.
        let tmp = file.with_extension(format!("tmp{}", std::process::id()));
        let mut w = BufWriter::new(File::create(&tmp).map_err(|e| cache_err(e.into()))?);
        write_tensor(&mut w, &t, DType::F64).map_err(cache_err)?;
        w.flush().map_err(|e| cache_err(e.into()))?;
        drop(w);
        fs::rename(&tmp, &file).map_err(|e| cache_err(e.into()))?;
        Ok(t)
    }

    /// Stacks the features of `paths` into an N×3×H×W batch, extracting
    /// clips in parallel.
    pub fn batch(&self, paths: &[&Path]) -> Result<Tensor, FeatureError> {
        let items: Vec<Tensor> = paths.par_iter().map(|p| self.extract(p)).collect::<Result<_, _>>()?;
        let refs: Vec<&Tensor> = items.iter().collect();
        Ok(Tensor::stack(&refs).expect("features share one shape"))
    }
}
