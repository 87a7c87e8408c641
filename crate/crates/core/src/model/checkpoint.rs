//! MFCK checkpoint files.
//!
//! ```text
//! "MFCK"      4 bytes magic
//! 0x01        version
//! json_len    u32 LE, followed by the model configuration as JSON
//! count       u32 LE
//! count × { name_len u16 LE, name (UTF-8), MFCT float64 tensor }
//! ```
//!
//! Tensors are the trainable parameters in traversal order followed by the
//! batch-norm running mean and variance of each layer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::config::MfcmNetConfig;
use super::net::MfcmNet;
use super::ModelError;
use crate::tensor::io::{read_tensor, write_tensor, DType, MfctError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MFCK";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint configuration: {0}")]
    Config(#[from] serde_json::Error),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] MfctError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Tensor(MfctError::Io(e))
    }
}

fn named_tensors(net: &MfcmNet) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    net.params.visit(|n, t| out.push((n, t.clone())));
    for (name, s) in &net.bn.layers {
        let c = s.mean.len();
        out.push((
            format!("{name}.running_mean"),
            Tensor::new(vec![c], s.mean.clone()).expect("length matches"),
        ));
        out.push((
            format!("{name}.running_var"),
            Tensor::new(vec![c], s.var.clone()).expect("length matches"),
        ));
    }
    out
}

pub fn write_checkpoint<W: Write>(w: &mut W, net: &MfcmNet) -> Result<(), CheckpointError> {
    let json = serde_json::to_vec(&net.config)?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let tensors = named_tensors(net);
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t, DType::F64)?;
    }
    Ok(())
}

/// Rebuilds the network described by the embedded configuration and fills
/// it from the stored tensors, checking names and shapes one by one.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<MfcmNet, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let mut v = [0u8; 1];
    r.read_exact(&mut v)?;
    if v[0] != VERSION {
        return Err(CheckpointError::UnsupportedVersion(v[0]));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let config: MfcmNetConfig = serde_json::from_slice(&json)?;
    let mut net = MfcmNet::new(config, 0)?;
    let expected = named_tensors(&net);

    r.read_exact(&mut len)?;
    let count = u32::from_le_bytes(len) as usize;
    if count != expected.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{count} tensors stored, model has {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want) in &expected {
        let mut nl = [0u8; 2];
        r.read_exact(&mut nl)?;
        let mut name = vec![0u8; u16::from_le_bytes(nl) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8_lossy(&name).into_owned();
        if &name != want_name {
            return Err(CheckpointError::Mismatch(format!("expected tensor {want_name}, found {name}")));
        }
        let (t, _) = read_tensor(r)?;
        if t.shape() != want.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "{name}: stored shape {:?}, model expects {:?}",
                t.shape(),
                want.shape()
            )));
        }
        loaded.push(t);
    }
    let mut it = loaded.into_iter();
    net.params.visit_mut(|_, t| *t = it.next().expect("count checked"));
    for (_, s) in &mut net.bn.layers {
        s.mean = it.next().expect("count checked").into_data();
        s.var = it.next().expect("count checked").into_data();
    }
    Ok(net)
}

pub fn save_checkpoint(path: &Path, net: &MfcmNet) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_checkpoint(&mut w, net)?;
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MfcmNet, CheckpointError> {
    let f = File::open(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(net: &MfcmNet) -> Vec<u8> {
        let mut b = Vec::new();
        write_checkpoint(&mut b, net).unwrap();
        b
    }

    #[test]
    fn round_trip_is_exact() {
        let mut net = MfcmNet::new(MfcmNetConfig::micro(32, 32), 4).unwrap();
        net.bn.layers[3].1.mean[0] = 0.25;
        let b = bytes(&net);
        assert_eq!(&b[..4], b"MFCK");
        let back = read_checkpoint(&mut b.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(bytes(&back), b);
    }

    #[test]
    fn rejects_corruption() {
        let net = MfcmNet::new(MfcmNetConfig::micro(32, 32), 4).unwrap();
        let mut b = bytes(&net);
        b[0] = b'X';
        assert!(matches!(read_checkpoint(&mut b.as_slice()), Err(CheckpointError::BadMagic(_))));
        let mut b = bytes(&net);
        b[4] = 3;
        assert!(matches!(read_checkpoint(&mut b.as_slice()), Err(CheckpointError::UnsupportedVersion(3))));
        let b = bytes(&net);
        assert!(read_checkpoint(&mut &b[..b.len() - 3]).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let net = MfcmNet::new(MfcmNetConfig::micro(32, 32), 4).unwrap();
        let mut other = net.clone();
        other.params.head.weight = Tensor::zeros(&[31, 1]);
        let mut b = Vec::new();
        write_checkpoint(&mut b, &other).unwrap();
        assert!(matches!(read_checkpoint(&mut b.as_slice()), Err(CheckpointError::Mismatch(_))));
    }
}
