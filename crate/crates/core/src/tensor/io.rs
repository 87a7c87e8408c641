//! MFCT binary tensor format.
//!
//! ```text
//! "MFCT"  4 bytes magic
//! 0x01    version
//! dtype   0x01 = float32, 0x02 = float64
//! rank    u8
//! dims    rank × u32 little-endian
//! payload row-major little-endian values
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use super::Tensor;

pub const MAGIC: &[u8; 4] = b"MFCT";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0x01,
    F64 = 0x02,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum MfctError {
    #[error("bad magic {0:?}, expected \"MFCT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype byte {0:#04x}")]
    UnknownDtype(u8),
    #[error("rank {0} tensor cannot be stored")]
    RankTooLarge(usize),
    #[error("dimension {0} does not fit in u32")]
    DimTooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> Result<(), MfctError> {
    let rank = u8::try_from(t.rank()).map_err(|_| MfctError::RankTooLarge(t.rank()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype as u8, rank])?;
    for &d in t.shape() {
        let d32 = u32::try_from(d).map_err(|_| MfctError::DimTooLarge(d))?;
        w.write_all(&d32.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * dtype.width());
    for &v in t.data() {
        match dtype {
            DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one tensor; float32 payloads are widened to f64.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<(Tensor, DType), MfctError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(MfctError::BadMagic(magic));
    }
    let mut head = [0u8; 3];
    r.read_exact(&mut head)?;
    if head[0] != VERSION {
        return Err(MfctError::UnsupportedVersion(head[0]));
    }
    let dtype = match head[1] {
        0x01 => DType::F32,
        0x02 => DType::F64,
        b => return Err(MfctError::UnknownDtype(b)),
    };
    let mut shape = Vec::with_capacity(head[2] as usize);
    for _ in 0..head[2] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * dtype.width()];
    r.read_exact(&mut payload)?;
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect(),
    };
    Ok((Tensor::new(shape, data).expect("payload sized from shape"), dtype))
}

pub fn to_bytes(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(&mut out, t, dtype).expect("writing to a Vec cannot fail for rank < 256");
    out
}
