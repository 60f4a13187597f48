//! Binary dataset import.
//!
//! Layout (little-endian): magic `BBDT`, then `version`, `n`, `dim`, `num_classes`
//! as `u32`, then `n * dim` `f32` features row-major, then `n` `u32` labels.

use std::io::{Read, Write};

use ndarray::Array2;

use super::LabeledData;
use crate::error::{Error, Result};

pub const BBDT_MAGIC: &[u8; 4] = b"BBDT";
pub const BBDT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated dataset file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_bbdt<R: Read>(mut r: R) -> Result<LabeledData> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != BBDT_MAGIC {
        return Err(Error::Format("bad magic in dataset file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != BBDT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let num_classes = read_u32(&mut r)? as usize;

    let mut raw = vec![0u8; n * dim * 4];
    r.read_exact(&mut raw).map_err(truncated)?;
    let features: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(truncated)?;
    let labels: Vec<usize> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();

    let features = Array2::from_shape_vec((n, dim), features)
        .map_err(|e| Error::Format(format!("feature block: {e}")))?;
    LabeledData::new(features, labels, num_classes)
}

pub fn write_bbdt<W: Write>(mut w: W, data: &LabeledData) -> Result<()> {
    let header = |v: usize| -> Result<[u8; 4]> {
        u32::try_from(v)
            .map(u32::to_le_bytes)
            .map_err(|_| Error::Format(format!("{v} does not fit in u32")))
    };
    w.write_all(BBDT_MAGIC)?;
    w.write_all(&BBDT_VERSION.to_le_bytes())?;
    w.write_all(&header(data.len())?)?;
    w.write_all(&header(data.input_dim())?)?;
    w.write_all(&header(data.num_classes)?)?;
    for &v in data.features.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    for &y in &data.labels {
        w.write_all(&header(y)?)?;
    }
    Ok(())
}
