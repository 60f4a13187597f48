//! Binary checkpoint files.
//!
//! Layout, little-endian: magic `BBCK`, `u32` version, `u32` header length, the
//! header as canonical JSON (sorted keys, no whitespace) holding `arch` and
//! `provenance`, `u64` parameter count, then the parameters as `f32`.

use std::fs;
use std::path::Path;

use basinwalk::nn::{ArchDescriptor, ParamVector};
use basinwalk::training::{Checkpoint, Provenance};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const BBCK_MAGIC: [u8; 4] = *b"BBCK";
pub const BBCK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchDescriptor,
    provenance: Provenance,
}

/// Canonical JSON: object keys sorted at every level, no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Value map is ordered by key.
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = canonical_json(&Header {
        arch: ckpt.params.arch().clone(),
        provenance: ckpt.provenance.clone(),
    })?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| HarnessError::Mismatch("header too large".into()))?;
    let values = ckpt.params.values();
    let mut out = Vec::with_capacity(20 + header.len() + 4 * values.len());
    out.extend_from_slice(&BBCK_MAGIC);
    out.extend_from_slice(&BBCK_VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(HarnessError::Truncated(format!("file ends inside the {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn u32_at(bytes: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4, what)?.try_into().expect("4 bytes")))
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Checkpoint> {
    let magic: [u8; 4] = take(&mut bytes, 4, "magic")?.try_into().expect("4 bytes");
    if magic != BBCK_MAGIC {
        return Err(HarnessError::BadMagic(magic));
    }
    let version = u32_at(&mut bytes, "version")?;
    if version != BBCK_VERSION {
        return Err(HarnessError::UnsupportedVersion(version));
    }
    let header_len = u32_at(&mut bytes, "header length")? as usize;
    let header: Header = serde_json::from_slice(take(&mut bytes, header_len, "header")?)?;
    let count = u64::from_le_bytes(take(&mut bytes, 8, "parameter count")?.try_into().expect("8 bytes"));
    if count != header.arch.param_count() as u64 {
        return Err(HarnessError::Mismatch(format!(
            "header architecture has {} parameters, file declares {count}",
            header.arch.param_count()
        )));
    }
    let payload = 4 * count as usize;
    if bytes.len() != payload {
        return Err(HarnessError::Truncated(format!(
            "expected {payload} parameter bytes, found {}",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Checkpoint {
        params: ParamVector::new(header.arch, values)?,
        provenance: header.provenance,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
