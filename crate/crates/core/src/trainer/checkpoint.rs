//! Binary head checkpoints.
//!
//! Little-endian layout: magic `RRSP`, `u32` version, `u32` dim_out,
//! `u32` dim_in, then `f64` blocks `W_img`, `b_img`, `W_txt`, `b_txt`
//! (matrices row-major).

use std::fs;
use std::path::Path;

use super::heads::ProjectionHeads;
use crate::error::{Error, Result};

pub const RRSP_MAGIC: [u8; 4] = *b"RRSP";
pub const RRSP_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_heads(heads: &ProjectionHeads) -> Vec<u8> {
    let flat = heads.to_flat();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * flat.len());
    out.extend_from_slice(&RRSP_MAGIC);
    out.extend_from_slice(&RRSP_VERSION.to_le_bytes());
    out.extend_from_slice(&(heads.dim_out() as u32).to_le_bytes());
    out.extend_from_slice(&(heads.dim_in() as u32).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_heads(bytes: &[u8]) -> Result<ProjectionHeads> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated checkpoint header"));
    }
    if bytes[..4] != RRSP_MAGIC {
        return Err(Error::format(0, "bad magic, expected RRSP"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != RRSP_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let (dim_out, dim_in) = (word(8) as usize, word(12) as usize);
    if dim_out == 0 || dim_in == 0 {
        return Err(Error::format(8, "zero head dimension"));
    }
    let mut heads = ProjectionHeads::zeros(dim_in, dim_out);
    let expected = HEADER_LEN + 8 * heads.num_params();
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("checkpoint payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let flat: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("checkpoint holds non-finite parameters".into()));
    }
    heads.set_flat(&flat);
    Ok(heads)
}

pub fn write_heads(path: impl AsRef<Path>, heads: &ProjectionHeads) -> Result<()> {
    fs::write(path, encode_heads(heads))?;
    Ok(())
}

pub fn read_heads(path: impl AsRef<Path>) -> Result<ProjectionHeads> {
    decode_heads(&fs::read(path)?)
}
