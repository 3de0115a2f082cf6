//! RRSE binary dataset format.
//!
//! Little-endian layout:
//!
//! ```text
//! "RRSE"            magic, 4 bytes
//! u32               version (1)
//! u32 x 4           n, dim, d1, d2
//! f32[n*dim]        image_global
//! f32[n*d1*dim]     image_local
//! f32[n*dim]        text_global
//! f32[n*d2*dim]     text_local
//! u8[n]             y
//! u8                class-id presence flag (0 or 1)
//! u32[n]            class_id, only when the flag is 1
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::Dataset;
use crate::error::{Error, Result};

pub const RRSE_MAGIC: &[u8; 4] = b"RRSE";
pub const RRSE_VERSION: u32 = 1;

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(dataset))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let (n, dim, d1, d2) = (ds.n_pairs(), ds.dim(), ds.d1(), ds.d2());
    let floats = n * dim * (2 + d1 + d2);
    let mut out = Vec::with_capacity(24 + 4 * floats + 2 * n + 1 + 4 * n);
    out.extend_from_slice(RRSE_MAGIC);
    for v in [RRSE_VERSION, n as u32, dim as u32, d1 as u32, d2 as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let blocks = [
        ds.image_global().iter().copied().collect::<Vec<_>>(),
        ds.image_local().iter().copied().collect(),
        ds.text_global().iter().copied().collect(),
        ds.text_local().iter().copied().collect(),
    ];
    for block in &blocks {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(ds.y());
    match ds.class_id() {
        Some(ids) => {
            out.push(1);
            for id in ids {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, section: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let chunk = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(chunk)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated in section `{section}`: need {len} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize, section: &str) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos as u64, format!("`{section}` size overflows")))?;
        let raw = self.take(len, section)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != RRSE_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"RRSE\""));
    }
    let version = r.u32("version")?;
    if version != RRSE_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let header_at = r.pos as u64;
    let n = r.u32("header")? as usize;
    let dim = r.u32("header")? as usize;
    let d1 = r.u32("header")? as usize;
    let d2 = r.u32("header")? as usize;
    if dim < 2 {
        return Err(Error::format(header_at + 4, format!("dim must be >= 2, got {dim}")));
    }
    if d1 < 1 || d2 < 1 {
        return Err(Error::format(
            header_at + 8,
            format!("d1 and d2 must be >= 1, got d1={d1}, d2={d2}"),
        ));
    }

    let image_global = r.f32s(n * dim, "image_global")?;
    let image_local = r.f32s(n * d1 * dim, "image_local")?;
    let text_global = r.f32s(n * dim, "text_global")?;
    let text_local = r.f32s(n * d2 * dim, "text_local")?;
    let y_at = r.pos as u64;
    let y = r.take(n, "y")?.to_vec();
    if let Some(pos) = y.iter().position(|&v| v > 1) {
        return Err(Error::format(
            y_at + pos as u64,
            format!("label {} is not 0 or 1", y[pos]),
        ));
    }
    let flag_at = r.pos as u64;
    let class_id = match r.take(1, "class_id flag")?[0] {
        0 => None,
        1 => {
            let raw = r.take(4 * n, "class_id")?;
            Some(
                raw.chunks_exact(4)
                    .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            )
        }
        other => {
            return Err(Error::format(
                flag_at,
                format!("class_id flag must be 0 or 1, got {other}"),
            ))
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes after payload", bytes.len() - r.pos),
        ));
    }

    let shape_err = |e: ndarray::ShapeError| Error::Internal(e.to_string());
    let ds = Dataset::new(
        Array2::from_shape_vec((n, dim), image_global).map_err(shape_err)?,
        Array3::from_shape_vec((n, d1, dim), image_local).map_err(shape_err)?,
        Array2::from_shape_vec((n, dim), text_global).map_err(shape_err)?,
        Array3::from_shape_vec((n, d2, dim), text_local).map_err(shape_err)?,
        y,
        class_id,
    );
    ds.map_err(|e| match e {
        Error::Data(msg) | Error::Config(msg) => Error::format(24, msg),
        other => other,
    })
}
