//! Binary feature container.
//!
//! Layout: three little-endian `i32` header fields `L, T, D`, followed by
//! `L * T * D` little-endian `f32` values in row-major order. A rank-1
//! vector of length `D` is stored with `L = 0, T = 0`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::frontend::{FixedVector, LayeredFeatureSequence, SpeechInput};
use crate::{Error, Result};

const HEADER_BYTES: usize = 12;

fn write_raw(path: &Path, header: [i32; 3], values: &[f32]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut buf = Vec::with_capacity(HEADER_BYTES + 4 * values.len());
    for h in header {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn dim_i32(v: usize, path: &Path) -> Result<i32> {
    i32::try_from(v).map_err(|_| Error::Container {
        path: path.to_path_buf(),
        msg: format!("dimension {v} does not fit the header"),
    })
}

pub fn write_layered(path: &Path, x: &LayeredFeatureSequence) -> Result<()> {
    let header = [
        dim_i32(x.layers(), path)?,
        dim_i32(x.frames(), path)?,
        dim_i32(x.dim(), path)?,
    ];
    write_raw(path, header, x.data())
}

pub fn write_fixed(path: &Path, v: &FixedVector) -> Result<()> {
    write_raw(path, [0, 0, dim_i32(v.dim(), path)?], v.values())
}

pub fn read(path: &Path) -> Result<SpeechInput> {
    let err = |msg: String| Error::Container {
        path: path.to_path_buf(),
        msg,
    };
    let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
    if bytes.len() < HEADER_BYTES {
        return Err(err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let field = |i: usize| i32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let (l, t, d) = (field(0), field(1), field(2));
    if l < 0 || t < 0 || d <= 0 || (l == 0) != (t == 0) {
        return Err(err(format!("invalid shape header ({l}, {t}, {d})")));
    }
    let count = if l == 0 {
        d as usize
    } else {
        l as usize * t as usize * d as usize
    };
    let payload = &bytes[HEADER_BYTES..];
    if payload.len() != 4 * count {
        return Err(err(format!(
            "header ({l}, {t}, {d}) needs {} payload bytes, found {}",
            4 * count,
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if l == 0 {
        Ok(SpeechInput::Fixed(FixedVector::new(values).map_err(|e| err(e.to_string()))?))
    } else {
        Ok(SpeechInput::Layered(
            LayeredFeatureSequence::new(l as usize, t as usize, d as usize, values)
                .map_err(|e| err(e.to_string()))?,
        ))
    }
}
