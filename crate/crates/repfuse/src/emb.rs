//! EMB1: one frame matrix per file.
//!
//! ```text
//! "EMB1" | u32 version = 1 | u32 T | u32 d | T·d f32, row-major
//! ```
//! All numbers little-endian. The file carries no identity metadata; the
//! manifest that references it does.

use std::fs;
use std::path::Path;

use repfuse_core::{EmbeddingSequence, Matrix};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(frames: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * frames.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32(frames.rows()).to_le_bytes());
    out.extend_from_slice(&dim_u32(frames.cols()).to_le_bytes());
    for v in frames.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn dim_u32(n: usize) -> u32 {
    u32::try_from(n).expect("dimension exceeds the EMB1 u32 range")
}

pub(crate) fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses an EMB1 byte buffer; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let format = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let seen = &bytes[..bytes.len().min(4)];
        return Err(format(format!("bad magic {seen:?}, expected \"EMB1\"")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = le_u32(bytes, 4);
    if version != VERSION {
        return Err(format(format!("unsupported EMB1 version {version}")));
    }
    let (t, d) = (le_u32(bytes, 8) as usize, le_u32(bytes, 12) as usize);
    if t == 0 || d == 0 {
        return Err(format(format!("empty frame matrix {t}x{d}")));
    }
    let expected = HEADER_LEN as u128 + 4 * t as u128 * d as u128;
    let actual = bytes.len() as u128;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: u64::try_from(expected).unwrap_or(u64::MAX),
            actual: actual as u64,
        });
    }
    if actual > expected {
        return Err(format(format!("{} trailing bytes after payload", actual - expected)));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Matrix::new(t, d, data).map_err(|e| format(e.to_string()))
}

pub fn write_frames(frames: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(frames)).map_err(|e| Error::io(path, e))
}

pub fn write_emb(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    write_frames(&seq.frames, path)
}

/// Reads the frame matrix of an EMB1 file.
pub fn read_emb(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
