//! EMB1: a 16-byte header followed by a little-endian float32 payload.
//!
//! ```text
//! 0..4    b"EMB1"
//! 4..8    n   (u32 LE)
//! 8..12   d   (u32 LE)
//! 12..16  reserved, zero
//! 16..    n*d f32 LE, row-major
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 16;

/// Encoded size of an `n × d` block.
pub fn encoded_len(n: usize, d: usize) -> usize {
    HEADER_LEN + n * d * 4
}

pub fn encode(m: &Matrix) -> Vec<u8> {
    let (n, d) = m.shape();
    let mut buf = Vec::with_capacity(encoded_len(n, d));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &v in m.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn write_to<W: Write>(m: &Matrix, mut w: W) -> std::io::Result<()> {
    w.write_all(&encode(m))
}

/// Decode one block from the front of `bytes`; returns the matrix and the
/// number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Matrix, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "EMB1 header truncated: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n, d, reserved) = (word(4), word(8), word(12));
    if reserved != 0 {
        return Err(Error::Format("reserved header field is not zero".into()));
    }
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("empty shape {n}x{d}")));
    }
    let len = encoded_len(n, d);
    if bytes.len() < len {
        return Err(Error::Format(format!(
            "payload truncated: header declares {n}x{d} ({len} bytes), found {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((Matrix::new(n, d, data)?, len))
}

pub fn read_from<R: Read>(mut r: R) -> Result<Matrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    let (m, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - used
        )));
    }
    Ok(m)
}
