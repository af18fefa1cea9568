//! "MEEB" matrix files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"MEEB" | u32 version | u64 rows | u64 cols | rows·cols × f32, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use mee_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MEEB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn encode_matrix(m: &Tensor<f32>) -> Vec<u8> {
    let (rows, cols) = dims(m);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    push_f32s(&mut out, m.data());
    out
}

fn dims(m: &Tensor<f32>) -> (usize, usize) {
    match m.shape() {
        [r, c] => (*r, *c),
        [n] => (1, *n),
        _ => (m.len(), 1),
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn f32s_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 4 {
        return Err(truncated(format!("{} bytes, no magic", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if found != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(format!("header needs {HEADER_LEN} bytes, have {}", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: VERSION,
            found: version,
        });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes"));
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("eight bytes"));
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| truncated(format!("{rows}×{cols} overflows")))?;
    if payload.len() as u64 != expected {
        return Err(truncated(format!(
            "{rows}×{cols} matrix needs {expected} payload bytes, have {}",
            payload.len()
        )));
    }
    Ok(Tensor::from_vec(&[rows as usize, cols as usize], f32s_from_le(payload))?)
}

pub fn write_matrix(path: &Path, m: &Tensor<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_matrix(m))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn header_layout() {
        let m = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 3.25, f32::MIN_POSITIVE, -0.0]).unwrap();
        let b = encode_matrix(&m);
        assert_eq!(&b[..4], b"MEEB");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[16..24], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24 + 6 * 4);
        let back = decode_matrix(&b, p()).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, orig);
    }

    #[test]
    fn empty_matrix_has_valid_header() {
        let m = Tensor::<f32>::zeros(&[0, 7]);
        let back = decode_matrix(&encode_matrix(&m), p()).unwrap();
        assert_eq!(back.shape(), &[0, 7]);
    }

    #[test]
    fn corrupted_magic() {
        let mut b = encode_matrix(&Tensor::zeros(&[1, 1]));
        b[0] = b'X';
        assert!(matches!(decode_matrix(&b, p()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn wrong_version() {
        let mut b = encode_matrix(&Tensor::zeros(&[1, 1]));
        b[4] = 9;
        assert!(matches!(decode_matrix(&b, p()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn short_payload() {
        let mut b = encode_matrix(&Tensor::zeros(&[2, 2]));
        b.pop();
        assert!(matches!(decode_matrix(&b, p()), Err(Error::Truncated { .. })));
        assert!(matches!(decode_matrix(b"ME", p()), Err(Error::Truncated { .. })));
    }
}
