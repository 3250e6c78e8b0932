//! SPM1 binary sparse-matrix format.
//!
//! Little-endian layout: magic "SPM1", u32 rows, u32 cols, u64 nnz, then
//! nnz records of (u32 row, u32 col, f64 value) in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;

const MAGIC: &[u8; 4] = b"SPM1";

pub fn encode_spm(m: &SparseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 16 * m.nnz());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(m.nnz() as u64).to_le_bytes());
    for &(r, c, v) in m.entries() {
        out.extend_from_slice(&r.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_spm(bytes: &[u8]) -> Result<SparseMatrix> {
    if bytes.len() < 20 {
        return Err(Error::format("SPM1", "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format("SPM1", "bad magic"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let nnz = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = 20 + 16 * nnz;
    if bytes.len() != expected {
        return Err(Error::format(
            "SPM1",
            format!("expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let mut entries = Vec::with_capacity(nnz);
    for i in 0..nnz {
        let off = 20 + 16 * i;
        let r = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let c = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        let v = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format("SPM1", format!("non-finite value at entry {i}")));
        }
        entries.push((r, c, v));
    }
    SparseMatrix::from_triplets(rows, cols, entries)
}

pub fn write_spm(m: &SparseMatrix, path: &Path) -> Result<()> {
    fs::write(path, encode_spm(m))?;
    Ok(())
}

pub fn read_spm(path: &Path) -> Result<SparseMatrix> {
    decode_spm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spm_round_trip() {
        let m = SparseMatrix::from_triplets(
            3,
            4,
            vec![(0, 1, 0.5), (2, 3, -1.0 / 3.0), (1, 0, 1e-300)],
        )
        .unwrap();
        let bytes = encode_spm(&m);
        let back = decode_spm(&bytes).unwrap();
        assert_eq!(m, back);
        // Deterministic serialized form.
        assert_eq!(bytes, encode_spm(&back));
    }

    #[test]
    fn spm_rejects_truncation_and_bad_magic() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0)]).unwrap();
        let mut bytes = encode_spm(&m);
        bytes.pop();
        assert!(decode_spm(&bytes).is_err());
        let mut bad = encode_spm(&m);
        bad[0] = b'X';
        assert!(decode_spm(&bad).is_err());
    }
}
