//! CKPT binary checkpoint format.
//!
//! Little-endian layout: magic "CKPT", u32 version, u32 tensor count, then
//! per tensor (u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32
//! data), the same layout repeated for optimizer velocity tensors, and a
//! trailing CRC32 over everything before it. Values are stored as f32
//! regardless of the run precision.

use std::fs;
use std::path::Path;

use crate::diff::store::ParameterStore;
use crate::error::{Error, Result};
use crate::real::{real, to_f64, Real};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CKPT";
pub const VERSION: u32 = 1;

/// Standard CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

fn push_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize parameter values followed by optimizer velocities.
pub fn encode_checkpoint<T: Real>(store: &ParameterStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for e in store.entries() {
        push_tensor(
            &mut out,
            &e.name,
            e.value.dims(),
            e.value.data().iter().map(|&v| to_f64(v) as f32),
        );
    }
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for e in store.entries() {
        push_tensor(
            &mut out,
            &e.name,
            e.velocity.dims(),
            e.velocity.data().iter().map(|&v| to_f64(v) as f32),
        );
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn tensor<T: Real>(&mut self) -> Result<(String, Tensor<T>)> {
        let name_len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| Error::Checkpoint("invalid tensor name".into()))?
            .to_string();
        let rank = self.u8()? as usize;
        if rank == 0 || rank > crate::tensor::MAX_RANK {
            return Err(Error::Checkpoint(format!("bad rank {rank} for {name}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = self.take(len * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| real::<T>(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Ok((name, Tensor::from_vec(&dims, data)?))
    }
}

/// Restore parameter values and velocities into an already-built store.
/// Every tensor in the file must match an existing entry's shape.
pub fn decode_checkpoint_into<T: Real>(
    bytes: &[u8],
    store: &mut ParameterStore<T>,
) -> Result<()> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32(body) != stored_crc {
        return Err(Error::Checkpoint("CRC mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let value_count = r.u32()? as usize;
    if value_count != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {value_count} tensors, model expects {}",
            store.len()
        )));
    }
    for _ in 0..value_count {
        let (name, tensor) = r.tensor::<T>()?;
        let idx = store
            .lookup(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name:?}")))?;
        if store.value_at(idx).dims() != tensor.dims() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name:?}: file {:?}, model {:?}",
                tensor.dims(),
                store.value_at(idx).dims()
            )));
        }
        *store.value_mut_at(idx) = tensor;
    }
    let velocity_count = r.u32()? as usize;
    if velocity_count != store.len() {
        return Err(Error::Checkpoint("velocity section count mismatch".into()));
    }
    for _ in 0..velocity_count {
        let (name, tensor) = r.tensor::<T>()?;
        let idx = store
            .lookup(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name:?}")))?;
        if store.value_at(idx).dims() != tensor.dims() {
            return Err(Error::Checkpoint(format!("velocity shape mismatch for {name:?}")));
        }
        store_velocity(store, idx, tensor);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok(())
}

fn store_velocity<T: Real>(store: &mut ParameterStore<T>, idx: usize, tensor: Tensor<T>) {
    // Entries are only reachable mutably through the store; a small helper
    // keeps the borrow local.
    store.entry_mut(idx).velocity = tensor;
}

pub fn save_checkpoint<T: Real>(store: &ParameterStore<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint_into<T: Real>(path: &Path, store: &mut ParameterStore<T>) -> Result<()> {
    decode_checkpoint_into(&fs::read(path)?, store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParameterStore<f32> {
        let mut s = ParameterStore::new();
        s.register(
            "w",
            Tensor::from_vec(&[2, 2], vec![1.0, -0.5, 0.25, 2.0]).unwrap(),
            true,
        )
        .unwrap();
        s.register("b", Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap(), true)
            .unwrap();
        s.register(
            "bn.running_mean",
            Tensor::from_vec(&[2], vec![0.0, 0.5]).unwrap(),
            false,
        )
        .unwrap();
        s
    }

    #[test]
    fn round_trip_bytes_identical() {
        let store = sample_store();
        let bytes = encode_checkpoint(&store);
        let mut fresh = sample_store();
        for e in fresh.entries().iter() {
            assert!(e.value.len() > 0);
        }
        // perturb, then restore
        fresh.value_mut_at(0).data_mut()[0] = 99.0;
        decode_checkpoint_into(&bytes, &mut fresh).unwrap();
        let again = encode_checkpoint(&fresh);
        assert_eq!(bytes, again);
    }

    #[test]
    fn f64_store_round_trips_through_f32() {
        let mut s = ParameterStore::<f64>::new();
        s.register("w", Tensor::from_vec(&[2], vec![0.5, -1.25]).unwrap(), true)
            .unwrap();
        let bytes = encode_checkpoint(&s);
        let mut back = ParameterStore::<f64>::new();
        back.register("w", Tensor::<f64>::zeros(&[2]), true).unwrap();
        decode_checkpoint_into(&bytes, &mut back).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(back.value_at(0).data(), &[0.5, -1.25]);
    }

    #[test]
    fn corruption_detected() {
        let store = sample_store();
        let mut bytes = encode_checkpoint(&store);
        // Flip a data byte: CRC must catch it.
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let mut fresh = sample_store();
        assert!(matches!(
            decode_checkpoint_into(&bytes, &mut fresh),
            Err(Error::Checkpoint(_))
        ));
        // Truncation is a CRC/length error too.
        let bytes = encode_checkpoint(&store);
        let mut fresh = sample_store();
        assert!(decode_checkpoint_into(&bytes[..bytes.len() - 5], &mut fresh).is_err());
    }

    #[test]
    fn shape_mismatch_detected() {
        let store = sample_store();
        let bytes = encode_checkpoint(&store);
        let mut other = ParameterStore::<f32>::new();
        other.register("w", Tensor::<f32>::zeros(&[3, 2]), true).unwrap();
        other.register("b", Tensor::<f32>::zeros(&[2]), true).unwrap();
        other
            .register("bn.running_mean", Tensor::<f32>::zeros(&[2]), false)
            .unwrap();
        assert!(decode_checkpoint_into(&bytes, &mut other).is_err());
    }

    #[test]
    fn version_mismatch_detected() {
        let store = sample_store();
        let mut bytes = encode_checkpoint(&store);
        bytes[4] = 9; // version field
        let body_len = bytes.len() - 4;
        let crc = crc32(&bytes[..body_len]).to_le_bytes();
        bytes[body_len..].copy_from_slice(&crc);
        let mut fresh = sample_store();
        let err = decode_checkpoint_into(&bytes, &mut fresh).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn crc32_known_value() {
        // Standard test vector: CRC32("123456789") = 0xCBF43926.
        assert_eq!(crc32(b"123456789"), 0xcbf43926);
    }
}
