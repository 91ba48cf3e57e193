//! Versioned binary checkpoints: a header (magic, version, config digest)
//! followed by named tensors as little-endian 64-bit floats. Loading
//! validates every shape against the receiving store, i.e. against the
//! model the active config constructed.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RSTY";
const VERSION: u32 = 1;

pub fn save_store(path: &Path, store: &ParamStore, config_digest: &str) -> Result<()> {
    fs::write(path, encode_store(store, config_digest))?;
    Ok(())
}

pub fn encode_store(store: &ParamStore, config_digest: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_digest.len() as u32).to_le_bytes());
    out.extend_from_slice(config_digest.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    out
}

/// Load a checkpoint into an already-constructed store. Every tensor in the
/// file must match a store entry by name and shape, and every store entry
/// must be present. Returns the config digest recorded in the header;
/// passing `expected_digest` makes a mismatch an error.
pub fn load_store(
    path: &Path,
    store: &mut ParamStore,
    expected_digest: Option<&str>,
) -> Result<String> {
    let bytes = fs::read(path)?;
    decode_store(&bytes, store, expected_digest)
}

pub fn decode_store(
    bytes: &[u8],
    store: &mut ParamStore,
    expected_digest: Option<&str>,
) -> Result<String> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dlen = read_u32(&mut cur)? as usize;
    let mut dbytes = vec![0u8; dlen];
    cur.read_exact(&mut dbytes).map_err(truncated)?;
    let digest = String::from_utf8(dbytes)
        .map_err(|_| Error::Checkpoint("digest is not utf-8".into()))?;
    if let Some(expected) = expected_digest {
        if digest != expected {
            return Err(Error::Checkpoint(format!(
                "config digest mismatch: checkpoint {digest}, expected {expected}"
            )));
        }
    }
    let count = read_u32(&mut cur)? as usize;
    let mut seen = vec![false; store.len()];
    for _ in 0..count {
        let nlen = read_u32(&mut cur)? as usize;
        let mut nbytes = vec![0u8; nlen];
        cur.read_exact(&mut nbytes).map_err(truncated)?;
        let name = String::from_utf8(nbytes)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rank = read_u32(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut cur)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            cur.read_exact(&mut buf).map_err(truncated)?;
            data.push(f64::from_le_bytes(buf) as crate::tensor::Real);
        }
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}` in file")))?;
        if store.value(id).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}`: file shape {:?} does not match configured shape {:?}",
                shape,
                store.value(id).shape()
            )));
        }
        store.set_value(id, Tensor::new(shape, data)?)?;
        seen[id.index()] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let name = store
            .ids()
            .nth(missing)
            .map(|id| store.name(id).to_string())
            .unwrap_or_default();
        return Err(Error::Checkpoint(format!("tensor `{name}` missing from checkpoint")));
    }
    Ok(digest)
}

/// SHA-256 of a file, for determinism comparisons.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(bytes_digest(&bytes))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

fn truncated(_: std::io::Error) -> Error {
    Error::Checkpoint("truncated checkpoint file".into())
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.add_weight("a.w", 3, 4, &mut rng);
        s.add_uniform("b.v", &[5], 0.5, &mut rng);
        s
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let src = store_with(1);
        let bytes = encode_store(&src, "digest123");
        let mut dst = store_with(2);
        let digest = decode_store(&bytes, &mut dst, Some("digest123")).unwrap();
        assert_eq!(digest, "digest123");
        for (a, b) in src.iter().zip(dst.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.data(), b.1.data());
        }
        // Re-encoding reproduces the same bytes.
        assert_eq!(bytes_digest(&bytes), bytes_digest(&encode_store(&dst, "digest123")));
    }

    #[test]
    fn digest_and_shape_mismatches_are_errors() {
        let src = store_with(1);
        let bytes = encode_store(&src, "digest123");
        let mut dst = store_with(2);
        assert!(decode_store(&bytes, &mut dst, Some("other")).is_err());

        let mut wrong_shape = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        wrong_shape.add_weight("a.w", 4, 3, &mut rng);
        wrong_shape.add_uniform("b.v", &[5], 0.5, &mut rng);
        assert!(decode_store(&bytes, &mut wrong_shape, None).is_err());

        let mut missing = ParamStore::new();
        missing.add_weight("a.w", 3, 4, &mut rng);
        assert!(decode_store(&bytes, &mut missing, None).is_err());

        assert!(decode_store(&bytes[..10], &mut store_with(3), None).is_err());
    }
}
