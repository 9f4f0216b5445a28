//! Versioned binary cache: 8-byte magic, little-endian `u32` version, then
//! the bincode encoding of a [`PreparedDataset`].

use std::path::Path;

use super::{DataError, PreparedDataset};

pub const CACHE_MAGIC: &[u8; 8] = b"NVHCFDAT";
pub const CACHE_VERSION: u32 = 1;

pub fn encode_cache(d: &PreparedDataset) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(1 << 20);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bincode::serialize_into(&mut out, d).map_err(|e| DataError::Cache(e.to_string()))?;
    Ok(out)
}

pub fn decode_cache(bytes: &[u8]) -> Result<PreparedDataset, DataError> {
    if bytes.len() < 12 || &bytes[..8] != CACHE_MAGIC {
        return Err(DataError::Cache("not a dataset cache (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(DataError::Cache(format!(
            "cache version {version} is not supported (expected {CACHE_VERSION}); re-run prepare"
        )));
    }
    bincode::deserialize(&bytes[12..]).map_err(|e| DataError::Cache(e.to_string()))
}

pub fn write_cache(path: &Path, d: &PreparedDataset) -> Result<(), DataError> {
    let bytes = encode_cache(d)?;
    std::fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_cache(path: &Path) -> Result<PreparedDataset, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_cache(&bytes).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::small_prepared;

    #[test]
    fn round_trip_and_determinism() {
        let a = encode_cache(&small_prepared(5)).unwrap();
        let b = encode_cache(&small_prepared(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(decode_cache(&a).unwrap(), small_prepared(5));
        assert_ne!(a, encode_cache(&small_prepared(6)).unwrap());
    }

    #[test]
    fn rejects_foreign_and_stale_bytes() {
        assert!(decode_cache(b"hello world, not a cache").is_err());
        let mut a = encode_cache(&small_prepared(5)).unwrap();
        a[8] = 99;
        let err = decode_cache(&a).unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");
    }
}
