//! Dataset file format (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "FDDS"
//! version    u16
//! domain id  u32
//! Z          u32      identity count
//! J          u32      sample count
//! D_in       u32      feature dimension
//! split      u8       0 = train, 1 = test
//! labels     J x u32
//! features   J x D_in x f64, row-major
//! crc32      u32      over every preceding byte
//! ```

use std::path::Path;

use ndarray::Array2;

use super::{DomainDataset, Split};
use crate::codec::{verify_crc, Reader, Writer};
use crate::error::{FormatError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"FDDS";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 1;

pub fn dataset_to_bytes(ds: &DomainDataset) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC)
        .u16(DATASET_VERSION)
        .u32(ds.domain_id)
        .u32(ds.identities as u32)
        .u32(ds.len() as u32)
        .u32(ds.feature_dim() as u32)
        .u8(ds.split.tag());
    for &y in ds.labels() {
        w.u32(y as u32);
    }
    w.f64s(ds.features().as_standard_layout().as_slice().expect("standard layout"));
    w.finish_with_crc()
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<DomainDataset> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != DATASET_MAGIC {
        return Err(FormatError::MalformedHeader(format!("bad magic bytes {magic:?}")).into());
    }
    r.require(HEADER_LEN - 4)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let domain_id = r.u32()?;
    let identities = r.u32()? as usize;
    let samples = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let split = r.u8()?;
    let split = Split::from_tag(split)
        .ok_or_else(|| FormatError::MalformedHeader(format!("unknown split tag {split}")))?;
    let payload = samples
        .checked_mul(4 + 8 * dim)
        .and_then(|p| p.checked_add(4))
        .ok_or_else(|| FormatError::MalformedHeader("header sizes overflow".into()))?;
    r.require(payload)?;
    if r.remaining() != payload {
        return Err(FormatError::MalformedHeader(format!(
            "{} trailing bytes after payload",
            r.remaining() - payload
        ))
        .into());
    }
    verify_crc(bytes)?;
    let labels = (0..samples).map(|_| r.u32().map(|y| y as usize)).collect::<Result<Vec<_>, _>>()?;
    let values = r.f64s(samples * dim)?;
    let features = Array2::from_shape_vec((samples, dim), values)
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    DomainDataset::new(domain_id, identities, split, features, labels)
}

pub fn save_dataset(ds: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let bytes = std::fs::read(path)?;
    dataset_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use ndarray::array;

    fn tiny() -> DomainDataset {
        DomainDataset::new(2, 2, Split::Test, array![[1.5, -0.0], [f64::MIN_POSITIVE, 3.0]], vec![1, 0]).unwrap()
    }

    fn format_err(r: Result<DomainDataset>) -> FormatError {
        match r {
            Err(Error::Format(e)) => e,
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = tiny();
        let back = dataset_from_bytes(&dataset_to_bytes(&ds)).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.features()[[0, 1]].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = dataset_to_bytes(&tiny());
        bytes[0] = b'X';
        assert!(matches!(format_err(dataset_from_bytes(&bytes)), FormatError::MalformedHeader(_)));
    }

    #[test]
    fn empty_and_truncated() {
        assert!(matches!(format_err(dataset_from_bytes(&[])), FormatError::Truncated { .. }));
        let bytes = dataset_to_bytes(&tiny());
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(format_err(dataset_from_bytes(cut)), FormatError::Truncated { .. }));
    }

    #[test]
    fn flipped_payload_bit() {
        let mut bytes = dataset_to_bytes(&tiny());
        let n = bytes.len();
        bytes[n - 10] ^= 0x10;
        assert!(matches!(format_err(dataset_from_bytes(&bytes)), FormatError::ChecksumMismatch { .. }));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fdds");
        save_dataset(&tiny(), &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), tiny());
    }
}
