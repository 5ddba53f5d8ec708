//! Binary checkpoint of an embedding network.
//!
//! Layout (little endian): magic `FDCK`, `u16` version, `u32` epoch,
//! `u32` layer-width count `L`, `L x u32` widths, `u32` parameter count `P`,
//! `P x f64` parameters, `u32` CRC32 of everything before it.

use std::path::Path;

use crate::codec::{verify_crc, Reader, Writer};
use crate::error::{FormatError, Result};
use crate::nn::EmbeddingNet;
use crate::params::ParamBlock;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FDCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A trained embedding and the number of epochs behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u32,
    pub embed: EmbeddingNet,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.embed.dims();
        let values = self.embed.params().values();
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC)
            .u16(CHECKPOINT_VERSION)
            .u32(self.epoch)
            .u32(dims.len() as u32);
        for &d in dims {
            w.u32(d as u32);
        }
        w.u32(values.len() as u32).f64s(values);
        w.finish_with_crc()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::MalformedHeader(format!("bad magic bytes {magic:?}")).into());
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let epoch = r.u32()?;
        let n_dims = r.u32()? as usize;
        r.require(n_dims.saturating_mul(4))?;
        let dims = (0..n_dims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n_values = r.u32()? as usize;
        let payload = n_values
            .checked_mul(8)
            .and_then(|p| p.checked_add(4))
            .ok_or_else(|| FormatError::MalformedHeader("parameter count overflows".into()))?;
        r.require(payload)?;
        if r.remaining() != payload {
            return Err(FormatError::MalformedHeader(format!(
                "{} trailing bytes after payload",
                r.remaining() - payload
            ))
            .into());
        }
        verify_crc(bytes)?;
        let values = r.f64s(n_values)?;
        let mut embed =
            EmbeddingNet::zeros(&dims).map_err(|e| FormatError::MalformedHeader(format!("layer widths: {e}")))?;
        let block = ParamBlock::from_values(embed.params().layers().to_vec(), values)
            .map_err(|e| FormatError::MalformedHeader(format!("parameters: {e}")))?;
        embed.set_params(block)?;
        Ok(Self { epoch, embed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
