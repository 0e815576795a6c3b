//! Per-patch model-selection flags and the "ASNF" flag file.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"ASNF" | version: u32 | patch_count: u32 | packed flags
//! ```
//!
//! Flags take two bits each, most significant first within a byte; the final byte
//! is zero-padded.

use std::fs;
use std::path::Path;

use super::BANK_SIZE;
use crate::error::{bail, Result};
use crate::nn::io::Reader;

pub const FLAG_MAGIC: &[u8; 4] = b"ASNF";
pub const FLAG_VERSION: u32 = 1;
pub const FLAG_BITS: u64 = 2;
const FLAGS_PER_BYTE: usize = 4;

/// Signalling cost of `patches` selection flags.
pub fn flag_overhead_bits(patches: usize) -> u64 {
    FLAG_BITS * patches as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlagStream {
    flags: Vec<u8>,
}

impl FlagStream {
    pub fn new(flags: Vec<u8>) -> Result<Self> {
        if let Some(f) = flags.iter().find(|&&f| f as usize >= BANK_SIZE) {
            bail!(Precondition, "flag {f} is outside 0..{BANK_SIZE}");
        }
        Ok(Self { flags })
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    pub fn patch_count(&self) -> usize {
        self.flags.len()
    }

    pub fn bits(&self) -> u64 {
        flag_overhead_bits(self.flags.len())
    }

    pub fn pack(&self) -> Vec<u8> {
        self.flags
            .chunks(FLAGS_PER_BYTE)
            .map(|chunk| chunk.iter().enumerate().fold(0u8, |b, (i, &f)| b | f << (6 - 2 * i)))
            .collect()
    }

    /// Reads `count` flags from `bytes`, which must hold exactly the packed payload.
    pub fn unpack(bytes: &[u8], count: usize) -> Result<Self> {
        let need = count.div_ceil(FLAGS_PER_BYTE);
        if bytes.len() != need {
            bail!(Parse, "{count} flags need {need} bytes, got {}", bytes.len());
        }
        let flags: Vec<u8> = (0..count).map(|i| (bytes[i / 4] >> (6 - 2 * (i % 4))) & 0b11).collect();
        let used = count % FLAGS_PER_BYTE;
        if used != 0 && bytes[need - 1] & (0xFF >> (2 * used)) != 0 {
            bail!(Parse, "non-zero padding after the last flag");
        }
        Ok(Self { flags })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.flags.len() / 4 + 1);
        out.extend_from_slice(FLAG_MAGIC);
        out.extend_from_slice(&FLAG_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.flags.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.pack());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != FLAG_MAGIC {
            bail!(Parse, "not a flag file (bad magic)");
        }
        let version = r.u32()?;
        if version != FLAG_VERSION {
            bail!(Parse, "unsupported flag file version {version}");
        }
        let count = r.u32()? as usize;
        let payload = &bytes[12..];
        Self::unpack(payload, count)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
