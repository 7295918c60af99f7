//! Bit-exact binary dataset file format.
//!
//! Layout (all integers little-endian):
//! magic "MMVP" | version u32 | num_sequences u32 | seq_len u32 |
//! height u32 | width u32 | channels u32 | dtype u8 | payload bytes.
//! dtype 0 = unsigned byte, intensity = value / 255.

use std::fs;
use std::path::Path;

use crate::data::SequenceDataset;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"MMVP";
pub const DATASET_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 * 6 + 1;

pub fn write_dataset(ds: &SequenceDataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + ds.data.len());
    bytes.extend_from_slice(&DATASET_MAGIC);
    for v in [
        DATASET_VERSION,
        ds.num_sequences,
        ds.seq_len,
        ds.height,
        ds.width,
        ds.channels,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.push(0u8); // dtype: unsigned byte
    bytes.extend_from_slice(&ds.data);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<SequenceDataset> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("len checked");
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("len checked"));
    let version = u32_at(4);
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let num_sequences = u32_at(8);
    let seq_len = u32_at(12);
    let height = u32_at(16);
    let width = u32_at(20);
    let channels = u32_at(24);
    let dtype = bytes[28];
    if dtype != 0 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let expected =
        num_sequences as usize * seq_len as usize * height as usize * width as usize * channels as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Ok(SequenceDataset {
        num_sequences,
        seq_len,
        height,
        width,
        channels,
        data: payload.to_vec(),
    })
}
