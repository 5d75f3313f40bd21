//! Parameter-vector checkpoint files.
//!
//! Layout: a 16-byte header — magic `"FSHP"`, format version (u32 LE),
//! vector length (u64 LE) — followed by the values as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub const MAGIC: [u8; 4] = *b"FSHP";
pub const FORMAT_VERSION: u32 = 1;

/// Writes a checkpoint.
pub fn save(path: &Path, params: &ParamVector) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(&MAGIC)?;
    writer.write_all(&FORMAT_VERSION.to_le_bytes())?;
    writer.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a checkpoint, validating the header and that every value is finite.
pub fn load(path: &Path) -> Result<ParamVector> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    reader.read_exact(&mut header).map_err(|_| {
        Error::Checkpoint(format!("{}: header shorter than 16 bytes", path.display()))
    })?;
    if header[..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            &header[..4]
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; len * 8];
    reader.read_exact(&mut payload).map_err(|_| {
        Error::Checkpoint(format!(
            "{}: payload shorter than {} values",
            path.display(),
            len
        ))
    })?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::Checkpoint(format!(
            "{}: non-finite parameter value",
            path.display()
        )));
    }
    Ok(ParamVector::from_vec(values))
}
