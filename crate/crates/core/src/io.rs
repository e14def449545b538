//! Binary container plumbing shared by the cluster-store and datastore
//! files, plus atomic file writes.
//!
//! Every artifact starts with the magic `HKNN`, a `u32` version and the
//! vector dimension as `u32`; all integers and floats are little-endian
//! and vectors are stored as 32-bit floats.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HKNN";
pub const VERSION: u32 = 1;

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format("truncated file")
        } else {
            Error::Io(e)
        }
    })
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Shared file header: magic, version, vector dimension.
pub fn write_header<W: Write>(w: &mut W, dim: u32) -> Result<()> {
    w.write_all(&MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, dim)?;
    Ok(())
}

/// Reads and validates the shared header, returning the dimension.
pub fn read_header<R: Read>(r: &mut R) -> Result<u32> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if magic != MAGIC {
        return Err(Error::format("bad magic, not an HKNN file"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let dim = read_u32(r)?;
    if dim > (1 << 24) {
        return Err(Error::format(format!("implausible dimension {dim}")));
    }
    Ok(dim)
}

/// Upfront reservation bound for counts read from files. A corrupt count
/// then surfaces as a truncation error when the data runs out, not as an
/// allocation abort.
pub fn checked_capacity(count: usize) -> usize {
    count.min(65_536)
}

/// Writes a file through a sibling temp path and renames it into place, so
/// an interrupted run never leaves a partial artifact behind.
pub fn atomic_write(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::usage(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}
