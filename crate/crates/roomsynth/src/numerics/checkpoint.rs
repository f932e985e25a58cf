//! RDCK checkpoint chunks.
//!
//! Layout: magic `RDCK`, version u32, then repeated records of
//! (name length u32, UTF-8 name, rank u32, extents as u64s, payload as f64s).
//! All integers and floats little-endian; round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const RDCK_MAGIC: [u8; 4] = *b"RDCK";
pub const RDCK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub name: String,
    pub extents: Vec<u64>,
    pub payload: Vec<f64>,
}

pub fn write_chunks(path: &Path, chunks: &[Chunk]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&RDCK_MAGIC)?;
    w.write_all(&RDCK_VERSION.to_le_bytes())?;
    for c in chunks {
        let numel: u64 = c.extents.iter().product();
        assert_eq!(
            numel as usize,
            c.payload.len(),
            "chunk {:?} extents {:?} do not match payload length {}",
            c.name,
            c.extents,
            c.payload.len()
        );
        let name = c.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(c.extents.len() as u32).to_le_bytes())?;
        for e in &c.extents {
            w.write_all(&e.to_le_bytes())?;
        }
        for v in &c.payload {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_chunks(path: &Path) -> Result<Vec<Chunk>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != RDCK_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad checkpoint magic {:?}",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut r)?;
    if version != RDCK_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let mut chunks = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read(&mut len_buf)? {
            0 => break,
            4 => {}
            n => {
                // A partial length prefix means the file was truncated.
                let mut rest = vec![0u8; 4 - n];
                r.read_exact(&mut rest).map_err(|_| {
                    Error::Data(format!("{}: truncated record header", path.display()))
                })?;
                len_buf[n..].copy_from_slice(&rest);
            }
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Data(format!("{}: chunk name is not UTF-8", path.display())))?;
        let rank = read_u32(&mut r)? as usize;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(read_u64(&mut r)?);
        }
        let numel: u64 = extents.iter().product();
        let mut payload = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            payload.push(read_f64(&mut r)?);
        }
        chunks.push(Chunk { name, extents, payload });
    }
    Ok(chunks)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
