//! Versioned binary container used for checkpoints and external embedding
//! files.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic:   4 bytes  "ESDF"
//! version: u32      currently 1
//! count:   u32      number of records
//! record:
//!   name_len: u32
//!   name:     name_len bytes, UTF-8
//!   kind:     u8     0 = f64 tensor, 1 = raw bytes
//!   kind 0:   rank: u32, dims: rank x u32, data: prod(dims) x f64 (LE bits)
//!   kind 1:   len: u64, payload: len bytes
//! ```
//!
//! Record order is preserved; names are unique within a file.

use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"ESDF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Tensor { shape: Vec<usize>, data: Vec<f64> },
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub payload: Payload,
}

impl Record {
    pub fn tensor(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Record {
            name: name.into(),
            payload: Payload::Tensor { shape, data },
        }
    }

    pub fn bytes(name: impl Into<String>, data: Vec<u8>) -> Self {
        Record {
            name: name.into(),
            payload: Payload::Bytes(data),
        }
    }
}

pub fn write_records(w: &mut impl Write, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for rec in records {
        let name = rec.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        match &rec.payload {
            Payload::Tensor { shape, data } => {
                let numel: usize = shape.iter().product();
                if numel != data.len() {
                    return Err(Error::Checkpoint(format!(
                        "record `{}`: shape {:?} does not match {} values",
                        rec.name,
                        shape,
                        data.len()
                    )));
                }
                w.write_all(&[0u8])?;
                w.write_all(&(shape.len() as u32).to_le_bytes())?;
                for d in shape {
                    w.write_all(&(*d as u32).to_le_bytes())?;
                }
                for x in data {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Payload::Bytes(bytes) => {
                w.write_all(&[1u8])?;
                w.write_all(&(bytes.len() as u64).to_le_bytes())?;
                w.write_all(bytes)?;
            }
        }
    }
    Ok(())
}

pub fn read_records(r: &mut impl Read) -> Result<Vec<Record>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a container file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let payload = match kind[0] {
            0 => {
                let rank = read_u32(r)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(read_u32(r)? as usize);
                }
                let numel: usize = shape.iter().product();
                let mut data = Vec::with_capacity(numel);
                let mut buf = [0u8; 8];
                for _ in 0..numel {
                    r.read_exact(&mut buf)?;
                    data.push(f64::from_le_bytes(buf));
                }
                Payload::Tensor { shape, data }
            }
            1 => {
                let mut lenb = [0u8; 8];
                r.read_exact(&mut lenb)?;
                let len = u64::from_le_bytes(lenb) as usize;
                let mut bytes = vec![0u8; len];
                r.read_exact(&mut bytes)?;
                Payload::Bytes(bytes)
            }
            k => {
                return Err(Error::Checkpoint(format!(
                    "record `{name}`: unknown kind {k}"
                )))
            }
        };
        records.push(Record { name, payload });
    }
    Ok(records)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_file(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path.as_ref())?;
    read_records(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let records = vec![
            Record::tensor("layer.weight", vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 1e-9, 7.0]),
            Record::bytes("meta", b"hello".to_vec()),
            Record::tensor("empty", vec![0], vec![]),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(&mut buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_records(&mut b"XXXX".as_slice());
        assert!(err.is_err());
    }
}
