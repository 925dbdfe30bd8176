//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "RISERCKP"
//! format       u32      currently 1
//! vocab        u32
//! embed        u32
//! hidden       u32
//! counter      u64      update counter (policy version or optimizer step)
//! num_arrays   u32
//! per array:   name_len u32, name (utf-8), count u64, count x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RISERCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dims: [u32; 3],
    pub counter: u64,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for d in self.dims {
            out.write_all(&d.to_le_bytes())?;
        }
        out.write_all(&self.counter.to_le_bytes())?;
        out.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, values) in &self.arrays {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    }

    pub fn read_from<R: Read>(mut input: R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic bytes".into());
        }
        let format = read_u32(&mut input)?;
        if format != FORMAT_VERSION {
            return Err(format!("unsupported format version {format}"));
        }
        let dims = [
            read_u32(&mut input)?,
            read_u32(&mut input)?,
            read_u32(&mut input)?,
        ];
        let counter = read_u64(&mut input)?;
        let n = read_u32(&mut input)? as usize;
        let mut arrays = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name).map_err(|e| e.to_string())?;
            let name = String::from_utf8(name).map_err(|e| e.to_string())?;
            let count = read_u64(&mut input)? as usize;
            let mut bytes = vec![0u8; count * 8];
            input.read_exact(&mut bytes).map_err(|e| e.to_string())?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push((name, values));
        }
        Ok(Self {
            dims,
            counter,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u64::from_le_bytes(b))
}
