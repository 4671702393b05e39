//! Named-array bundle container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "MVPB"
//! version u32      1
//! count   u32      number of arrays
//! per array:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8   0 = f32, 1 = u8, 2 = u32
//!   ndim     u8
//!   dims     ndim × u32
//!   data     product(dims) elements, C row-major, little-endian
//! ```
//!
//! Writing is fully deterministic: entries are emitted in insertion order
//! with no timestamps or padding, so identical inputs give identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MVPB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum BundleData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl BundleData {
    fn dtype(&self) -> u8 {
        match self {
            BundleData::F32(_) => 0,
            BundleData::U8(_) => 1,
            BundleData::U32(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            BundleData::F32(v) => v.len(),
            BundleData::U8(v) => v.len(),
            BundleData::U32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: BundleData,
}

/// An ordered collection of named arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayBundle {
    pub entries: Vec<BundleEntry>,
}

impl ArrayBundle {
    pub fn new() -> Self {
        ArrayBundle::default()
    }

    pub fn get(&self, name: &str) -> Option<&BundleEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn push(&mut self, name: impl Into<String>, dims: Vec<u32>, data: BundleData) {
        let entry = BundleEntry {
            name: name.into(),
            dims,
            data,
        };
        debug_assert_eq!(
            entry.dims.iter().map(|&d| d as usize).product::<usize>(),
            entry.data.len()
        );
        self.entries.push(entry);
    }

    /// Store a channel-first f64 array as f32.
    pub fn push_array3(&mut self, name: impl Into<String>, array: &Array3<f64>) {
        let (c, h, w) = array.dim();
        let data = array.iter().map(|&v| v as f32).collect();
        self.push(name, vec![c as u32, h as u32, w as u32], BundleData::F32(data));
    }

    pub fn push_array2(&mut self, name: impl Into<String>, array: &Array2<f64>) {
        let (h, w) = array.dim();
        let data = array.iter().map(|&v| v as f32).collect();
        self.push(name, vec![h as u32, w as u32], BundleData::F32(data));
    }

    pub fn push_mask(&mut self, name: impl Into<String>, mask: &Array2<bool>) {
        let (h, w) = mask.dim();
        let data = mask.iter().map(|&m| m as u8).collect();
        self.push(name, vec![h as u32, w as u32], BundleData::U8(data));
    }

    pub fn push_u32_2d(&mut self, name: impl Into<String>, array: &Array2<u32>) {
        let (h, w) = array.dim();
        self.push(
            name,
            vec![h as u32, w as u32],
            BundleData::U32(array.iter().copied().collect()),
        );
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for entry in &self.entries {
            out.write_all(&(entry.name.len() as u32).to_le_bytes())?;
            out.write_all(entry.name.as_bytes())?;
            out.write_all(&[entry.data.dtype(), entry.dims.len() as u8])?;
            for &d in &entry.dims {
                out.write_all(&d.to_le_bytes())?;
            }
            match &entry.data {
                BundleData::F32(v) => {
                    for x in v {
                        out.write_all(&x.to_le_bytes())?;
                    }
                }
                BundleData::U8(v) => out.write_all(v)?,
                BundleData::U32(v) => {
                    for x in v {
                        out.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Validation("not an MVPB bundle".into()));
        }
        let mut u32buf = [0u8; 4];
        reader.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(Error::Validation(format!("unsupported bundle version {version}")));
        }
        reader.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            reader.read_exact(&mut u32buf)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            if name_len > 4096 {
                return Err(Error::Validation("oversized bundle entry name".into()));
            }
            let mut name = vec![0u8; name_len];
            reader.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Validation("non-UTF8 bundle entry name".into()))?;
            let mut head = [0u8; 2];
            reader.read_exact(&mut head)?;
            let (dtype, ndim) = (head[0], head[1] as usize);
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                reader.read_exact(&mut u32buf)?;
                dims.push(u32::from_le_bytes(u32buf));
            }
            let len: usize = dims.iter().map(|&d| d as usize).product();
            if len > 1 << 30 {
                return Err(Error::Validation("unreasonable bundle array size".into()));
            }
            let data = match dtype {
                0 => {
                    let mut raw = vec![0u8; len * 4];
                    reader.read_exact(&mut raw)?;
                    BundleData::F32(
                        raw.chunks_exact(4)
                            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                            .collect(),
                    )
                }
                1 => {
                    let mut raw = vec![0u8; len];
                    reader.read_exact(&mut raw)?;
                    BundleData::U8(raw)
                }
                2 => {
                    let mut raw = vec![0u8; len * 4];
                    reader.read_exact(&mut raw)?;
                    BundleData::U32(
                        raw.chunks_exact(4)
                            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                            .collect(),
                    )
                }
                other => {
                    return Err(Error::Validation(format!("unknown bundle dtype {other}")));
                }
            };
            entries.push(BundleEntry { name, dims, data });
        }
        Ok(ArrayBundle { entries })
    }
}
