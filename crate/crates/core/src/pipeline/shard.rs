//! Self-describing columnar binary files.
//!
//! Layout: the 8-byte magic `EMCLOUD1`, a little-endian `u64` header length,
//! a UTF-8 JSON header listing every field (name, dtype, shape, byte offset
//! into the data block) plus free-form metadata, then the raw little-endian
//! arrays back to back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const SHARD_MAGIC: &[u8; 8] = b"EMCLOUD1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U64,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 | Dtype::U64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data block.
    pub offset: u64,
}

impl Field {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Column {
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl Column {
    fn dtype(&self) -> Dtype {
        match self {
            Column::F64(_) => Dtype::F64,
            Column::U64(_) => Dtype::U64,
            Column::U8(_) => Dtype::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Column::F64(v) => v.len(),
            Column::U64(v) => v.len(),
            Column::U8(v) => v.len(),
        }
    }

    fn write_le(&self, out: &mut impl Write) -> std::io::Result<()> {
        match self {
            Column::F64(v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes())),
            Column::U64(v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes())),
            Column::U8(v) => out.write_all(v),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> Self {
        let words = bytes.chunks_exact(8).map(|c| c.try_into().expect("8-byte chunk"));
        match dtype {
            Dtype::F64 => Column::F64(words.map(f64::from_le_bytes).collect()),
            Dtype::U64 => Column::U64(words.map(u64::from_le_bytes).collect()),
            Dtype::U8 => Column::U8(bytes.to_vec()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    fields: Vec<Field>,
    meta: serde_json::Value,
}

/// Accumulates named arrays and writes them as one shard.
#[derive(Debug, Default)]
pub struct ShardWriter {
    fields: Vec<Field>,
    columns: Vec<Column>,
    bytes: u64,
}

impl ShardWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, shape: &[usize], col: Column) -> Result<(), PipelineError> {
        let expected: usize = shape.iter().product();
        if col.len() != expected {
            return Err(PipelineError::Format(format!(
                "field {name}: {} values for shape {shape:?}",
                col.len()
            )));
        }
        if self.fields.iter().any(|f| f.name == name) {
            return Err(PipelineError::Format(format!("duplicate field {name}")));
        }
        let dtype = col.dtype();
        self.fields.push(Field {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            offset: self.bytes,
        });
        self.bytes += (expected * dtype.size()) as u64;
        self.columns.push(col);
        Ok(())
    }

    pub fn f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<(), PipelineError> {
        self.push(name, shape, Column::F64(data))
    }

    pub fn u64(&mut self, name: &str, shape: &[usize], data: Vec<u64>) -> Result<(), PipelineError> {
        self.push(name, shape, Column::U64(data))
    }

    pub fn u8(&mut self, name: &str, shape: &[usize], data: Vec<u8>) -> Result<(), PipelineError> {
        self.push(name, shape, Column::U8(data))
    }

    /// Writes atomically (temporary file, then rename).
    pub fn write(&self, path: &Path, meta: serde_json::Value) -> Result<(), PipelineError> {
        let header = serde_json::to_vec(&Header {
            fields: self.fields.clone(),
            meta,
        })?;
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            out.write_all(SHARD_MAGIC)?;
            out.write_all(&(header.len() as u64).to_le_bytes())?;
            out.write_all(&header)?;
            for col in &self.columns {
                col.write_le(&mut out)?;
            }
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// A shard read back into memory.
#[derive(Debug, Clone)]
pub struct Shard {
    pub fields: Vec<Field>,
    pub meta: serde_json::Value,
    columns: Vec<Column>,
}

impl Shard {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let bad = |m: String| PipelineError::Format(format!("{}: {m}", path.display()));
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated".into()))?;
        if &magic != SHARD_MAGIC {
            return Err(bad("not an emcloud shard".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(|_| bad("truncated".into()))?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 30 {
            return Err(bad(format!("implausible header length {len}")));
        }
        let mut header = vec![0u8; len as usize];
        input.read_exact(&mut header).map_err(|_| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        let mut columns = Vec::with_capacity(header.fields.len());
        for f in &header.fields {
            let start = f.offset as usize;
            let end = start + f.len() * f.dtype.size();
            if end > data.len() {
                return Err(bad(format!("field {} runs past the end of the file", f.name)));
            }
            columns.push(Column::read_le(f.dtype, &data[start..end]));
        }
        Ok(Shard {
            fields: header.fields,
            meta: header.meta,
            columns,
        })
    }

    fn column(&self, name: &str, dtype: Dtype) -> Result<(&Field, &Column), PipelineError> {
        let i = self
            .fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| PipelineError::Format(format!("missing field {name}")))?;
        let f = &self.fields[i];
        if f.dtype != dtype {
            return Err(PipelineError::Format(format!(
                "field {name} is {:?}, expected {dtype:?}",
                f.dtype
            )));
        }
        Ok((f, &self.columns[i]))
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64]), PipelineError> {
        match self.column(name, Dtype::F64)? {
            (f, Column::F64(v)) => Ok((&f.shape, v)),
            _ => unreachable!("dtype checked"),
        }
    }

    pub fn u64(&self, name: &str) -> Result<(&[usize], &[u64]), PipelineError> {
        match self.column(name, Dtype::U64)? {
            (f, Column::U64(v)) => Ok((&f.shape, v)),
            _ => unreachable!("dtype checked"),
        }
    }

    pub fn u8(&self, name: &str) -> Result<(&[usize], &[u8]), PipelineError> {
        match self.column(name, Dtype::U8)? {
            (f, Column::U8(v)) => Ok((&f.shape, v)),
            _ => unreachable!("dtype checked"),
        }
    }
}
