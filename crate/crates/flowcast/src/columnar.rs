//! Compact binary container for named f64 columns.
//!
//! Layout, all integers little-endian:
//! magic `FCCF`, u16 format version, u32 column count, u64 row count, then
//! per column a u16 name length + UTF-8 name, then the column payloads in
//! declaration order, each `rows` little-endian f64 values. Values round-trip
//! bit-exactly, including NaN payloads.

use std::io::{Read, Write};

use thiserror::Error;

const MAGIC: &[u8; 4] = b"FCCF";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ColumnarError {
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("column shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named f64 columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSet {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl ColumnSet {
    pub fn new() -> Self {
        Self { names: Vec::new(), columns: Vec::new(), rows: 0 }
    }

    /// Appends a column. Every column after the first must match the length
    /// of the first.
    pub fn push(&mut self, name: &str, values: Vec<f64>) -> Result<(), ColumnarError> {
        if self.columns.is_empty() {
            self.rows = values.len();
        } else if values.len() != self.rows {
            return Err(ColumnarError::Shape(format!(
                "column '{name}' has {} rows, expected {}",
                values.len(),
                self.rows
            )));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(ColumnarError::Shape(format!("duplicate column name '{name}'")));
        }
        self.names.push(name.to_string());
        self.columns.push(values);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names.iter().map(String::as_str).zip(self.columns.iter().map(Vec::as_slice))
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<(), ColumnarError> {
        sink.write_all(MAGIC)?;
        sink.write_all(&FORMAT_VERSION.to_le_bytes())?;
        sink.write_all(&(self.columns.len() as u32).to_le_bytes())?;
        sink.write_all(&(self.rows as u64).to_le_bytes())?;
        for name in &self.names {
            let bytes = name.as_bytes();
            sink.write_all(&(bytes.len() as u16).to_le_bytes())?;
            sink.write_all(bytes)?;
        }
        for column in &self.columns {
            for v in column {
                sink.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut source: R) -> Result<Self, ColumnarError> {
        let mut magic = [0u8; 4];
        source.read_exact(&mut magic).map_err(|_| ColumnarError::Corrupt("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(ColumnarError::Corrupt(format!("bad magic {magic:02x?}")));
        }
        let version = read_u16(&mut source)?;
        if version != FORMAT_VERSION {
            return Err(ColumnarError::UnsupportedVersion(version));
        }
        let cols = read_u32(&mut source)? as usize;
        let rows = read_u64(&mut source)? as usize;

        let mut names = Vec::with_capacity(cols);
        for _ in 0..cols {
            let len = read_u16(&mut source)? as usize;
            let mut buf = vec![0u8; len];
            source
                .read_exact(&mut buf)
                .map_err(|_| ColumnarError::Corrupt("truncated column name".into()))?;
            names.push(
                String::from_utf8(buf)
                    .map_err(|_| ColumnarError::Corrupt("column name is not UTF-8".into()))?,
            );
        }

        let mut columns = Vec::with_capacity(cols);
        let mut payload = vec![0u8; rows * 8];
        for name in &names {
            source.read_exact(&mut payload).map_err(|_| {
                ColumnarError::Corrupt(format!("truncated payload for column '{name}'"))
            })?;
            columns.push(
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            );
        }

        let mut trailer = [0u8; 1];
        if source.read(&mut trailer)? != 0 {
            return Err(ColumnarError::Corrupt("trailing bytes after payload".into()));
        }
        Ok(Self { names, columns, rows })
    }

    pub fn write_path(&self, path: &std::path::Path) -> Result<(), ColumnarError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn read_path(path: &std::path::Path) -> Result<Self, ColumnarError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

impl Default for ColumnSet {
    fn default() -> Self {
        Self::new()
    }
}

fn read_u16<R: Read>(source: &mut R) -> Result<u16, ColumnarError> {
    let mut buf = [0u8; 2];
    source.read_exact(&mut buf).map_err(|_| ColumnarError::Corrupt("truncated header".into()))?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(source: &mut R) -> Result<u32, ColumnarError> {
    let mut buf = [0u8; 4];
    source.read_exact(&mut buf).map_err(|_| ColumnarError::Corrupt("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(source: &mut R) -> Result<u64, ColumnarError> {
    let mut buf = [0u8; 8];
    source.read_exact(&mut buf).map_err(|_| ColumnarError::Corrupt("truncated header".into()))?;
    Ok(u64::from_le_bytes(buf))
}
