//! Model file: magic bytes, format version, a fixed-size config block, then
//! every parameter tensor as little-endian 64-bit floats in declaration
//! order. Loading is bit-exact and rejects truncated or padded files.

use std::io::Read;
use std::path::Path;

use super::{LstmParams, NeuralError};

const MAGIC: [u8; 4] = *b"FCLM";
const FORMAT_VERSION: u16 = 1;

/// Version of the per-window min-max normalization contract the stored
/// parameters were trained under.
pub const NORMALIZATION_VERSION: u16 = 1;

/// Everything needed to rebuild the model's input pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMeta {
    /// Trailing window length T in bars.
    pub window_t: usize,
    /// Bar interval l in milliseconds.
    pub interval_ms: i64,
    /// Forward-return horizon m in bars.
    pub horizon_m: u32,
    /// Label threshold epsilon.
    pub epsilon: f64,
    /// Which feature columns were first-differenced before windowing.
    pub differenced: [bool; 7],
    pub normalization_version: u16,
}

pub fn save_model(path: &Path, params: &LstmParams, meta: &ModelMeta) -> Result<(), NeuralError> {
    params.validate()?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(params.n as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.f as u32).to_le_bytes());
    bytes.extend_from_slice(&(meta.window_t as u32).to_le_bytes());
    bytes.extend_from_slice(&meta.interval_ms.to_le_bytes());
    bytes.extend_from_slice(&meta.horizon_m.to_le_bytes());
    bytes.extend_from_slice(&meta.epsilon.to_le_bytes());
    bytes.extend_from_slice(&meta.normalization_version.to_le_bytes());
    for &d in &meta.differenced {
        bytes.push(u8::from(d));
    }
    for slice in params.slices() {
        for v in slice {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        if self.pos + n > self.bytes.len() {
            return Err(NeuralError::CorruptFile(format!(
                "unexpected end of file at byte {}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, NeuralError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, NeuralError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NeuralError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_model(path: &Path) -> Result<(LstmParams, ModelMeta), NeuralError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != MAGIC {
        return Err(NeuralError::CorruptFile("bad magic bytes".into()));
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(NeuralError::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    let n = cur.u32()? as usize;
    let f = cur.u32()? as usize;
    let window_t = cur.u32()? as usize;
    let interval_ms = cur.i64()?;
    let horizon_m = cur.u32()?;
    let epsilon = cur.f64()?;
    let normalization_version = cur.u16()?;
    let mut differenced = [false; 7];
    for d in &mut differenced {
        *d = cur.take(1)?[0] != 0;
    }

    let mut params = LstmParams::zeros(n, f);
    for slice in params.slices_mut() {
        for v in slice.iter_mut() {
            *v = cur.f64()?;
        }
    }
    if cur.pos != bytes.len() {
        return Err(NeuralError::CorruptFile(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    params.validate()?;
    Ok((
        params,
        ModelMeta {
            window_t,
            interval_ms,
            horizon_m,
            epsilon,
            differenced,
            normalization_version,
        },
    ))
}
