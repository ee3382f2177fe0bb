//! The SIGACT1 activation dump format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SIGACT1\0"
//! 8       4     version (u32 LE, = 1)
//! 12      4     token count T (u32 LE)
//! 16      4     layer count L (u32 LE)
//! 20      4     hidden width d (u32 LE)
//! 24      4·T·L·d  f32 LE payload, [token][layer][dim]
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ActivationStack, ModelGeometry};

pub const MAGIC: &[u8; 8] = b"SIGACT1\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Shape fields of a SIGACT1 header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationHeader {
    pub token_count: usize,
    pub n_layers: usize,
    pub d_model: usize,
}

impl ActivationHeader {
    fn payload_len(&self) -> u64 {
        4 * self.token_count as u64 * self.n_layers as u64 * self.d_model as u64
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<ActivationHeader> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(Error::TruncatedFile {
                path: path.into(),
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(Error::BadVersion { path: path.into(), version });
    }
    Ok(ActivationHeader {
        token_count: u32_at(bytes, 12) as usize,
        n_layers: u32_at(bytes, 16) as usize,
        d_model: u32_at(bytes, 20) as usize,
    })
}

/// Reads only the 24-byte header.
pub fn read_activation_header(path: &Path) -> Result<ActivationHeader> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    file.by_ref()
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    parse_header(&buf, path)
}

pub fn decode_activation(bytes: &[u8], path: &Path) -> Result<ActivationStack> {
    let header = parse_header(bytes, path)?;
    let geometry = ModelGeometry::new(header.n_layers, header.d_model)?;
    if header.token_count == 0 {
        return Err(Error::InvalidGeometry(format!("{path:?} declares zero tokens")));
    }
    let expected = HEADER_LEN as u64 + header.payload_len();
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFile { path: path.into(), expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes { path: path.into(), expected, found });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    ActivationStack::new(geometry, header.token_count, values)
}

pub fn read_activation_file(path: &Path) -> Result<ActivationStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_activation(&bytes, path)
}

pub fn encode_activation(stack: &ActivationStack) -> Result<Vec<u8>> {
    if let Some(index) = stack.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let g = stack.geometry();
    let dims = [stack.token_count(), g.n_layers(), g.d_model()];
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * stack.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in dims {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::InvalidGeometry(format!("dimension {dim} exceeds u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for v in stack.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_activation_file(stack: &ActivationStack, path: &Path) -> Result<()> {
    let bytes = encode_activation(stack)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
