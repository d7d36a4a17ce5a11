//! Binary field snapshots and CSV output.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::experiments::Curve;
use crate::lattice::{Field, TorusShape, C64};

pub const MAGIC: [u8; 4] = *b"NLSF";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("not a field snapshot: magic bytes {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported snapshot version {found} (supported: {VERSION})")]
    Version { found: u32 },
    #[error("truncated snapshot: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes after snapshot payload: {0}")]
    Trailing(usize),
    #[error("invalid shape in header: d = {d}, n = {n}")]
    Shape { d: u32, n: u32 },
    #[error("non-finite value at site {0}")]
    NonFinite(usize),
    #[error("site list: {0}")]
    Sites(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Header, then N little-endian (re, im) f64 pairs in row-major order.
pub fn encode_field(f: &Field) -> Vec<u8> {
    let shape = f.shape();
    let mut out = Vec::with_capacity(HEADER + 16 * shape.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.d() as u32).to_le_bytes());
    out.extend_from_slice(&(shape.n() as u32).to_le_bytes());
    for z in f.values() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("four bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("eight bytes"))
}

pub fn decode_field(b: &[u8]) -> Result<Field, IoError> {
    if b.len() < 4 {
        return Err(IoError::Truncated { expected: HEADER, found: b.len() });
    }
    let magic: [u8; 4] = b[..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(IoError::Magic(magic));
    }
    if b.len() < HEADER {
        return Err(IoError::Truncated { expected: HEADER, found: b.len() });
    }
    let version = u32_at(b, 4);
    if version != VERSION {
        return Err(IoError::Version { found: version });
    }
    let (d, n) = (u32_at(b, 8), u32_at(b, 12));
    let shape = TorusShape::new(d as usize, n as usize).map_err(|_| IoError::Shape { d, n })?;
    let expected = HEADER + 16 * shape.size();
    if b.len() < expected {
        return Err(IoError::Truncated { expected, found: b.len() });
    }
    if b.len() > expected {
        return Err(IoError::Trailing(b.len() - expected));
    }
    let mut v = Vec::with_capacity(shape.size());
    for i in 0..shape.size() {
        let at = HEADER + 16 * i;
        let z = C64::new(f64_at(b, at), f64_at(b, at + 8));
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(IoError::NonFinite(i));
        }
        v.push(z);
    }
    Ok(Field::from_values(shape, v).expect("finite values"))
}

pub fn write_field(path: &Path, f: &Field) -> Result<(), IoError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_field(f))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field, IoError> {
    let mut b = Vec::new();
    fs::File::open(path)?.read_to_end(&mut b)?;
    decode_field(&b)
}

/// Whitespace- or comma-separated site indices; `#` starts a comment.
pub fn parse_sites(text: &str, shape: TorusShape) -> Result<Vec<usize>, IoError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let x: usize = tok.parse().map_err(|_| IoError::Sites(format!("not a site index: {tok:?}")))?;
            if x >= shape.size() {
                return Err(IoError::Sites(format!("site {x} outside torus of {} sites", shape.size())));
            }
            out.push(x);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn write_csv(path: &Path, curve: &Curve) -> Result<(), IoError> {
    fs::write(path, curve.to_csv())?;
    Ok(())
}
