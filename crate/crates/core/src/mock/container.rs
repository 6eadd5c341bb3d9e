//! Named-tensor container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "HETN" | u32 version (=1) | u32 count
//! count x ( u32 name_len | name (UTF-8) | u32 ndims | ndims x u32 dim | f32 payload )
//! ```
//!
//! Payloads are row-major with `product(dims)` values. Entries are written in
//! name order; names must be unique.

use std::collections::BTreeMap;
use std::path::Path;

use super::Tensor;

pub const MAGIC: &[u8; 4] = b"HETN";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("not a tensor container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("container truncated at byte {0}")]
    Truncated(usize),
    #[error("tensor name at byte {0} is not UTF-8")]
    Name(usize),
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Tensors = BTreeMap<String, Tensor>;

/// Serialize `tensors`; values are narrowed to `f32`.
pub fn encode(tensors: &Tensors) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ContainerError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensors, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| ContainerError::BadMagic)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let count = r.u32()?;
    let mut out = Tensors::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ContainerError::Name(at))?
            .to_string();
        let ndims = r.u32()? as usize;
        let dims = (0..ndims)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or(ContainerError::Truncated(r.pos))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if out.insert(name.clone(), Tensor::new(dims, data)).is_some() {
            return Err(ContainerError::Duplicate(name));
        }
    }
    match bytes.len() - r.pos {
        0 => Ok(out),
        n => Err(ContainerError::Trailing(n)),
    }
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Tensors, ContainerError> {
    decode(&std::fs::read(path)?)
}

pub fn write_file(path: impl AsRef<Path>, tensors: &Tensors) -> Result<(), ContainerError> {
    Ok(std::fs::write(path, encode(tensors))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensors {
        Tensors::from([
            ("b".to_string(), Tensor::new(vec![2], vec![1.5, -2.0])),
            (
                "a.weight".to_string(),
                Tensor::new(vec![1, 2, 1, 1], vec![0.25, 8.0]),
            ),
            ("empty".to_string(), Tensor::new(vec![0], vec![])),
        ])
    }

    #[test]
    fn byte_layout() {
        let t = Tensors::from([("x".to_string(), Tensor::new(vec![1], vec![1.0]))]);
        let bytes = encode(&t);
        let mut want = b"HETN".to_vec();
        for w in [1u32, 1, 1] {
            want.extend_from_slice(&w.to_le_bytes());
        }
        want.push(b'x');
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&sample());
        assert!(matches!(decode(b"NOPE"), Err(ContainerError::BadMagic)));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(ContainerError::Truncated(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(ContainerError::Trailing(1))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(ContainerError::Version(2))));
    }
}
