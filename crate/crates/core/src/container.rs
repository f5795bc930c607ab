//! Named-tensor container shared by every binary artifact in the crate.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! magic        4 bytes   e.g. "VGGW", "PCAM", "SVMM", "FEAT"
//! version      u32       = 1
//! tensor_count u32
//! repeated tensor_count times:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   rank       u8
//!   dims       rank x u32
//!   values     product(dims) x element, row-major
//! ```
//!
//! The element width is fixed per magic: network weights are `f32`, fitted
//! models and feature caches are `f64`.

use std::io::Write;

use thiserror::Error;

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported container version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("tensor `{0}` has too many dimensions or too long a name to encode")]
    Unencodable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar type stored in a container.
pub trait Element: Copy + Default {
    const WIDTH: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const WIDTH: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Element for f64 {
    const WIDTH: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Element> NamedTensor<T> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<T>) -> Self {
        let t = NamedTensor {
            name: name.into(),
            dims,
            data,
        };
        debug_assert_eq!(t.dims.iter().product::<usize>(), t.data.len());
        t
    }

    pub fn vector(name: impl Into<String>, data: Vec<T>) -> Self {
        let n = data.len();
        Self::new(name, vec![n], data)
    }

    pub fn scalar(name: impl Into<String>, value: T) -> Self {
        Self::new(name, vec![1], vec![value])
    }
}

pub fn encode<T: Element>(
    magic: &[u8; 4],
    tensors: &[NamedTensor<T>],
) -> Result<Vec<u8>, ContainerError> {
    let payload: usize = tensors.iter().map(|t| t.data.len() * T::WIDTH).sum();
    let mut out = Vec::with_capacity(12 + payload + tensors.len() * 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| ContainerError::Unencodable(t.name.clone()))?;
        let rank =
            u8::try_from(t.dims.len()).map_err(|_| ContainerError::Unencodable(t.name.clone()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| ContainerError::Unencodable(t.name.clone()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &t.data {
            v.put(&mut out);
        }
    }
    Ok(out)
}

pub fn write<T: Element>(
    writer: &mut impl Write,
    magic: &[u8; 4],
    tensors: &[NamedTensor<T>],
) -> Result<(), ContainerError> {
    writer.write_all(&encode(magic, tensors)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(ContainerError::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(ContainerError::Truncated(what));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes a whole container. Fails on any byte left over after the last tensor.
pub fn decode<T: Element>(
    bytes: &[u8],
    magic: &[u8; 4],
) -> Result<Vec<NamedTensor<T>>, ContainerError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let found = cur.take(4, "magic")?;
    if found != magic {
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(ContainerError::VersionUnsupported(version));
    }
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| ContainerError::InvalidName)?
            .to_owned();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dims")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(ContainerError::Truncated("values"))?;
        let raw = cur.take(
            n.checked_mul(T::WIDTH)
                .ok_or(ContainerError::Truncated("values"))?,
            "values",
        )?;
        let data = raw.chunks_exact(T::WIDTH).map(T::get).collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    if cur.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(tensors)
}
