//! Minimal reader/writer for the NumPy `.npy` format, version 1.0.
//!
//! Only little-endian C-order arrays of `<f4`, `<f8` and `<u2` are
//! supported. Latents are written as `<f4`, tokens as `<u2`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::fsutil::write_atomic;
use crate::tensor::{LatentTensor, Shape, TokenTensor};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("not an npy file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported npy version {0}.{1}; only 1.0 is supported")]
    UnsupportedVersion(u8, u8),
    #[error("big-endian dtype {0:?} is not supported")]
    BigEndian(String),
    #[error("unsupported dtype {0:?}; expected <f4, <f8 or <u2")]
    UnsupportedDescr(String),
    #[error("fortran_order arrays are not supported")]
    FortranOrder,
    #[error("shape {shape:?} needs {expected} elements but the payload holds {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("dtype {found} where {expected} was expected")]
    WrongDtype {
        found: &'static str,
        expected: &'static str,
    },
    #[error("malformed npy header: {0}")]
    MalformedHeader(String),
    #[error("truncated npy file")]
    Truncated,
}

impl NpyError {
    /// Stable numeric code for each failure kind.
    pub fn code(&self) -> u32 {
        match self {
            NpyError::BadMagic => 101,
            NpyError::UnsupportedVersion(..) => 102,
            NpyError::BigEndian(_) => 103,
            NpyError::UnsupportedDescr(_) => 104,
            NpyError::FortranOrder => 105,
            NpyError::ShapeMismatch { .. } => 106,
            NpyError::WrongDtype { .. } => 107,
            NpyError::MalformedHeader(_) => 108,
            NpyError::Truncated => 109,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    U2,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::U2 => "<u2",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
            Dtype::U2 => 2,
        }
    }

    fn parse(descr: &str) -> std::result::Result<Self, NpyError> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "<u2" => Ok(Dtype::U2),
            d if d.starts_with('>') => Err(NpyError::BigEndian(d.to_string())),
            d => Err(NpyError::UnsupportedDescr(d.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F4(Vec<f32>),
    F8(Vec<f64>),
    U2(Vec<u16>),
}

impl NpyData {
    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::F4(_) => Dtype::F4,
            NpyData::F8(_) => Dtype::F8,
            NpyData::U2(_) => Dtype::U2,
        }
    }

    fn len(&self) -> usize {
        match self {
            NpyData::F4(v) => v.len(),
            NpyData::F8(v) => v.len(),
            NpyData::U2(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> std::result::Result<Self, NpyError> {
        let expected = shape.iter().product();
        if data.len() != expected {
            return Err(NpyError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(NpyArray { shape, data })
    }
}

/// The full header (preamble plus padded dict) for an array.
pub fn header_bytes(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape {
        [one] => format!("({one},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // pad with spaces so preamble + dict + '\n' is a multiple of 64
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', padding));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

pub fn write_array<W: Write>(writer: &mut W, array: &NpyArray) -> io::Result<()> {
    writer.write_all(&header_bytes(array.data.dtype(), &array.shape))?;
    let mut buf = Vec::with_capacity(array.data.len() * array.data.dtype().size());
    match &array.data {
        NpyData::F4(v) => v
            .iter()
            .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        NpyData::F8(v) => v
            .iter()
            .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        NpyData::U2(v) => v
            .iter()
            .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    writer.write_all(&buf)
}

struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn parse_header(text: &str) -> std::result::Result<Header, NpyError> {
    let malformed = |m: &str| NpyError::MalformedHeader(m.to_string());
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| malformed("header is not a dict"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = parse_quoted(rest).ok_or_else(|| malformed("expected a quoted key"))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| malformed("expected ':' after key"))?
            .trim_start();
        let after = match key {
            "descr" => {
                let (v, after) = parse_quoted(after).ok_or_else(|| malformed("bad descr"))?;
                descr = Some(v.to_string());
                after
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else {
                    return Err(malformed("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let inner = after
                    .strip_prefix('(')
                    .ok_or_else(|| malformed("shape must be a tuple"))?;
                let close = inner.find(')').ok_or_else(|| malformed("unclosed shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| malformed("bad shape entry")))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(malformed(&format!("unexpected key {other:?}"))),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
    }

    let dtype = Dtype::parse(&descr.ok_or_else(|| malformed("missing descr"))?)?;
    if fortran.ok_or_else(|| malformed("missing fortran_order"))? {
        return Err(NpyError::FortranOrder);
    }
    let shape = shape.ok_or_else(|| malformed("missing shape"))?;
    Ok(Header { dtype, shape })
}

fn parse_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let body = &s[1..];
    let end = body.find(quote)?;
    Some((&body[..end], &body[end + 1..]))
}

pub fn read_array<R: Read>(reader: &mut R) -> Result<NpyArray> {
    let mut preamble = [0u8; PREAMBLE_LEN];
    read_exact(reader, &mut preamble)?;
    if &preamble[..6] != MAGIC {
        return Err(NpyError::BadMagic.into());
    }
    let (major, minor) = (preamble[6], preamble[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::UnsupportedVersion(major, minor).into());
    }
    let header_len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
    let mut header = vec![0u8; header_len];
    read_exact(reader, &mut header)?;
    let text = std::str::from_utf8(&header)
        .map_err(|_| NpyError::MalformedHeader("header is not ASCII".into()))?;
    let Header { dtype, shape } = parse_header(text)?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected: usize = shape.iter().product();
    if payload.len() != expected * dtype.size() {
        return Err(NpyError::ShapeMismatch {
            shape,
            expected,
            actual: payload.len() / dtype.size(),
        }
        .into());
    }
    let data = match dtype {
        Dtype::F4 => NpyData::F4(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F8 => NpyData::F8(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        Dtype::U2 => NpyData::U2(
            payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(NpyArray::new(shape, data)?)
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<()> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NpyError::Truncated.into(),
        _ => e.into(),
    })
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let bytes = fs::read(path)?;
    read_array(&mut bytes.as_slice())
}

pub fn write_npy(array: &NpyArray, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |w| write_array(w, array))
}

pub fn write_latents(t: &LatentTensor, path: impl AsRef<Path>) -> Result<()> {
    let array = NpyArray::new(t.shape().dims().to_vec(), NpyData::F4(t.data().to_vec()))?;
    write_npy(&array, path)
}

pub fn write_tokens(t: &TokenTensor, path: impl AsRef<Path>) -> Result<()> {
    let array = NpyArray::new(t.shape().dims().to_vec(), NpyData::U2(t.data().to_vec()))?;
    write_npy(&array, path)
}

/// Reads a 4-d `<f4` or `<f8` array; `<f8` is narrowed to `f32`.
pub fn read_latents(path: impl AsRef<Path>) -> Result<LatentTensor> {
    let array = read_npy(path)?;
    let shape = Shape::from_dims(&array.shape)?;
    let data = match array.data {
        NpyData::F4(v) => v,
        NpyData::F8(v) => v.into_iter().map(|x| x as f32).collect(),
        NpyData::U2(_) => {
            return Err(NpyError::WrongDtype {
                found: "<u2",
                expected: "<f4 or <f8",
            }
            .into())
        }
    };
    LatentTensor::new(shape, data)
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<TokenTensor> {
    let array = read_npy(path)?;
    let shape = Shape::from_dims(&array.shape)?;
    match array.data {
        NpyData::U2(v) => TokenTensor::new(shape, v),
        other => Err(NpyError::WrongDtype {
            found: other.dtype().descr(),
            expected: "<u2",
        }
        .into()),
    }
}
