//! NPY (version 1.0) array files, the interchange format with the model exporter.
//!
//! Floats are read as little-endian `f4` or `f8` and widened to `f64`; writes
//! always produce `<f8`. Only C-order arrays are accepted. `<i8` is supported
//! for the integer arrays of a CSR export.

use std::fs;
use std::path::Path;

use super::{Matrix, Tensor4};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I64 => "<i8",
        }
    }

    fn parse(descr: &str) -> Option<Self> {
        match descr {
            "<f4" => Some(Dtype::F32),
            "<f8" => Some(Dtype::F64),
            "<i8" => Some(Dtype::I64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }
}

/// Shape plus row-major `f64` payload, as read from an NPY file.
#[derive(Clone, Debug, PartialEq)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// What an array file may hold.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrayValue {
    Matrix(Matrix),
    Tensor4(Tensor4),
}

struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
    payload_offset: usize,
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::MalformedArray {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn mismatch(path: &Path, found: impl Into<String>, expected: impl Into<String>) -> Error {
    Error::ArrayMismatch {
        path: path.to_path_buf(),
        found: found.into(),
        expected: expected.into(),
    }
}

fn header_bytes(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape {
        [d] => format!("({d},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // magic(6) + version(2) + len(2) + dict + '\n' is padded to a multiple of 64
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(malformed(path, "missing NPY magic"));
    }
    let (len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(malformed(path, "truncated header length"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(malformed(path, format!("unsupported NPY version {v}"))),
    };
    let end = start + len;
    if bytes.len() < end {
        return Err(malformed(path, "truncated header"));
    }
    let dict = std::str::from_utf8(&bytes[start..end]).map_err(|_| malformed(path, "header is not UTF-8"))?;

    let descr = dict_value(dict, "descr").ok_or_else(|| malformed(path, "no 'descr' key"))?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"');
    let dtype = Dtype::parse(descr).ok_or_else(|| mismatch(path, format!("dtype {descr}"), "<f4, <f8 or <i8"))?;

    let fortran = dict_value(dict, "fortran_order").ok_or_else(|| malformed(path, "no 'fortran_order' key"))?;
    match fortran.trim() {
        "False" => {}
        "True" => return Err(mismatch(path, "Fortran order", "C order")),
        other => return Err(malformed(path, format!("bad fortran_order {other}"))),
    }

    let shape_str = dict_value(dict, "shape").ok_or_else(|| malformed(path, "no 'shape' key"))?;
    let inner = shape_str
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| malformed(path, format!("bad shape {shape_str}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| malformed(path, format!("bad shape {shape_str}")))?;

    Ok(Header {
        dtype,
        shape,
        payload_offset: end,
    })
}

/// Raw text of the value for `key` in a Python dict literal. Values here are
/// quoted strings, bare words, or a parenthesized tuple.
fn dict_value<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let pat_single = format!("'{key}'");
    let pat_double = format!("\"{key}\"");
    let pos = dict
        .find(&pat_single)
        .map(|p| p + pat_single.len())
        .or_else(|| dict.find(&pat_double).map(|p| p + pat_double.len()))?;
    let rest = dict[pos..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else if let Some(q) = rest.chars().next().filter(|c| *c == '\'' || *c == '"') {
        rest[1..].find(q)? + 2
    } else {
        rest.find([',', '}'])?
    };
    Some(&rest[..end])
}

fn payload<'a>(bytes: &'a [u8], header: &Header, path: &Path) -> Result<&'a [u8]> {
    let count: usize = header.shape.iter().product();
    let need = count * header.dtype.size();
    let body = &bytes[header.payload_offset..];
    if body.len() < need {
        return Err(malformed(
            path,
            format!("payload has {} bytes, shape needs {need}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(malformed(path, format!("{} trailing bytes", body.len() - need)));
    }
    Ok(body)
}

/// Decodes an in-memory NPY image holding floats.
pub fn decode_npy(bytes: &[u8], path: &Path) -> Result<NdArray> {
    let header = parse_header(bytes, path)?;
    let body = payload(bytes, &header, path)?;
    let data = match header.dtype {
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I64 => return Err(mismatch(path, "dtype <i8", "a float dtype")),
    };
    Ok(NdArray {
        shape: header.shape,
        data,
    })
}

pub fn encode_npy(shape: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut out = header_bytes(Dtype::F64, shape);
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Encodes `f32` data, matching what exporters commonly emit.
pub fn encode_npy_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = header_bytes(Dtype::F32, shape);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NdArray> {
    let path = path.as_ref();
    decode_npy(&read_bytes(path)?, path)
}

pub fn write_npy(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_npy(shape, data))
}

pub fn write_npy_i64(path: impl AsRef<Path>, data: &[i64]) -> Result<()> {
    let mut out = header_bytes(Dtype::I64, &[data.len()]);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)
}

/// Reads a 1-D `<i8` array.
pub fn read_npy_i64(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let header = parse_header(&bytes, path)?;
    if header.dtype != Dtype::I64 {
        return Err(mismatch(path, format!("dtype {}", header.dtype.descr()), "<i8"));
    }
    if header.shape.len() != 1 {
        return Err(mismatch(path, format!("shape {:?}", header.shape), "1-D"));
    }
    let body = payload(&bytes, &header, path)?;
    Ok(body
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Reads a 2-D array as a matrix, or a 4-D array as a filter bank.
pub fn read_array_file(path: impl AsRef<Path>) -> Result<ArrayValue> {
    let path = path.as_ref();
    let arr = read_npy(path)?;
    match arr.shape.as_slice() {
        &[r, c] => Ok(ArrayValue::Matrix(Matrix::new(r, c, arr.data)?)),
        &[n, c, kh, kw] => Ok(ArrayValue::Tensor4(Tensor4::new(n, c, kh, kw, arr.data)?)),
        other => Err(mismatch(path, format!("shape {other:?}"), "a 2-D or 4-D array")),
    }
}

pub fn write_array_file(path: impl AsRef<Path>, value: &ArrayValue) -> Result<()> {
    match value {
        ArrayValue::Matrix(m) => write_npy(path, &[m.rows(), m.cols()], m.as_slice()),
        ArrayValue::Tensor4(t) => write_npy(path, &[t.n, t.c, t.kh, t.kw], &t.data),
    }
}

/// Reads a matrix; a 4-D filter bank is accepted and lowered.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    match read_array_file(path)? {
        ArrayValue::Matrix(m) => Ok(m),
        ArrayValue::Tensor4(t) => Ok(super::lower_filter(&t)),
    }
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_npy(path, &[m.rows(), m.cols()], m.as_slice())
}
