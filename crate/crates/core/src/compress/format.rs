//! Binary container for a [`CompressedLayer`], little-endian throughout:
//!
//! ```text
//! "SLRL"  u16 version
//! u32 rows  u32 cols
//! u32 nnz   u32 × nnz   column indices
//!           f64 × rows·nnz   packed columns, row-major
//! u8 low-rank tag: 0 none | 1 factors | 2 dense
//!   factors: u32 rank, f64 × rows·rank (U), f64 × rank·cols (V)
//!   dense:   f64 × rows·cols
//! u32 metadata length, UTF-8 JSON metadata
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! CSR export writes the dense sparse part as three NPY arrays.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ColumnSparse, CompressedLayer, LayerMetadata, LowRankFactors, LowRankPart};
use crate::error::{Error, Result};
use crate::tensor::{npy, Matrix};

pub const FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"SLRL";

pub fn to_bytes(layer: &CompressedLayer) -> Result<Vec<u8>> {
    let (n, m) = layer.original_shape;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, n)?;
    put_u32(&mut out, m)?;
    put_u32(&mut out, layer.sparse.nnz_cols())?;
    for &j in &layer.sparse.nz_col_indices {
        put_u32(&mut out, j)?;
    }
    put_f64s(&mut out, layer.sparse.packed.as_slice());
    match &layer.lowrank {
        LowRankPart::None => out.push(0),
        LowRankPart::Factors(f) => {
            out.push(1);
            put_u32(&mut out, f.rank())?;
            put_f64s(&mut out, f.u.as_slice());
            put_f64s(&mut out, f.v.as_slice());
        }
        LowRankPart::Dense(d) => {
            out.push(2);
            put_f64s(&mut out, d.as_slice());
        }
    }
    let meta =
        serde_json::to_vec(&layer.metadata).map_err(|e| Error::Corrupt(format!("metadata does not serialize: {e}")))?;
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(&meta);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<CompressedLayer> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("missing SLRL magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Corrupt("truncated container".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }

    let mut r = Reader { buf: body, pos: 6 };
    let n = r.u32()?;
    let m = r.u32()?;
    let nnz = r.u32()?;
    let indices = (0..nnz).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let packed = r.matrix(n, nnz)?;
    let lowrank = match r.u8()? {
        0 => LowRankPart::None,
        1 => {
            let rank = r.u32()?;
            let u = r.matrix(n, rank)?;
            let v = r.matrix(rank, m)?;
            LowRankPart::Factors(LowRankFactors { u, v })
        }
        2 => LowRankPart::Dense(r.matrix(n, m)?),
        tag => return Err(Error::Corrupt(format!("unknown low-rank tag {tag}"))),
    };
    let meta_len = r.u32()?;
    let meta: LayerMetadata =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;
    if r.pos != body.len() {
        return Err(Error::Corrupt(format!("{} unread bytes", body.len() - r.pos)));
    }

    let sparse = ColumnSparse {
        rows: n,
        cols: m,
        nz_col_indices: indices,
        packed,
    };
    sparse
        .validate()
        .map_err(|e| Error::Corrupt(format!("sparse part: {e}")))?;
    let layer = CompressedLayer::new(sparse, lowrank, meta)?;
    Ok(layer)
}

pub fn serialize(layer: &CompressedLayer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(layer)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn deserialize(path: impl AsRef<Path>) -> Result<CompressedLayer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_bytes(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::param("layer", format!("dimension {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    out.reserve(vals.len() * 8);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt("truncated container".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let len = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Corrupt("dimension overflow".into()))?;
        let data = self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::new(rows, cols, data)
    }
}

/// Standard CSR triple of the densified sparse part (row-wise nonzeros).
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<i64>,
    pub indices: Vec<i64>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn from_sparse(s: &ColumnSparse) -> Self {
        let mut indptr = Vec::with_capacity(s.rows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for r in 0..s.rows {
            for (k, &j) in s.nz_col_indices.iter().enumerate() {
                let v = s.packed[(r, k)];
                if v != 0.0 {
                    indices.push(j as i64);
                    data.push(v);
                }
            }
            indptr.push(indices.len() as i64);
        }
        Csr {
            rows: s.rows,
            cols: s.cols,
            indptr,
            indices,
            data,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.indptr[r] as usize..self.indptr[r + 1] as usize {
                out[(r, self.indices[k] as usize)] = self.data[k];
            }
        }
        out
    }
}

/// Writes `<stem>.indptr.npy`, `<stem>.indices.npy` and `<stem>.data.npy`
/// into `dir`, returning the three paths.
pub fn export_csr(layer: &CompressedLayer, dir: impl AsRef<Path>, stem: &str) -> Result<[PathBuf; 3]> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let csr = Csr::from_sparse(&layer.sparse);
    let paths = [
        dir.join(format!("{stem}.indptr.npy")),
        dir.join(format!("{stem}.indices.npy")),
        dir.join(format!("{stem}.data.npy")),
    ];
    npy::write_npy_i64(&paths[0], &csr.indptr)?;
    npy::write_npy_i64(&paths[1], &csr.indices)?;
    npy::write_npy(&paths[2], &[csr.data.len()], &csr.data)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::pack_sparse;

    fn sample_layer() -> CompressedLayer {
        let a = Matrix::from_fn(4, 6, |i, j| if j % 3 == 1 { (i * 6 + j) as f64 * 0.5 } else { 0.0 });
        let f = LowRankFactors {
            u: Matrix::from_fn(4, 1, |i, _| i as f64 - 1.5),
            v: Matrix::from_fn(1, 6, |_, j| (j as f64).cos()),
        };
        let meta = LayerMetadata {
            name: "conv2".into(),
            residual: Some(3e-4),
            version: "v0.1.0".into(),
            ..Default::default()
        };
        CompressedLayer::new(pack_sparse(&a, 0.0), LowRankPart::Factors(f), meta).unwrap()
    }

    #[test]
    fn round_trip() {
        let layer = sample_layer();
        assert_eq!(from_bytes(&to_bytes(&layer).unwrap()).unwrap(), layer);
    }

    #[test]
    fn flipped_checksum_is_corruption() {
        let mut bytes = to_bytes(&sample_layer()).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x5a;
        assert!(matches!(from_bytes(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn flipped_payload_is_corruption() {
        let mut bytes = to_bytes(&sample_layer()).unwrap();
        bytes[40] ^= 1;
        assert!(matches!(from_bytes(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn other_version_names_both() {
        let mut bytes = to_bytes(&sample_layer()).unwrap();
        bytes[4..6].copy_from_slice(&0u16.to_le_bytes());
        let err = from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 0, expected: 1 }));
        let msg = err.to_string();
        assert!(msg.contains("version 0") && msg.contains("version 1"), "{msg}");
    }

    #[test]
    fn csr_matches_dense() {
        let layer = sample_layer();
        let csr = Csr::from_sparse(&layer.sparse);
        assert_eq!(csr.to_dense(), layer.sparse.densify());
        assert_eq!(csr.indptr.len(), 5);
        assert_eq!(*csr.indptr.last().unwrap() as usize, csr.data.len());
    }
}
