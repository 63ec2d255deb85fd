//! Compact storage of a decomposed layer and its parameter accounting.
//!
//! The sparse part keeps only its nonzero columns, packed side by side with
//! their indices. The low-rank part is stored as `B = U·V`, or densely when a
//! factorization would not be smaller.

pub mod format;

pub use format::{deserialize, export_csr, from_bytes, serialize, to_bytes, Csr, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::admm::{Decomposition, HyperParams};
use crate::error::{Error, Result};
use crate::prox::{svd, SvdResult};
use crate::tensor::Matrix;

/// Column-structured sparse matrix: the nonzero columns packed densely.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSparse {
    pub rows: usize,
    pub cols: usize,
    /// Strictly increasing.
    pub nz_col_indices: Vec<usize>,
    /// `rows × nz_col_indices.len()`
    pub packed: Matrix,
}

impl ColumnSparse {
    pub fn empty(rows: usize, cols: usize) -> Self {
        ColumnSparse {
            rows,
            cols,
            nz_col_indices: Vec::new(),
            packed: Matrix::zeros(rows, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.packed.shape() != (self.rows, self.nz_col_indices.len()) {
            return Err(Error::shape("ColumnSparse", "packed block does not match indices"));
        }
        if self.nz_col_indices.windows(2).any(|w| w[0] >= w[1])
            || self.nz_col_indices.last().is_some_and(|&j| j >= self.cols)
        {
            return Err(Error::shape(
                "ColumnSparse",
                "indices must be strictly increasing and below the column count",
            ));
        }
        Ok(())
    }

    pub fn nnz_cols(&self) -> usize {
        self.nz_col_indices.len()
    }

    /// Stored values plus one index per kept column.
    pub fn param_count(&self) -> usize {
        self.rows * self.nnz_cols() + self.nnz_cols()
    }

    pub fn densify(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (k, &j) in self.nz_col_indices.iter().enumerate() {
            for r in 0..self.rows {
                out[(r, j)] = self.packed[(r, k)];
            }
        }
        out
    }
}

/// Drops every column whose Euclidean norm is at most `zero_tol`.
pub fn pack_sparse(a: &Matrix, zero_tol: f64) -> ColumnSparse {
    let nz: Vec<usize> = a
        .column_norms()
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n > zero_tol)
        .map(|(j, _)| j)
        .collect();
    ColumnSparse {
        rows: a.rows(),
        cols: a.cols(),
        packed: a.select_columns(&nz),
        nz_col_indices: nz,
    }
}

/// `B ≈ U·V` with `U` `n × r` and `V` `r × m`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors {
    pub u: Matrix,
    pub v: Matrix,
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn param_count(&self) -> usize {
        self.rank() * (self.u.rows() + self.v.cols())
    }

    pub fn product(&self) -> Matrix {
        self.u.matmul(&self.v)
    }

    /// Folds the singular values into the left factor.
    pub fn from_svd(f: &SvdResult) -> Self {
        let mut u = f.u.clone();
        for r in 0..u.rows() {
            for (k, s) in f.singular_values.iter().enumerate() {
                u[(r, k)] *= s;
            }
        }
        LowRankFactors { u, v: f.v.clone() }
    }
}

/// Truncated SVD keeping `σ_i > sv_tol·σ_1`.
pub fn factorize_lowrank(b: &Matrix, sv_tol: f64) -> Result<LowRankFactors> {
    let full = svd(b)?;
    let top = full.singular_values.first().copied().unwrap_or(0.0);
    let keep = if top > 0.0 {
        full.singular_values.iter().take_while(|&&s| s > sv_tol * top).count()
    } else {
        0
    };
    let idx: Vec<usize> = (0..keep).collect();
    Ok(LowRankFactors::from_svd(&SvdResult {
        u: full.u.select_columns(&idx),
        singular_values: full.singular_values[..keep].to_vec(),
        v: full.v.select_rows(&idx),
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub enum LowRankPart {
    None,
    Factors(LowRankFactors),
    /// Used whenever `r·(n + m) ≥ n·m`.
    Dense(Matrix),
}

impl LowRankPart {
    pub fn param_count(&self) -> usize {
        match self {
            LowRankPart::None => 0,
            LowRankPart::Factors(f) => f.param_count(),
            LowRankPart::Dense(d) => d.rows() * d.cols(),
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            LowRankPart::None => Some(0),
            LowRankPart::Factors(f) => Some(f.rank()),
            LowRankPart::Dense(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub original: usize,
    pub sparse: usize,
    pub lowrank: usize,
}

/// Provenance recorded with every compressed layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerMetadata {
    pub name: String,
    pub hyperparams: Option<HyperParams>,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub skipped: bool,
    pub seed: Option<u64>,
    pub version: String,
    /// Whatever run configuration produced the layer.
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedLayer {
    pub sparse: ColumnSparse,
    pub lowrank: LowRankPart,
    pub original_shape: (usize, usize),
    pub param_counts: ParamCounts,
    pub metadata: LayerMetadata,
}

/// Version string recorded in artifacts.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

impl CompressedLayer {
    /// Assembles a layer, storing the low-rank part densely if factoring it
    /// would not save parameters.
    pub fn new(sparse: ColumnSparse, lowrank: LowRankPart, metadata: LayerMetadata) -> Result<Self> {
        sparse.validate()?;
        let (n, m) = (sparse.rows, sparse.cols);
        let lowrank = match lowrank {
            LowRankPart::Factors(f) => {
                if f.u.rows() != n || f.v.cols() != m || f.u.cols() != f.v.rows() {
                    return Err(Error::shape("CompressedLayer", "factors do not match the layer"));
                }
                if f.rank() == 0 {
                    LowRankPart::None
                } else if f.param_count() >= n * m {
                    LowRankPart::Dense(f.product())
                } else {
                    LowRankPart::Factors(f)
                }
            }
            LowRankPart::Dense(d) => {
                if d.shape() != (n, m) {
                    return Err(Error::shape("CompressedLayer", "dense low-rank part has wrong shape"));
                }
                LowRankPart::Dense(d)
            }
            LowRankPart::None => LowRankPart::None,
        };
        let param_counts = ParamCounts {
            original: n * m,
            sparse: sparse.param_count(),
            lowrank: lowrank.param_count(),
        };
        Ok(CompressedLayer {
            sparse,
            lowrank,
            original_shape: (n, m),
            param_counts,
            metadata,
        })
    }

    /// An unapproximated layer: stored as is, counted at 100%.
    pub fn passthrough(name: &str, w: &Matrix) -> Self {
        let metadata = LayerMetadata {
            name: name.to_string(),
            skipped: true,
            version: version_string(),
            ..Default::default()
        };
        CompressedLayer::new(
            ColumnSparse::empty(w.rows(), w.cols()),
            LowRankPart::Dense(w.clone()),
            metadata,
        )
        .expect("shapes agree by construction")
    }

    /// Packs the result of a decomposition. The sparse part is `A` (the exact
    /// output of the column shrinkage) and the low-rank part reuses the factors
    /// of the last thresholding step.
    pub fn from_decomposition(
        name: &str,
        d: &Decomposition,
        hp: &HyperParams,
        zero_tol: f64,
        sv_tol: f64,
    ) -> Result<Self> {
        let sparse = pack_sparse(&d.a, zero_tol);
        let lowrank = match &d.state.last_svt {
            Some(f) => {
                let kept: Vec<usize> = (0..f.rank())
                    .filter(|&k| f.singular_values[k] > sv_tol * f.singular_values[0])
                    .collect();
                LowRankPart::Factors(LowRankFactors::from_svd(&SvdResult {
                    u: f.u.select_columns(&kept),
                    singular_values: kept.iter().map(|&k| f.singular_values[k]).collect(),
                    v: f.v.select_rows(&kept),
                }))
            }
            None if d.b.is_zero() => LowRankPart::None,
            None => LowRankPart::Factors(factorize_lowrank(&d.b, sv_tol)?),
        };
        let record = d.state.final_record();
        let metadata = LayerMetadata {
            name: name.to_string(),
            hyperparams: Some(hp.clone()),
            residual: record.map(|r| r.relative_residual),
            iterations: Some(d.state.iter),
            converged: Some(d.state.converged),
            skipped: false,
            seed: Some(hp.sgd.seed),
            version: version_string(),
            config: None,
        };
        CompressedLayer::new(sparse, lowrank, metadata)
    }

    pub fn densify(&self) -> Matrix {
        let mut out = self.sparse.densify();
        match &self.lowrank {
            LowRankPart::None => {}
            LowRankPart::Factors(f) => out.axpy(1.0, &f.product()),
            LowRankPart::Dense(d) => out.axpy(1.0, d),
        }
        out
    }
}

/// Compression rates in percent of the original parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionRate {
    pub cr_a: f64,
    pub cr_b: f64,
    pub cr_total: f64,
}

impl CompressionRate {
    pub fn from_counts(original: usize, sparse: usize, lowrank: usize) -> Self {
        let pct = |c: usize| 100.0 * c as f64 / original as f64;
        CompressionRate {
            cr_a: pct(sparse),
            cr_b: pct(lowrank),
            cr_total: pct(sparse + lowrank),
        }
    }

    /// How many times smaller the model became, `100 / cr_total`.
    pub fn reduction_factor(&self) -> f64 {
        100.0 / self.cr_total
    }

    /// e.g. `"22.5% (4.44× reduction of model size)"`
    pub fn describe(&self) -> String {
        format!(
            "{:.1}% ({:.2}× reduction of model size)",
            self.cr_total,
            self.reduction_factor()
        )
    }
}

pub fn compression_rate(layer: &CompressedLayer) -> CompressionRate {
    let c = layer.param_counts;
    CompressionRate::from_counts(c.original, c.sparse, c.lowrank)
}

/// Network-level rate: total stored parameters over total original parameters.
pub fn aggregate_rate(layers: &[CompressedLayer]) -> CompressionRate {
    let (o, s, l) = layers.iter().fold((0, 0, 0), |(o, s, l), layer| {
        let c = layer.param_counts;
        (o + c.original, s + c.sparse, l + c.lowrank)
    });
    CompressionRate::from_counts(o, s, l)
}
