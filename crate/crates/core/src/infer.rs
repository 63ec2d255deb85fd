//! Forward passes through dense and compressed layers, and timing of both.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compress::{CompressedLayer, LowRankPart};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Activation, Matrix, Op};

/// Relative divergence tolerated between the compressed path and the dense
/// product of its densified weights.
pub const CORRECTNESS_BOUND: f64 = 1e-6;

pub fn forward_dense(w: &Matrix, x: &Matrix, activation: Activation) -> Result<Matrix> {
    let mut z = w.try_matmul(x)?;
    activation.apply_inplace(&mut z);
    Ok(z)
}

/// `r(A·X + U·(V·X))`. The sparse product touches only the rows of `X` that
/// meet a stored column of `A`.
pub fn forward_compressed(layer: &CompressedLayer, x: &Matrix, activation: Activation) -> Result<Matrix> {
    let (n, m) = layer.original_shape;
    if x.rows() != m {
        return Err(Error::shape(
            "forward_compressed",
            format!("layer expects {m} input rows, got {}", x.rows()),
        ));
    }
    let mut z = Matrix::zeros(n, x.cols());
    let nz = &layer.sparse.nz_col_indices;
    if !nz.is_empty() {
        let xs = x.select_rows(nz);
        gemm(1.0, &layer.sparse.packed, Op::N, &xs, Op::N, 0.0, &mut z);
        op_counter::add(nz.len() * n * x.cols());
    }
    match &layer.lowrank {
        LowRankPart::None => {}
        LowRankPart::Factors(f) => {
            let vx = f.v.matmul(x);
            gemm(1.0, &f.u, Op::N, &vx, Op::N, 1.0, &mut z);
        }
        LowRankPart::Dense(d) => gemm(1.0, d, Op::N, x, Op::N, 1.0, &mut z),
    }
    activation.apply_inplace(&mut z);
    Ok(z)
}

/// Multiply-add counter for the sparse path, live only with debug assertions.
pub mod op_counter {
    #[cfg(debug_assertions)]
    thread_local! {
        static SPARSE_MADDS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
    }

    #[inline]
    pub(crate) fn add(_n: usize) {
        #[cfg(debug_assertions)]
        SPARSE_MADDS.with(|c| c.set(c.get() + _n));
    }

    /// Multiply-adds issued by sparse products on this thread so far.
    pub fn sparse_madds() -> Option<usize> {
        #[cfg(debug_assertions)]
        {
            Some(SPARSE_MADDS.with(|c| c.get()))
        }
        #[cfg(not(debug_assertions))]
        {
            None
        }
    }

    pub fn reset() {
        #[cfg(debug_assertions)]
        SPARSE_MADDS.with(|c| c.set(0));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub layer: String,
    /// Median seconds per dense forward pass.
    pub dense_seconds: f64,
    /// Median seconds per compressed forward pass.
    pub decomposed_seconds: f64,
    pub speedup: f64,
    /// Compressed output vs the dense product of the densified weights, relative.
    pub max_divergence: f64,
    /// Compressed output vs the original weights' output, relative Frobenius.
    pub approximation_error: f64,
    pub rows: usize,
    pub cols: usize,
    pub input_columns: usize,
    pub nnz_cols: usize,
    pub rank: Option<usize>,
    pub repetitions: usize,
    pub parallel: bool,
}

impl BenchReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

fn time_reps(reps: usize, mut f: impl FnMut() -> Result<Matrix>) -> Result<Vec<f64>> {
    // one discarded warm-up
    std::hint::black_box(f()?);
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        std::hint::black_box(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(times)
}

/// Times `r(W·X)` against the compressed layer on the same input.
///
/// Before any timing the compressed path is checked against the dense product
/// of the layer's own densified weights; a divergence above
/// [`CORRECTNESS_BOUND`] is an error and no timings are reported.
pub fn benchmark(layer: &CompressedLayer, w: &Matrix, x: &Matrix, repetitions: usize) -> Result<BenchReport> {
    if repetitions < 5 {
        return Err(Error::param("repetitions", "at least 5 are required"));
    }
    if w.shape() != layer.original_shape {
        return Err(Error::shape("benchmark", "W does not match the compressed layer"));
    }
    let act = Activation::Relu;
    let reference = forward_dense(&layer.densify(), x, act)?;
    let compressed = forward_compressed(layer, x, act)?;
    let max_divergence = compressed.max_abs_diff(&reference) / reference.max_abs().max(f64::MIN_POSITIVE);
    if max_divergence > CORRECTNESS_BOUND {
        return Err(Error::Correctness {
            divergence: max_divergence,
            bound: CORRECTNESS_BOUND,
        });
    }
    let original = forward_dense(w, x, act)?;
    let approximation_error = compressed.rel_error(&original);

    let dense_seconds = median(time_reps(repetitions, || forward_dense(w, x, act))?);
    let decomposed_seconds = median(time_reps(repetitions, || forward_compressed(layer, x, act))?);
    Ok(BenchReport {
        layer: layer.metadata.name.clone(),
        dense_seconds,
        decomposed_seconds,
        speedup: dense_seconds / decomposed_seconds,
        max_divergence,
        approximation_error,
        rows: w.rows(),
        cols: w.cols(),
        input_columns: x.cols(),
        nnz_cols: layer.sparse.nnz_cols(),
        rank: layer.lowrank.rank(),
        repetitions,
        parallel: false,
    })
}
