//! Proximal operators of the two regularizers.
//!
//! `prox_l21` is block soft-thresholding of columns, the exact minimizer of
//! `θ‖A‖_{2,1} + ½‖A − C‖²_F`. `svt` soft-thresholds singular values, the exact
//! minimizer of `θ‖B‖_* + ½‖B − D‖²_F`.

mod svd;

pub use svd::{svd, SvdResult};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::param(
            "threshold",
            format!("must be positive and finite, got {threshold}"),
        ));
    }
    Ok(())
}

/// Column-wise shrinkage: each column `c` becomes `(1 − θ/‖c‖)·c` when
/// `‖c‖ > θ`, otherwise zero. A column exactly at the threshold is zeroed.
pub fn prox_l21(c: &Matrix, threshold: f64) -> Result<Matrix> {
    check_threshold(threshold)?;
    let norms = c.column_norms();
    let scales: Vec<f64> = norms
        .iter()
        .map(|&n| if n > threshold { (n - threshold) / n } else { 0.0 })
        .collect();
    let mut out = c.clone();
    for r in 0..out.rows() {
        for (j, s) in scales.iter().enumerate() {
            out[(r, j)] *= s;
        }
    }
    Ok(out)
}

/// Singular value thresholding. Returns the shrunk matrix together with its
/// factors, keeping only the directions whose shrunk value is positive.
pub fn svt(d: &Matrix, threshold: f64) -> Result<(Matrix, SvdResult)> {
    check_threshold(threshold)?;
    let full = svd(d)?;
    let keep = full.singular_values.iter().take_while(|&&s| s > threshold).count();
    let idx: Vec<usize> = (0..keep).collect();
    let factors = SvdResult {
        u: full.u.select_columns(&idx),
        singular_values: full.singular_values[..keep].iter().map(|s| s - threshold).collect(),
        v: full.v.select_rows(&idx),
    };
    let b = factors.reconstruct();
    Ok((b, factors))
}

/// `Σ_i ‖A_{:,i}‖_2`
pub fn l21_norm(a: &Matrix) -> f64 {
    a.column_norms().iter().sum()
}

/// Sum of singular values.
pub fn nuclear_norm(b: &Matrix) -> Result<f64> {
    if b.is_zero() {
        return Ok(0.0);
    }
    Ok(svd(b)?.singular_values.iter().sum())
}
