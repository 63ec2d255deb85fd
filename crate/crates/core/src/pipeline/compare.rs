use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::GridPoint;
use crate::admm::{decompose, response_error, HyperParams, LayerProblem, Sample};
use crate::compress::{compression_rate, CompressedLayer};
use crate::error::{Error, Result};
use crate::synthetic::rng;
use crate::tensor::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Fits the post-ReLU response.
    Nonlinear,
    /// Fits the pre-activation response `W X` with no nonlinearity.
    Linear,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nonlinear => "nonlinear",
            Variant::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub grid_index: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub variant: Variant,
    pub cr_total: f64,
    /// Post-ReLU response error, `Σ‖Y − r(ŴX)‖² / Σ‖Y‖²`.
    pub error: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Nonlinear and linear rows alternate, one pair per grid point.
    pub rows: Vec<ComparisonRow>,
    /// True when there were too few samples to hold any out and errors are
    /// measured on the training samples.
    pub evaluated_on_training: bool,
    pub train_samples: usize,
    pub heldout_samples: usize,
}

impl Comparison {
    /// The nonlinear row at `grid_index` and the linear row, from any grid
    /// point, whose rate is closest to it and within `tolerance` percentage
    /// points. Ties go to the linear row with the lower error.
    pub fn matched_pair(&self, grid_index: usize, tolerance: f64) -> Option<(&ComparisonRow, &ComparisonRow)> {
        let nl = self
            .rows
            .iter()
            .find(|r| r.variant == Variant::Nonlinear && r.grid_index == grid_index)?;
        let lin = self
            .rows
            .iter()
            .filter(|r| r.variant == Variant::Linear && (r.cr_total - nl.cr_total).abs() <= tolerance)
            .min_by(|a, b| {
                let da = (a.cr_total - nl.cr_total).abs();
                let db = (b.cr_total - nl.cr_total).abs();
                da.total_cmp(&db).then(a.error.total_cmp(&b.error))
            })?;
        Some((nl, lin))
    }

    pub fn to_csv(&self) -> String {
        let split = if self.evaluated_on_training {
            "training"
        } else {
            "held-out"
        };
        let mut out = String::from("grid_index,lambda1,lambda2,variant,cr_total,error,converged,evaluated_on\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{split}",
                r.grid_index,
                r.lambda1,
                r.lambda2,
                r.variant.as_str(),
                r.cr_total,
                r.error,
                r.converged
            )
            .expect("writing to a string");
        }
        out
    }
}

/// Seeded 80/20 split of the sample indices. The held-out part gets
/// `⌊N/5⌋` samples.
pub fn split_samples(samples: &[Sample], seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng(seed));
    let held = samples.len() / 5;
    let (test, train) = order.split_at(held);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| samples[i].clone()).collect::<Vec<_>>()
    };
    (pick(train), pick(test))
}

/// For each λ pair, fits the layer twice on the training split, once to its
/// post-ReLU response and once to its linear response, and measures both
/// results by post-ReLU error on the held-out split.
pub fn compare_nonlinear_linear(
    problem: &LayerProblem,
    grid: &[GridPoint],
    base: &HyperParams,
    seed: u64,
    zero_tol: f64,
    sv_tol: f64,
) -> Result<Comparison> {
    if grid.is_empty() {
        return Err(Error::param("grid", "needs at least one point"));
    }
    problem.validate()?;
    let (train, heldout) = split_samples(&problem.samples, seed);
    let evaluated_on_training = heldout.is_empty();
    let eval = if evaluated_on_training { &train } else { &heldout };

    let nonlinear = LayerProblem {
        w: problem.w.clone(),
        samples: train.clone(),
        activation: Activation::Relu,
    };
    let linear = nonlinear.linear_counterpart();

    let mut rows = Vec::with_capacity(2 * grid.len());
    for (i, g) in grid.iter().enumerate() {
        let hp = HyperParams {
            lambda1: g.lambda1,
            lambda2: g.lambda2,
            ..base.clone()
        };
        for (variant, p) in [(Variant::Nonlinear, &nonlinear), (Variant::Linear, &linear)] {
            let d = decompose(p, &hp)?;
            let layer = CompressedLayer::from_decomposition(variant.as_str(), &d, &hp, zero_tol, sv_tol)?;
            rows.push(ComparisonRow {
                grid_index: i,
                lambda1: g.lambda1,
                lambda2: g.lambda2,
                variant,
                cr_total: compression_rate(&layer).cr_total,
                error: response_error(&layer.densify(), eval, Activation::Relu),
                converged: d.state.converged,
            });
        }
    }
    Ok(Comparison {
        rows,
        evaluated_on_training,
        train_samples: train.len(),
        heldout_samples: heldout.len(),
    })
}
