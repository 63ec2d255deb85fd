//! Seeded synthetic instances with a planted column-sparse plus low-rank layer.
//!
//! These stand in for exported network layers in tests, the CLI demo
//! generators and the browser demo.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::admm::{LayerProblem, Sample};
use crate::tensor::{Activation, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSpec {
    pub rows: usize,
    pub cols: usize,
    pub sparse_columns: usize,
    pub rank: usize,
    /// Column norm of each planted sparse column.
    pub sparse_column_norm: f64,
    /// Largest singular value of the planted low-rank part.
    pub lowrank_scale: f64,
    pub samples: usize,
    pub columns_per_sample: usize,
    pub input_scale: f64,
    /// Standard deviation of a dense Gaussian perturbation added to `W`, which
    /// makes it only approximately sparse plus low-rank.
    pub noise: f64,
    /// Draw inputs as `|N(0, s²)|`, as a layer behind a ReLU sees them.
    pub nonnegative_inputs: bool,
    pub activation: Activation,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            rows: 16,
            cols: 32,
            sparse_columns: 8,
            rank: 2,
            sparse_column_norm: 3.0,
            lowrank_scale: 3.0,
            samples: 8,
            columns_per_sample: 16,
            input_scale: 1.0,
            noise: 0.0,
            nonnegative_inputs: false,
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedLayer {
    pub a: Matrix,
    pub b: Matrix,
    /// Sorted nonzero column indices of `a`.
    pub support: Vec<usize>,
    pub problem: LayerProblem,
}

impl PlantedSpec {
    pub fn generate(&self, seed: u64) -> PlantedLayer {
        let mut rng = rng(seed);
        let (n, m) = (self.rows, self.cols);

        let mut support: Vec<usize> = sample_indices(&mut rng, m, self.sparse_columns.min(m)).into_vec();
        support.sort_unstable();
        let mut a = Matrix::zeros(n, m);
        for &j in &support {
            let col = gaussian(&mut rng, n, 1, 1.0);
            let scale = self.sparse_column_norm / col.frobenius();
            a.set_column(j, &col.scale(scale).into_vec());
        }

        let b = if self.rank == 0 {
            Matrix::zeros(n, m)
        } else {
            flat_leverage_lowrank(&mut rng, n, m, self.rank, self.lowrank_scale)
        };

        let mut w = a.add(&b);
        if self.noise > 0.0 {
            w.axpy(1.0, &gaussian(&mut rng, n, m, self.noise));
        }
        let mut samples = sample_pairs(
            &mut rng,
            &w,
            self.samples,
            self.columns_per_sample,
            self.input_scale,
            self.activation,
        );
        if self.nonnegative_inputs {
            for s in &mut samples {
                s.x.map_inplace(f64::abs);
                s.y = self.activation.apply(&w.matmul(&s.x));
            }
        }
        PlantedLayer {
            a,
            b,
            support,
            problem: LayerProblem {
                w,
                samples,
                activation: self.activation,
            },
        }
    }
}

/// Rank-`r` matrix with singular values `scale·(1, 0.8, 0.8², ..)` whose right
/// singular vectors have equal-norm rows (every column carries the same share
/// of the low-rank energy), so no single column looks like an outlier.
pub fn flat_leverage_lowrank(rng: &mut impl Rng, n: usize, m: usize, rank: usize, scale: f64) -> Matrix {
    let rank = rank.min(n).min(m);
    let left = orthonormal_columns(rng, n, rank);
    // rows of a random orthonormal m×r frame, rebalanced to equal norms by a
    // few alternating normalize/orthonormalize passes
    let mut right = orthonormal_columns(rng, m, rank);
    let target = (rank as f64 / m as f64).sqrt();
    for _ in 0..200 {
        for i in 0..m {
            let norm = right.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for k in 0..rank {
                    right[(i, k)] *= target / norm;
                }
            }
        }
        right = orthonormalize(&right);
    }
    let mut out = Matrix::zeros(n, m);
    let mut sigma = scale;
    for k in 0..rank {
        for i in 0..n {
            for j in 0..m {
                out[(i, j)] += sigma * left[(i, k)] * right[(j, k)];
            }
        }
        sigma *= 0.8;
    }
    out
}

fn orthonormal_columns(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    orthonormalize(&gaussian(rng, rows, cols, 1.0))
}

/// Modified Gram-Schmidt on the columns.
fn orthonormalize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for k in 0..m.cols() {
        for prev in 0..k {
            let dot: f64 = (0..m.rows()).map(|i| out[(i, k)] * out[(i, prev)]).sum();
            for i in 0..m.rows() {
                out[(i, k)] -= dot * out[(i, prev)];
            }
        }
        let norm = out.column_norm(k);
        for i in 0..m.rows() {
            out[(i, k)] /= norm;
        }
    }
    out
}

/// Gaussian inputs with responses `r(W X)`.
pub fn sample_pairs(
    rng: &mut impl Rng,
    w: &Matrix,
    count: usize,
    columns: usize,
    scale: f64,
    activation: Activation,
) -> Vec<Sample> {
    (0..count)
        .map(|_| {
            let x = gaussian(rng, w.cols(), columns, scale);
            let y = activation.apply(&w.matmul(&x));
            Sample { x, y }
        })
        .collect()
}

/// A stack of fully-connected ReLU layers, each weight matrix a planted
/// sparse plus low-rank matrix with a dense perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackSpec {
    /// Input width followed by each layer's output width.
    pub widths: Vec<usize>,
    /// Raw input columns drawn for fitting.
    pub inputs: usize,
    pub sparse_fraction: f64,
    pub rank: usize,
    pub noise: f64,
}

impl Default for StackSpec {
    fn default() -> Self {
        StackSpec {
            widths: vec![32, 32, 24, 16],
            inputs: 128,
            sparse_fraction: 0.25,
            rank: 2,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedStack {
    pub weights: Vec<Matrix>,
    /// `widths[0] × inputs` raw inputs.
    pub inputs: Matrix,
}

impl StackSpec {
    /// Layer `k` is scaled by `1/√fan_in` so activations stay of order one
    /// through depth.
    pub fn generate(&self, seed: u64) -> PlantedStack {
        let mut rng = rng(seed);
        let weights = self
            .widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let spec = PlantedSpec {
                    rows: fan_out,
                    cols: fan_in,
                    sparse_columns: ((fan_in as f64 * self.sparse_fraction).round() as usize).min(fan_in),
                    rank: self.rank,
                    samples: 0,
                    noise: self.noise,
                    ..Default::default()
                };
                let layer = spec.generate(rng.random());
                layer.problem.w.scale(2.0 / (fan_in as f64).sqrt())
            })
            .collect();
        let inputs = gaussian(&mut rng, self.widths[0], self.inputs, 1.0);
        PlantedStack { weights, inputs }
    }
}
