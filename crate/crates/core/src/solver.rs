//! Inexact minimization of the auxiliary-variable subproblem
//!
//! ```text
//! min_M  Σ_i ‖Y_i − r(M X_i)‖²_F + ⟨Λ, T − M⟩ + (t/2)‖T − M‖²_F ,   T = Â + B̂
//! ```
//!
//! by minibatch SGD with heavy-ball momentum, keeping the best iterate seen.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::Sample;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Activation, Matrix, Op};

/// Largest minibatch used when `batch_size` is not set.
pub const DEFAULT_MAX_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Passes over the samples per call.
    pub epochs: usize,
    /// `None` means `min(N, 32)`.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 5,
            batch_size: None,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    fn batch_for(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(n.min(DEFAULT_MAX_BATCH)).clamp(1, n.max(1))
    }
}

/// The M-subproblem at fixed `(Â, B̂, Λ, t)`.
#[derive(Clone, Copy, Debug)]
pub struct MSubproblem<'a> {
    pub samples: &'a [Sample],
    pub activation: Activation,
    /// `Â + B̂`
    pub target: &'a Matrix,
    pub lambda: &'a Matrix,
    pub t: f64,
}

impl<'a> MSubproblem<'a> {
    pub fn data_term(&self, m: &Matrix) -> f64 {
        data_term(self.samples, m, self.activation)
    }

    pub fn objective(&self, m: &Matrix) -> f64 {
        let gap = self.target.sub(m);
        self.data_term(m) + self.lambda.dot(&gap) + 0.5 * self.t * gap.frobenius_sq()
    }

    /// Full subgradient at `m`.
    pub fn gradient(&self, m: &Matrix) -> Matrix {
        let idx: Vec<usize> = (0..self.samples.len()).collect();
        self.batch_gradient(m, &idx, 1.0)
    }

    /// `weight · ∇data(batch) − Λ + t(M − T)`
    fn batch_gradient(&self, m: &Matrix, batch: &[usize], weight: f64) -> Matrix {
        let mut g = m.sub(self.target);
        g.map_inplace(|v| v * self.t);
        g.axpy(-1.0, self.lambda);
        for &i in batch {
            accumulate_data_gradient(&mut g, m, &self.samples[i], self.activation, weight);
        }
        g
    }

    /// The exact minimizer when there is no data term.
    pub fn quadratic_optimum(&self) -> Matrix {
        let mut m = self.target.clone();
        m.axpy(1.0 / self.t, self.lambda);
        m
    }
}

/// `Σ_i ‖Y_i − r(M X_i)‖²_F`
pub fn data_term(samples: &[Sample], m: &Matrix, activation: Activation) -> f64 {
    samples
        .iter()
        .map(|s| {
            let mut z = m.matmul(&s.x);
            activation.apply_inplace(&mut z);
            z.sub(&s.y).frobenius_sq()
        })
        .sum()
}

/// `g += 2·w·[r'(MX) ⊙ (r(MX) − Y)]·Xᵀ`
fn accumulate_data_gradient(g: &mut Matrix, m: &Matrix, s: &Sample, act: Activation, w: f64) {
    let mut resid = m.matmul(&s.x);
    for (z, &y) in resid.as_mut_slice().iter_mut().zip(s.y.as_slice()) {
        let slope = act.slope(*z);
        let out = match act {
            Activation::Relu => z.max(0.0),
            Activation::Identity => *z,
        };
        *z = slope * (out - y);
    }
    gemm(2.0 * w, &resid, Op::N, &s.x, Op::T, 1.0, g);
}

/// Subgradient of the M-subproblem objective, taking slope 0 at the ReLU kink:
/// `2·Σ_i [1{MX_i > 0} ⊙ (r(MX_i) − Y_i)]·X_iᵀ − Λ + t(M − Â − B̂)`.
pub fn subgradient_m(
    samples: &[Sample],
    activation: Activation,
    m: &Matrix,
    a_hat: &Matrix,
    b_hat: &Matrix,
    lambda: &Matrix,
    t: f64,
) -> Matrix {
    let target = a_hat.add(b_hat);
    MSubproblem {
        samples,
        activation,
        target: &target,
        lambda,
        t,
    }
    .gradient(m)
}

/// Runs `cfg.epochs` passes of momentum SGD from `warm_start` and returns the
/// best iterate by full objective. With no samples the closed-form optimum
/// `Â + B̂ + Λ/t` is returned directly.
pub fn solve_m(problem: &MSubproblem<'_>, warm_start: &Matrix, cfg: &SgdConfig) -> Result<Matrix> {
    cfg.validate()?;
    if !(problem.t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    if problem.target.shape() != warm_start.shape() || problem.lambda.shape() != warm_start.shape() {
        return Err(Error::shape("solve_m", "M, Â + B̂ and Λ must share a shape"));
    }
    let n = problem.samples.len();
    if n == 0 {
        return Ok(problem.quadratic_optimum());
    }
    for s in problem.samples {
        if s.x.rows() != warm_start.cols() || s.y.rows() != warm_start.rows() || s.x.cols() != s.y.cols() {
            return Err(Error::shape(
                "solve_m",
                format!(
                    "sample X {:?} / Y {:?} incompatible with M {:?}",
                    s.x.shape(),
                    s.y.shape(),
                    warm_start.shape()
                ),
            ));
        }
    }

    let batch = cfg.batch_for(n);
    let initial = problem.objective(warm_start);
    let mut best = warm_start.clone();
    let mut best_obj = initial;
    let mut trace = vec![initial];
    let mut bad_epochs = 0;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut m = warm_start.clone();
    let mut velocity = Matrix::zeros(m.rows(), m.cols());

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            // a short final chunk is rescaled to stay an unbiased estimate
            let g = problem.batch_gradient(&m, chunk, n as f64 / chunk.len() as f64);
            velocity.map_inplace(|v| v * cfg.momentum);
            velocity.axpy(-cfg.learning_rate, &g);
            m.axpy(1.0, &velocity);
        }
        let obj = problem.objective(&m);
        trace.push(obj);
        if !obj.is_finite() || obj > 10.0 * initial.abs().max(f64::MIN_POSITIVE) {
            bad_epochs += 1;
            if bad_epochs >= 3 {
                return Err(Error::Divergence { epoch, trace });
            }
        } else {
            bad_epochs = 0;
        }
        if obj < best_obj {
            best_obj = obj;
            best.as_mut_slice().copy_from_slice(m.as_slice());
        }
    }
    Ok(best)
}
