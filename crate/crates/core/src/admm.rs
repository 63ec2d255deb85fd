//! Three-block ADMM with a correction step for the sparse plus low-rank
//! decomposition of one layer.
//!
//! The layer weights `W` are approximated by `A + B` where `A` is
//! column-sparse and `B` low-rank, by minimizing
//!
//! ```text
//! Σ_i ‖Y_i − r((A + B) X_i)‖²_F + λ1‖A‖_{2,1} + λ2‖B‖_*
//! ```
//!
//! through the split `A + B = M`. Each iteration takes the `A` and `B` blocks in
//! closed form, the `M` block by SGD, ascends the multiplier, and then
//! recombines `(B, M, Λ)` with the correction matrix
//!
//! ```text
//! ⎡ I  (τ−1)I  0 ⎤
//! ⎢ τI    I    0 ⎥
//! ⎣ 0     0    I ⎦
//! ```
//!
//! scaled by `α`. `A` is taken from its subproblem as is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{l21_norm, nuclear_norm, prox_l21, svt, SvdResult};
use crate::solver::{data_term, solve_m, MSubproblem, SgdConfig};
use crate::tensor::{Activation, Matrix};

/// One sampled `(X_i, Y_i)` pair: `X_i` is `m × p_i` lowered input, `Y_i` is the
/// `n × p_i` response the layer should reproduce.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Matrix,
    pub y: Matrix,
}

/// Which components the decomposition may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Both,
    SparseOnly,
    LowrankOnly,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Mode::Both),
            "sparse-only" => Ok(Mode::SparseOnly),
            "lowrank-only" => Ok(Mode::LowrankOnly),
            other => Err(Error::param("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Augmented Lagrangian penalty, held fixed.
    pub t: f64,
    pub tau: f64,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub sgd: SgdConfig,
    pub mode: Mode,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda1: 0.1,
            lambda2: 0.275,
            t: 1e-3,
            tau: 0.5,
            alpha: 0.75,
            tol: 1e-4,
            max_iter: 500,
            sgd: SgdConfig::default(),
            mode: Mode::Both,
        }
    }
}

impl HyperParams {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        HyperParams {
            lambda1,
            lambda2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("t", self.t),
            ("tol", self.tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be at least 1"));
        }
        if !self.tau.is_finite() || !self.alpha.is_finite() {
            return Err(Error::param("tau/alpha", "must be finite"));
        }
        self.sgd.validate()
    }

    /// `λ2/λ1 ∈ [2.5, 3]` and `λ1 ∈ [0.08, 0.3]`. Advisory only.
    pub fn in_recommended_regime(&self) -> bool {
        let ratio = self.lambda2 / self.lambda1;
        (2.5..=3.0).contains(&ratio) && (0.08..=0.3).contains(&self.lambda1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerProblem {
    /// Lowered pretrained weights, `n × m`.
    pub w: Matrix,
    pub samples: Vec<Sample>,
    pub activation: Activation,
}

impl LayerProblem {
    pub fn new(w: Matrix, samples: Vec<Sample>, activation: Activation) -> Result<Self> {
        let p = LayerProblem { w, samples, activation };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.w.shape();
        if n == 0 || m == 0 {
            return Err(Error::shape("LayerProblem", "weight matrix is empty"));
        }
        if !self.w.is_finite() {
            return Err(Error::param("w", "contains non-finite values"));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.rows() != m || s.y.rows() != n || s.x.cols() != s.y.cols() {
                return Err(Error::shape(
                    "LayerProblem",
                    format!(
                        "sample {i}: X {:?}, Y {:?} do not fit W {:?}",
                        s.x.shape(),
                        s.y.shape(),
                        self.w.shape()
                    ),
                ));
            }
            if !s.x.is_finite() || !s.y.is_finite() {
                return Err(Error::param("samples", format!("sample {i} has non-finite values")));
            }
        }
        Ok(())
    }

    /// Same inputs, responses replaced by the linear response `W X_i`, solved
    /// without the nonlinearity.
    pub fn linear_counterpart(&self) -> LayerProblem {
        LayerProblem {
            w: self.w.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    x: s.x.clone(),
                    y: self.w.matmul(&s.x),
                })
                .collect(),
            activation: Activation::Identity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub data_term: f64,
    pub l21_term: f64,
    pub nuclear_term: f64,
}

/// The relaxed objective at `(A, B)`.
pub fn objective(problem: &LayerProblem, a: &Matrix, b: &Matrix, lambda1: f64, lambda2: f64) -> Result<Objective> {
    if a.shape() != problem.w.shape() || b.shape() != problem.w.shape() {
        return Err(Error::shape("objective", "A and B must match W"));
    }
    let sum = a.add(b);
    let data = data_term(&problem.samples, &sum, problem.activation);
    let l21 = lambda1 * l21_norm(a);
    let nuclear = lambda2 * nuclear_norm(b)?;
    Ok(Objective {
        total: data + l21 + nuclear,
        data_term: data,
        l21_term: l21,
        nuclear_term: nuclear,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: Objective,
    /// `‖A + B − M‖_F`
    pub residual: f64,
    /// `‖A + B − M‖_F / max(1, ‖M‖_F)`
    pub relative_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub a: Matrix,
    pub b: Matrix,
    pub m: Matrix,
    pub lambda: Matrix,
    pub iter: usize,
    pub history: Vec<IterationRecord>,
    /// Factors of the last singular value thresholding step, i.e. of `B̂`.
    pub last_svt: Option<SvdResult>,
    pub converged: bool,
}

impl AdmmState {
    fn initial(w: &Matrix, mode: Mode) -> Self {
        let (n, m) = w.shape();
        AdmmState {
            a: Matrix::zeros(n, m),
            b: if mode == Mode::SparseOnly {
                Matrix::zeros(n, m)
            } else {
                w.clone()
            },
            m: w.clone(),
            lambda: Matrix::zeros(n, m),
            iter: 0,
            history: Vec::new(),
            last_svt: None,
            converged: false,
        }
    }

    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.history.last()
    }
}

/// The three corrected blocks `(B, M, Λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Blocks {
    pub b: Matrix,
    pub m: Matrix,
    pub lambda: Matrix,
}

/// `(B, M, Λ)_{k+1} = (B, M, Λ)_k − α·T·((B, M, Λ)_k − (B̂, M̂, Λ̂)_k)`
pub fn correction_step(hat: &Blocks, prev: &Blocks, tau: f64, alpha: f64) -> Result<Blocks> {
    let shape = prev.b.shape();
    for m in [&prev.m, &prev.lambda, &hat.b, &hat.m, &hat.lambda] {
        if m.shape() != shape {
            return Err(Error::shape("correction_step", "all blocks must share a shape"));
        }
    }
    let db = prev.b.sub(&hat.b);
    let dm = prev.m.sub(&hat.m);
    let dl = prev.lambda.sub(&hat.lambda);

    let mut b = prev.b.clone();
    b.axpy(-alpha, &db);
    b.axpy(-alpha * (tau - 1.0), &dm);

    let mut m = prev.m.clone();
    m.axpy(-alpha * tau, &db);
    m.axpy(-alpha, &dm);

    let mut lambda = prev.lambda.clone();
    lambda.axpy(-alpha, &dl);

    Ok(Blocks { b, m, lambda })
}

/// Output of [`decompose`].
#[derive(Clone, Debug)]
pub struct Decomposition {
    /// Column-sparse component (exact zeros outside its support).
    pub a: Matrix,
    /// Low-rank component after the final correction.
    pub b: Matrix,
    pub state: AdmmState,
}

const OBJECTIVE_WINDOW: usize = 5;

/// Runs the ADMM loop until the relative primal residual and the relative
/// objective change over the last five iterations (relative to
/// `max(1, |objective|)`) are both below `hp.tol`, or
/// `hp.max_iter` is reached.
///
/// Starts from `A = 0`, `B = M = W`, `Λ = 0`. In sparse-only mode `B` is held at
/// zero, in lowrank-only mode `A` is.
pub fn decompose(problem: &LayerProblem, hp: &HyperParams) -> Result<Decomposition> {
    problem.validate()?;
    hp.validate()?;
    let (n, m_cols) = problem.w.shape();
    let t = hp.t;
    let mut st = AdmmState::initial(&problem.w, hp.mode);

    for k in 0..hp.max_iter {
        let mut scaled_dual = st.lambda.clone();
        scaled_dual.map_inplace(|v| v / t);

        let a_hat = if hp.mode == Mode::LowrankOnly {
            Matrix::zeros(n, m_cols)
        } else {
            let c = st.m.sub(&st.b).sub(&scaled_dual);
            prox_l21(&c, hp.lambda1 / t)?
        };

        let (b_hat, factors) = if hp.mode == Mode::SparseOnly {
            (Matrix::zeros(n, m_cols), None)
        } else {
            let d = st.m.sub(&a_hat).sub(&scaled_dual);
            let (b_hat, f) = svt(&d, hp.lambda2 / t)?;
            (b_hat, Some(f))
        };

        let target = a_hat.add(&b_hat);
        let sub = MSubproblem {
            samples: &problem.samples,
            activation: problem.activation,
            target: &target,
            lambda: &st.lambda,
            t,
        };
        let sgd = SgdConfig {
            seed: iteration_seed(hp.sgd.seed, k),
            ..hp.sgd.clone()
        };
        let m_hat = solve_m(&sub, &st.m, &sgd)?;

        let mut lambda_hat = st.lambda.clone();
        lambda_hat.axpy(t, &target.sub(&m_hat));

        let corrected = correction_step(
            &Blocks {
                b: b_hat,
                m: m_hat,
                lambda: lambda_hat,
            },
            &Blocks {
                b: std::mem::replace(&mut st.b, Matrix::zeros(0, 0)),
                m: std::mem::replace(&mut st.m, Matrix::zeros(0, 0)),
                lambda: std::mem::replace(&mut st.lambda, Matrix::zeros(0, 0)),
            },
            hp.tau,
            hp.alpha,
        )?;

        st.a = a_hat;
        st.b = if hp.mode == Mode::SparseOnly {
            Matrix::zeros(n, m_cols)
        } else {
            corrected.b
        };
        st.m = corrected.m;
        st.lambda = corrected.lambda;
        st.last_svt = factors;
        st.iter = k + 1;

        if !(st.a.is_finite() && st.b.is_finite() && st.m.is_finite() && st.lambda.is_finite()) {
            return Err(Error::NonFinite {
                iteration: k,
                state: Box::new(st),
            });
        }

        let residual = st.a.add(&st.b).sub(&st.m).frobenius();
        let relative_residual = residual / st.m.frobenius().max(1.0);
        let obj = objective(problem, &st.a, &st.b, hp.lambda1, hp.lambda2)?;
        st.history.push(IterationRecord {
            objective: obj,
            residual,
            relative_residual,
        });

        if relative_residual <= hp.tol && objective_settled(&st.history, hp.tol) {
            st.converged = true;
            break;
        }
    }

    Ok(Decomposition {
        a: st.a.clone(),
        b: st.b.clone(),
        state: st,
    })
}

/// Fraction of response energy left unexplained by `w_hat`:
/// `Σ‖Y_i − r(Ŵ X_i)‖² / Σ‖Y_i‖²`. Zero-energy targets give the raw residual.
pub fn response_error(w_hat: &Matrix, samples: &[Sample], activation: Activation) -> f64 {
    let mut residual = 0.0;
    let mut energy = 0.0;
    for s in samples {
        let mut z = w_hat.matmul(&s.x);
        activation.apply_inplace(&mut z);
        residual += z.sub(&s.y).frobenius_sq();
        energy += s.y.frobenius_sq();
    }
    if energy > 0.0 {
        residual / energy
    } else {
        residual
    }
}

fn objective_settled(history: &[IterationRecord], tol: f64) -> bool {
    if history.len() <= OBJECTIVE_WINDOW {
        return false;
    }
    let now = history[history.len() - 1].objective.total;
    let then = history[history.len() - 1 - OBJECTIVE_WINDOW].objective.total;
    (now - then).abs() <= tol * now.abs().max(1.0)
}

fn iteration_seed(base: u64, k: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(k as u64)
        .rotate_left(17)
}
