//! Reference implementations that share no numerical code with the crate:
//! plain loops, golden-section search and nalgebra's SVD.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slr_core::admm::{Blocks, Sample};
use slr_core::tensor::{ConvGeometry, Matrix, Tensor3, Tensor4};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn nuclear(m: &Matrix) -> f64 {
    singular_values(m).iter().sum()
}

pub fn l21(m: &Matrix) -> f64 {
    let mut total = 0.0;
    for j in 0..m.cols() {
        let mut sq = 0.0;
        for i in 0..m.rows() {
            sq += m[(i, j)] * m[(i, j)];
        }
        total += sq.sqrt();
    }
    total
}

pub fn fro_sq_diff(a: &Matrix, b: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let d = a[(i, j)] - b[(i, j)];
            s += d * d;
        }
    }
    s
}

/// Naive triple loop.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Minimizes a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi]
        .into_iter()
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap()
}

/// Column-wise minimizer of `thr·‖a‖ + ½‖a − c‖²` by scalar search over the
/// length of `a` along `c` (any component orthogonal to `c` only adds cost).
pub fn column_shrink_search(c: &Matrix, thr: f64) -> Matrix {
    let mut out = Matrix::zeros(c.rows(), c.cols());
    for j in 0..c.cols() {
        let col = c.column(j);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let cost = |s: f64| thr * s + 0.5 * (s - norm) * (s - norm);
        let s = golden_section(cost, 0.0, norm, 200);
        for (i, v) in col.iter().enumerate() {
            out[(i, j)] = v / norm * s;
        }
    }
    out
}

/// `Σ_j thr·‖a_j‖ + ½‖A − C‖²`
pub fn column_subproblem(a: &Matrix, c: &Matrix, thr: f64) -> f64 {
    thr * l21(a) + 0.5 * fro_sq_diff(a, c)
}

/// `thr·‖B‖_* + ½‖B − D‖²`
pub fn nuclear_subproblem(b: &Matrix, d: &Matrix, thr: f64) -> f64 {
    thr * nuclear(b) + 0.5 * fro_sq_diff(b, d)
}

/// Singular value thresholding through nalgebra.
pub fn svt(d: &Matrix, thr: f64) -> Matrix {
    let svd = to_na(d).svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = DMatrix::zeros(d.rows(), d.cols());
    for (k, s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - thr;
        if shrunk > 0.0 {
            out += shrunk * u.column(k) * vt.row(k);
        }
    }
    from_na(&out)
}

/// The correction as one block-matrix product on the stacked vector
/// `[vec B; vec M; vec Λ]`: `v' = v − α·G·(v − v̂)` with
/// `G = [[I, (τ−1)I, 0], [τI, I, 0], [0, 0, I]]`.
pub fn correction(hat: &Blocks, prev: &Blocks, tau: f64, alpha: f64) -> Blocks {
    let len = prev.b.as_slice().len();
    let stack = |x: &Blocks| {
        let mut v = x.b.as_slice().to_vec();
        v.extend_from_slice(x.m.as_slice());
        v.extend_from_slice(x.lambda.as_slice());
        DMatrix::from_vec(3 * len, 1, v)
    };
    let id = DMatrix::<f64>::identity(len, len);
    let mut g = DMatrix::<f64>::zeros(3 * len, 3 * len);
    g.view_mut((0, 0), (len, len)).copy_from(&id);
    g.view_mut((0, len), (len, len)).copy_from(&((tau - 1.0) * &id));
    g.view_mut((len, 0), (len, len)).copy_from(&(tau * &id));
    g.view_mut((len, len), (len, len)).copy_from(&id);
    g.view_mut((2 * len, 2 * len), (len, len)).copy_from(&id);
    let v = stack(prev);
    let out = &v - alpha * (&g * (&v - stack(hat)));
    let (r, c) = prev.b.shape();
    let part = |k: usize| Matrix::new(r, c, out.as_slice()[k * len..(k + 1) * len].to_vec()).unwrap();
    Blocks {
        b: part(0),
        m: part(1),
        lambda: part(2),
    }
}

/// Direct sliding-window convolution; returns `n × positions`, raster order.
pub fn direct_conv(input: &Tensor3, filt: &Tensor4, g: &ConvGeometry) -> Matrix {
    let oh = (g.in_h + 2 * g.padding - g.kernel_h) / g.stride + 1;
    let ow = (g.in_w + 2 * g.padding - g.kernel_w) / g.stride + 1;
    let mut out = Matrix::zeros(filt.n, oh * ow);
    for f in 0..filt.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for ch in 0..filt.c {
                    for ky in 0..filt.kh {
                        for kx in 0..filt.kw {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                s += filt.at(f, ch, ky, kx) * input.at(ch, iy as usize, ix as usize);
                            }
                        }
                    }
                }
                out[(f, oy * ow + ox)] = s;
            }
        }
    }
    out
}

/// The relaxed objective by plain loops.
pub fn objective(samples: &[Sample], a: &Matrix, b: &Matrix, l1: f64, l2: f64, relu: bool) -> f64 {
    let w = a.add(b);
    let mut data = 0.0;
    for s in samples {
        let z = matmul(&w, &s.x);
        for i in 0..z.rows() {
            for j in 0..z.cols() {
                let v = if relu { z[(i, j)].max(0.0) } else { z[(i, j)] };
                let d = s.y[(i, j)] - v;
                data += d * d;
            }
        }
    }
    data + l1 * l21(a) + l2 * nuclear(b)
}

/// Minimum of the relaxed objective for the identity activation, by
/// accelerated proximal gradient on `(A, B)` with nalgebra-based proxes.
/// Returns the objective value of the final iterate.
pub fn convex_optimum(samples: &[Sample], n: usize, m: usize, l1: f64, l2: f64, iters: usize) -> f64 {
    let gram = samples.iter().fold(DMatrix::<f64>::zeros(m, m), |acc, s| {
        let x = to_na(&s.x);
        acc + &x * x.transpose()
    });
    let cross = samples.iter().fold(DMatrix::<f64>::zeros(n, m), |acc, s| {
        acc + to_na(&s.y) * to_na(&s.x).transpose()
    });
    let lip = 2.0 * gram.symmetric_eigenvalues().max();
    // the joint gradient in (A, B) has twice the curvature of the one in A + B
    let step = 1.0 / (2.0 * lip);
    let grad = |w: &DMatrix<f64>| 2.0 * (w * &gram - &cross);

    let mut a = DMatrix::<f64>::zeros(n, m);
    let mut b = DMatrix::<f64>::zeros(n, m);
    let (mut ya, mut yb) = (a.clone(), b.clone());
    let mut tk = 1.0f64;
    for _ in 0..iters {
        let g = grad(&(&ya + &yb));
        let ca = from_na(&(&ya - step * &g));
        let cb = from_na(&(&yb - step * &g));
        let na = to_na(&column_shrink_closed(&ca, step * l1));
        let nb = to_na(&svt(&cb, step * l2));
        let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        ya = &na + ((tk - 1.0) / tn) * (&na - &a);
        yb = &nb + ((tk - 1.0) / tn) * (&nb - &b);
        a = na;
        b = nb;
        tk = tn;
    }
    objective(samples, &from_na(&a), &from_na(&b), l1, l2, false)
}

fn column_shrink_closed(c: &Matrix, thr: f64) -> Matrix {
    let mut out = c.clone();
    for j in 0..c.cols() {
        let norm = c.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        let k = if norm > thr { 1.0 - thr / norm } else { 0.0 };
        for i in 0..c.rows() {
            out[(i, j)] *= k;
        }
    }
    out
}
