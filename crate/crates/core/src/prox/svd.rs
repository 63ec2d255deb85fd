use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `a = u · diag(σ) · v`.
///
/// `u` is `rows × r`, `v` is `r × cols` (its rows are the right singular
/// vectors) and `σ` is nonincreasing. Directions belonging to a zero singular
/// value may be zero vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (k, s) in self.singular_values.iter().enumerate() {
                us[(r, k)] *= s;
            }
        }
        us.matmul(&self.v)
    }

    /// Number of singular values above `tol`.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// One-sided Jacobi SVD. Deterministic for a given input.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() >= a.cols() {
        let (u, s, v) = jacobi_tall(a)?;
        Ok(SvdResult {
            u,
            singular_values: s,
            v,
        })
    } else {
        let (u, s, v) = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            u: v.transpose(),
            singular_values: s,
            v: u.transpose(),
        })
    }
}

/// Jacobi on a matrix with `rows >= cols`. Columns are rotated pairwise until
/// mutually orthogonal; returns `(u, σ, vᵀ)`.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = a.shape();
    // column-major working copies so that column rotations are contiguous
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // dot products of length m carry O(m·ε) rounding
    let eps = f64::EPSILON * (m.max(1) as f64);
    // columns below ε·‖A‖ carry no resolvable direction
    let frob_sq: f64 = g.iter().flatten().map(|x| x * x).sum();
    let negligible = f64::EPSILON * f64::EPSILON * frob_sq;
    let mut sweeps = 0;
    loop {
        let mut off = 0.0f64;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (gp, gq) = (&g[p], &g[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += gp[i] * gp[i];
                        beta += gq[i] * gq[i];
                        gamma += gp[i] * gq[i];
                    }
                    (alpha, beta, gamma)
                };
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let cosine = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                off = off.max(cosine);
                if cosine <= eps {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::SvdNoConvergence {
                sweeps,
                off_diagonal: off,
            });
        }
    }

    let mut order: Vec<(usize, f64)> = g
        .iter()
        .enumerate()
        .map(|(j, col)| (j, col.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    // stable sort keeps the result deterministic under ties
    order.sort_by(|x, y| y.1.total_cmp(&x.1));

    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (k, &(j, s)) in order.iter().enumerate() {
        sigma.push(s);
        if s > 0.0 {
            for i in 0..m {
                u[(i, k)] = g[j][i] / s;
            }
        }
        for i in 0..n {
            vt[(k, i)] = v[j][i];
        }
    }
    Ok((u, sigma, vt))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_singular_values() {
        let r = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(r.singular_values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 1.0, -1.0];
        let a = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let r = svd(&a).unwrap();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((r.singular_values[0] - nu * nv).abs() < 1e-10);
        assert_eq!(r.numerical_rank(1e-10), 1);
    }

    #[test]
    fn wide_and_tall_reconstruct() {
        for (rows, cols) in [(5, 9), (9, 5), (1, 4), (4, 1), (6, 6)] {
            let a = Matrix::from_fn(rows, cols, |i, j| ((i * 7 + j * 3) % 11) as f64 - 4.7 + 0.1 * i as f64);
            let r = svd(&a).unwrap();
            assert_eq!(r.u.shape(), (rows, rows.min(cols)));
            assert_eq!(r.v.shape(), (rows.min(cols), cols));
            assert!(r.reconstruct().rel_error(&a) < 1e-12);
            assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn zero_matrix() {
        let r = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(r.singular_values, vec![0.0, 0.0]);
        assert!(r.reconstruct().is_zero());
    }

    #[test]
    fn deterministic() {
        let a = Matrix::from_fn(7, 4, |i, j| (i as f64 * 1.3 - j as f64).sin());
        assert_eq!(svd(&a).unwrap(), svd(&a).unwrap());
    }
}
