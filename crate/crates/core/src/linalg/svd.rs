//! Truncated SVD via one-sided Jacobi.
//!
//! Plenty accurate at desk scale (matrices up to a few thousand per side);
//! singular values come out at close to machine precision.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

use super::Matrix;

/// Rank-k factors: `u` (m x k) and `v` (n x k) with orthonormal columns,
/// `sigma` non-negative and non-increasing. `u * diag(sigma) * v^T` is the
/// best rank-k Frobenius approximation of the input.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl TruncatedSvd {
    /// `u * diag(sigma) * v^T`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let k = self.sigma.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us[(i, j)] *= self.sigma[j];
            }
        }
        us.matmul(&self.v.transpose())
    }
}

const MAX_SWEEPS: usize = 64;
const JACOBI_TOL: f64 = 1e-14;

/// Top-k singular triplets of `m`.
pub fn svd_topk(m: &Matrix, k: usize) -> Result<TruncatedSvd> {
    let min_dim = m.rows().min(m.cols());
    if k == 0 || k > min_dim {
        return Err(Error::RankOutOfRange {
            rank: k,
            max: min_dim,
        });
    }
    if m.rows() >= m.cols() {
        let (u, sigma, v) = jacobi_tall(m, k)?;
        Ok(TruncatedSvd { u, sigma, v })
    } else {
        // SVD of the transpose swaps the factor roles.
        let (u, sigma, v) = jacobi_tall(&m.transpose(), k)?;
        Ok(TruncatedSvd { u: v, sigma, v: u })
    }
}

/// One-sided Jacobi on a tall (rows >= cols) matrix: rotate column pairs of a
/// working copy until all pairs are orthogonal, accumulate the rotations in V,
/// then read singular values off as column norms.
fn jacobi_tall(m: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let rows = m.rows();
    let cols = m.cols();
    let mut a = m.clone();
    let mut v = Matrix::identity(cols);

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..rows {
                    let x = a[(i, p)];
                    let y = a[(i, q)];
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if math::abs(apq) <= JACOBI_TOL * math::sqrt(app * aqq) {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + math::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + math::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..rows {
                    let x = a[(i, p)];
                    let y = a[(i, q)];
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                for i in 0..cols {
                    let x = v[(i, p)];
                    let y = v[(i, q)];
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence("one-sided Jacobi SVD"));
    }

    // Column norms are the singular values; sort descending.
    let mut norms: Vec<(usize, f64)> = (0..cols)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..rows {
                s += a[(i, j)] * a[(i, j)];
            }
            (j, math::sqrt(s))
        })
        .collect();
    norms.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));

    let sigma_max = norms.first().map_or(0.0, |n| n.1);
    let rank_tol = sigma_max * 1e-13;

    let mut u = Matrix::zeros(rows, k);
    let mut vk = Matrix::zeros(cols, k);
    let mut sigma = vec![0.0; k];
    for (out_j, &(src_j, s)) in norms.iter().take(k).enumerate() {
        sigma[out_j] = s;
        for i in 0..cols {
            vk[(i, out_j)] = v[(i, src_j)];
        }
        if s > rank_tol && s > 0.0 {
            for i in 0..rows {
                u[(i, out_j)] = a[(i, src_j)] / s;
            }
        } else {
            // Numerically zero direction: complete U with any unit vector
            // orthogonal to the columns already placed. The corresponding
            // sigma is ~0, so the reconstruction is unaffected.
            fill_orthonormal_column(&mut u, out_j);
        }
    }
    Ok((u, sigma, vk))
}

/// Set column `j` of `u` to a unit vector orthogonal to columns `0..j`,
/// by Gram-Schmidt over canonical basis vectors.
fn fill_orthonormal_column(u: &mut Matrix, j: usize) {
    let rows = u.rows();
    for basis in 0..rows {
        let mut cand = vec![0.0; rows];
        cand[basis] = 1.0;
        for prev in 0..j {
            let mut dot = 0.0;
            for i in 0..rows {
                dot += cand[i] * u[(i, prev)];
            }
            for i in 0..rows {
                cand[i] -= dot * u[(i, prev)];
            }
        }
        let norm = math::sqrt(cand.iter().map(|x| x * x).sum());
        if norm > 0.5 {
            for i in 0..rows {
                u[(i, j)] = cand[i] / norm;
            }
            return;
        }
    }
    // Unreachable for j < rows: the canonical basis spans the space.
    debug_assert!(false, "failed to complete orthonormal basis");
}
