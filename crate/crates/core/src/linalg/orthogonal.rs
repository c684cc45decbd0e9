//! Orthogonal matrix constructions: Sylvester Hadamard, seeded Haar sampling,
//! and the Cayley map used to parameterize rotation optimization.

use alloc::vec;

use crate::math;
use crate::{Error, Result};

use super::factor::solve_general;
use super::{Matrix, Seed, SplitMix64};

/// Normalized Hadamard matrix `H / sqrt(n)` from the Sylvester construction.
/// `n` must be a power of two; other sizes are rejected so recipes must pick
/// their dimensions accordingly.
pub fn hadamard(n: usize) -> Result<Matrix> {
    if !math::is_power_of_two(n) {
        return Err(Error::PowerOfTwoRequired(n));
    }
    let mut signs = vec![1.0f64];
    let mut size = 1;
    while size < n {
        // Sylvester doubling: [[H, H], [H, -H]].
        let mut next = vec![0.0; 4 * size * size];
        for i in 0..size {
            for j in 0..size {
                let v = signs[i * size + j];
                next[i * 2 * size + j] = v;
                next[i * 2 * size + (size + j)] = v;
                next[(size + i) * 2 * size + j] = v;
                next[(size + i) * 2 * size + (size + j)] = -v;
            }
        }
        signs = next;
        size *= 2;
    }
    let norm = 1.0 / math::sqrt(n as f64);
    Ok(Matrix::raw(
        n,
        n,
        signs.into_iter().map(|s| s * norm).collect(),
    ))
}

/// Haar-distributed random orthogonal matrix: Householder QR of a seeded
/// standard-Gaussian matrix, with the R diagonal forced positive so the
/// result is uniquely defined per seed.
pub fn random_orthogonal(n: usize, seed: Seed) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidArgument(alloc::string::String::from(
            "random_orthogonal: n must be >= 1",
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut r = Matrix::raw(n, n, (0..n * n).map(|_| rng.next_normal()).collect());
    let mut q = Matrix::identity(n);

    let mut v = vec![0.0f64; n];
    for k in 0..n {
        // Householder vector for column k of the trailing block.
        let mut norm2 = 0.0;
        for i in k..n {
            let x = r[(i, k)];
            v[i] = x;
            norm2 += x * x;
        }
        let norm = math::sqrt(norm2);
        if norm == 0.0 {
            continue;
        }
        let sign = if v[k] >= 0.0 { 1.0 } else { -1.0 };
        v[k] += sign * norm;
        let vnorm2: f64 = v[k..n].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;

        // R <- H R on rows k.., Q <- Q H on columns k..
        for j in k..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * r[(i, j)];
            }
            let f = beta * dot;
            for i in k..n {
                r[(i, j)] -= f * v[i];
            }
        }
        for row in 0..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += q[(row, i)] * v[i];
            }
            let f = beta * dot;
            for i in k..n {
                q[(row, i)] -= f * v[i];
            }
        }
    }
    // Sign convention: flip Q columns where the R diagonal came out negative.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// Cayley map `Q = (I - a)^-1 (I + a)` of a skew-symmetric matrix; the result
/// is orthogonal. Used to parameterize rotation optimization.
pub fn cayley(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch(alloc::format!(
            "cayley: expected square, got {}x{}",
            n,
            a.cols()
        )));
    }
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..n {
            if math::abs(a[(i, j)] + a[(j, i)]) > 1e-10 * scale {
                return Err(Error::NotOrthogonal {
                    deviation: math::abs(a[(i, j)] + a[(j, i)]),
                });
            }
        }
    }
    let eye = Matrix::identity(n);
    let i_minus = eye.sub(a)?;
    let i_plus = eye.add(a)?;
    solve_general(&i_minus, &i_plus)
}

/// Skew-symmetric matrix from its strictly-upper-triangle parameters, filled
/// row by row.
pub fn skew_from_params(n: usize, params: &[f64]) -> Result<Matrix> {
    let expected = n * (n - 1) / 2;
    if params.len() != expected {
        return Err(Error::ShapeMismatch(alloc::format!(
            "skew parameters: got {}, expected {expected}",
            params.len()
        )));
    }
    let mut a = Matrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            a[(i, j)] = params[idx];
            a[(j, i)] = -params[idx];
            idx += 1;
        }
    }
    Ok(a)
}

/// Frobenius deviation of `O^T O` from the identity.
pub fn orthogonality_error(o: &Matrix) -> f64 {
    match o.transpose().matmul(o) {
        Ok(gram) => gram
            .frob_dist(&Matrix::identity(o.cols()))
            .unwrap_or(f64::MAX),
        Err(_) => f64::MAX,
    }
}
