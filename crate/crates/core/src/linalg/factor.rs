//! Cholesky and LDL factorizations plus the dense solves built on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

use super::Matrix;

fn check_square_symmetric(h: &Matrix) -> Result<()> {
    if h.rows() != h.cols() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "expected square matrix, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    // Symmetric within 1e-8 relative to the matrix scale.
    let scale = h.max_abs().max(1.0);
    for i in 0..h.rows() {
        for j in (i + 1)..h.cols() {
            if math::abs(h[(i, j)] - h[(j, i)]) > 1e-8 * scale {
                return Err(Error::InvalidArgument(alloc::format!(
                    "matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `L L^T = h`.
///
/// Fails with [`Error::NotPositiveDefinite`] on a non-positive pivot, which
/// for damped Hessians means the damping must be increased.
pub fn cholesky(h: &Matrix) -> Result<Matrix> {
    check_square_symmetric(h)?;
    let n = h.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = h[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let diag = math::sqrt(d);
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / diag;
        }
    }
    Ok(l)
}

/// LDL decomposition: unit-lower-triangular `L` and diagonal `d` with
/// `L diag(d) L^T = h`.
pub fn ldl_decompose(h: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    check_square_symmetric(h)?;
    let n = h.rows();
    let mut l = Matrix::identity(n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = h[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if dj <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        d[j] = dj;
        for i in (j + 1)..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok((l, d))
}

/// Solve `L x = b` for lower-triangular `L` (columns of `b` independently).
pub(crate) fn solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    if b.rows() != n {
        return Err(Error::ShapeMismatch(alloc::format!(
            "solve_lower: {}x{} vs rhs {}x{}",
            l.rows(),
            l.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut x = b.clone();
    for j in 0..x.cols() {
        for i in 0..n {
            let mut s = x[(i, j)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, j)];
            }
            let piv = l[(i, i)];
            if piv == 0.0 {
                return Err(Error::Singular("zero pivot in triangular solve"));
            }
            x[(i, j)] = s / piv;
        }
    }
    Ok(x)
}

/// Solve `L^T x = b` for lower-triangular `L`.
pub(crate) fn solve_lower_transpose(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    let mut x = b.clone();
    for j in 0..x.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, j)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, j)];
            }
            let piv = l[(i, i)];
            if piv == 0.0 {
                return Err(Error::Singular("zero pivot in triangular solve"));
            }
            x[(i, j)] = s / piv;
        }
    }
    Ok(x)
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse(h: &Matrix) -> Result<Matrix> {
    let l = cholesky(h)?;
    let eye = Matrix::identity(h.rows());
    let y = solve_lower(&l, &eye)?;
    solve_lower_transpose(&l, &y)
}

/// Solve a general square system `a x = b` by Gaussian elimination with
/// partial pivoting.
pub(crate) fn solve_general(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::ShapeMismatch(alloc::format!(
            "solve: {}x{} vs rhs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let mut piv_row = col;
        let mut piv_val = math::abs(m[(col, col)]);
        for r in (col + 1)..n {
            let v = math::abs(m[(r, col)]);
            if v > piv_val {
                piv_val = v;
                piv_row = r;
            }
        }
        if piv_val < 1e-300 {
            return Err(Error::Singular("pivot underflow in Gaussian elimination"));
        }
        if piv_row != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv_row, j)];
                m[(piv_row, j)] = tmp;
            }
            for j in 0..x.cols() {
                let tmp = x[(col, j)];
                x[(col, j)] = x[(piv_row, j)];
                x[(piv_row, j)] = tmp;
            }
        }
        let piv = m[(col, col)];
        for r in (col + 1)..n {
            let f = m[(r, col)] / piv;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                let v = m[(col, j)];
                m[(r, j)] -= f * v;
            }
            for j in 0..x.cols() {
                let v = x[(col, j)];
                x[(r, j)] -= f * v;
            }
        }
    }
    // Back substitution.
    for col in (0..n).rev() {
        let piv = m[(col, col)];
        for j in 0..x.cols() {
            let mut s = x[(col, j)];
            for k in (col + 1)..n {
                s -= m[(col, k)] * x[(k, j)];
            }
            x[(col, j)] = s / piv;
        }
    }
    Ok(x)
}
