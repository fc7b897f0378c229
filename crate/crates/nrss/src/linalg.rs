//! Minimal dense linear algebra for small symmetric systems (node-count
//! sized, so factorization cost is negligible next to the regression sweeps).

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or `None` if a pivot is not strictly positive.
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower factor `L`.
pub(crate) fn solve_with_cholesky(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[[i, k]] * v;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = y[k];
            y[i] -= l[[k, i]] * v;
        }
        y[i] /= l[[i, i]];
    }
    y
}

/// Solves `L^T x = z` given the lower factor `L` (so `Cov(x) = (L L^T)^{-1}`
/// when `z` is standard normal).
pub(crate) fn solve_upper_transposed(l: &Array2<f64>, z: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = z.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = x[k];
            x[i] -= l[[k, i]] * v;
        }
        x[i] /= l[[i, i]];
    }
    x
}
