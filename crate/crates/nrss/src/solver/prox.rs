//! Soft-threshold proximal operators for the lasso-type block updates.

use ndarray::Array1;

/// Scalar soft threshold `(1 - k/|x|)_+ x`; exact ties map to zero.
#[inline]
pub(crate) fn prox_scalar(x: f64, k: f64) -> f64 {
    let a = x.abs();
    if a <= k {
        0.0
    } else {
        x * (1.0 - k / a)
    }
}

/// Nonnegative variant: project onto `x >= 0`, then shift down by `k`.
/// Equivalent to `argmin_{z>=0} ||z - x||^2/(2t) + lambda sum z` with `k = lambda t`.
#[inline]
pub(crate) fn prox_scalar_nonneg(x: f64, k: f64) -> f64 {
    (x - k).max(0.0)
}

/// Elementwise soft threshold with step `t`: `prox_{lambda t}(x)`. The
/// nonnegative flag switches to the positive-part operator used for the
/// set scales.
pub fn prox_l1(x: &Array1<f64>, lambda: f64, t: f64, nonneg: bool) -> Array1<f64> {
    let k = lambda * t;
    if nonneg {
        x.mapv(|v| prox_scalar_nonneg(v, k))
    } else {
        x.mapv(|v| prox_scalar(v, k))
    }
}
