//! Shared helpers for the integration tests: a derivative-free optimizer,
//! adaptive quadrature, finite differences, and random instance factories.
//! These are deliberately independent of the solver internals so they can
//! serve as oracles for it.
#![allow(dead_code)]

pub mod gradients;
pub mod instances;
pub mod nelder_mead;
pub mod oracle;
pub mod quadrature;

/// Central finite difference of a scalar function at `x` with step `h`.
pub fn central_diff(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with a floor of 1 on the denominator, so small true values
/// are compared absolutely.
pub fn rel_err(approx: f64, truth: f64) -> f64 {
    (approx - truth).abs() / truth.abs().max(1.0)
}
