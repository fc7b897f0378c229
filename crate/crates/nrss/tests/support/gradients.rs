//! Coordinate-wise finite-difference verification of the analytic gradients.

use nrss::model::{neg_log_posterior, ModelParams};
use nrss::solver::posterior_gradients;

use super::instances::Instance;
use super::{central_diff, rel_err};

/// Checks every coordinate of every smooth block against a central
/// difference and panics on the first violation; returns the worst relative
/// error seen.
pub fn fd_check(inst: &Instance, params: &ModelParams, tol: f64) -> f64 {
    let Instance { data, net, hyper } = inst;
    let grads = posterior_gradients(data, net, params, hyper).unwrap();
    let mut worst = 0.0_f64;

    let mut check = |analytic: f64, numeric: f64, what: &str| {
        let err = rel_err(analytic, numeric);
        assert!(
            err <= tol,
            "{what}: analytic {analytic} vs numeric {numeric} (rel err {err:.3e})"
        );
        worst = worst.max(err);
    };

    let nv = data.n_nodes();
    let np = data.n_predictors();
    for v in 0..nv {
        for p in 0..np {
            let mut f = |t: f64| {
                let mut q = params.clone();
                q.h[[v, p]] = t;
                neg_log_posterior(data, net, &q, hyper).unwrap()
            };
            let x = params.h[[v, p]];
            let num = central_diff(&mut f, x, 1e-5 * (1.0 + x.abs()));
            check(grads.h[[v, p]], num, "h");
        }
    }
    for v in 0..nv {
        let mut f = |t: f64| {
            let mut q = params.clone();
            q.g[v] = t;
            neg_log_posterior(data, net, &q, hyper).unwrap()
        };
        let x = params.g[v];
        check(grads.g[v], central_diff(&mut f, x, 1e-6 * (1.0 + x)), "g");
    }
    for s in 0..data.n_sets() {
        let mut f = |t: f64| {
            let mut q = params.clone();
            q.f[s] = t;
            neg_log_posterior(data, net, &q, hyper).unwrap()
        };
        let x = params.f[s];
        check(grads.f[s], central_diff(&mut f, x, 1e-6 * (1.0 + x)), "f");
    }
    for e in 0..data.n_edges() {
        let mut f = |t: f64| {
            let mut q = params.clone();
            q.b0[e] = t;
            neg_log_posterior(data, net, &q, hyper).unwrap()
        };
        let x = params.b0[e];
        check(grads.b0[e], central_diff(&mut f, x, 1e-5 * (1.0 + x.abs())), "b0");
    }
    for v in 0..nv {
        let mut f = |t: f64| {
            let mut q = params.clone();
            q.alpha[v] = t;
            neg_log_posterior(data, net, &q, hyper).unwrap()
        };
        let x = params.alpha[v];
        check(grads.alpha[v], central_diff(&mut f, x, 1e-5 * (1.0 + x.abs())), "alpha");
    }
    {
        let mut f = |t: f64| {
            let mut q = params.clone();
            q.sigma2 = t;
            neg_log_posterior(data, net, &q, hyper).unwrap()
        };
        let x = params.sigma2;
        check(grads.sigma2, central_diff(&mut f, x, 1e-6 * x), "sigma2");
    }
    worst
}
