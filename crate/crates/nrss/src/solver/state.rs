//! Mutable solver state: current parameters plus the caches that keep the
//! block updates matrix-shaped (residual matrix, loading matrix, step-size
//! bounds). All updates must leave `resid == a - b0 - pred` up to roundoff;
//! the driver refreshes the cache periodically to stop drift.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::edges::{edge_index, edge_pairs};
use crate::model::{
    neg_log_posterior_from_parts, Dataset, Hyperparams, LatentGraph, ModelParams, PriorNetwork,
};
use crate::{Error, Result};

use super::FitOptions;

/// Power-iteration sweeps used for the shared h-step Lipschitz bound.
const POWER_ITERS: usize = 8;

pub(crate) struct WorkState<'a> {
    pub(crate) data: &'a Dataset,
    pub(crate) net: &'a PriorNetwork,
    pub(crate) hyper: &'a Hyperparams,
    pub(crate) params: ModelParams,
    pub(crate) omega: LatentGraph,
    /// Loading matrix `u[v, p] = f0[p] * g[v] * h[v, p]`, kept in sync with params.
    pub(crate) u: Array2<f64>,
    /// Square roots of the set scales expanded per predictor.
    pub(crate) f0: Array1<f64>,
    /// Residual cache `a - b0 - pred`, N x E.
    pub(crate) resid: Array2<f64>,
    pub(crate) xbar: Array1<f64>,
    pub(crate) abar: Array1<f64>,
    /// Per-column l1 weight for h (covariate columns get a near-zero weight).
    pub(crate) lambda_h_col: Array1<f64>,
    /// Largest eigenvalue of `f0 f0^T . U^T U . X^T X` (no sigma^2 factor);
    /// dominates every per-node curvature `sigma2 * R_v`.
    pub(crate) lip_base: f64,
    /// Current ISTA step for the f block (adapted by backtracking).
    pub(crate) step_f: f64,
    /// Unit-scale prediction columns `pred / g[v]` for the node updated last,
    /// reused by the g update to avoid a second pass over X.
    pub(crate) pred1: Array2<f64>,
    pub(crate) pred1_node: Option<usize>,
    /// Column sums of squared predictors, fixed over the fit.
    pub(crate) col_x2: Array1<f64>,
    /// X^T X, built once when the explicit quadratic-form path is requested.
    pub(crate) xtx: Option<Array2<f64>>,
}

impl<'a> WorkState<'a> {
    pub(crate) fn new(
        data: &'a Dataset,
        net: &'a PriorNetwork,
        hyper: &'a Hyperparams,
        opts: &FitOptions,
        warm: Option<ModelParams>,
    ) -> Result<Self> {
        hyper.validate()?;
        opts.validate()?;
        if net.n_nodes() != data.n_nodes() {
            return Err(Error::dim(format!(
                "prior network has {} nodes but data has {}",
                net.n_nodes(),
                data.n_nodes()
            )));
        }
        let n = data.n_subjects();
        let nv = data.n_nodes();
        let ne = data.n_edges();

        let xbar = data.mean_predictors();
        let abar = data.mean_edges();

        let params = match warm {
            Some(p) => {
                p.validate(data)?;
                p
            }
            None => {
                let mut params = ModelParams::zeros(data);
                params.f.fill(1.0);
                params.g.fill(1.0);
                params.alpha.fill(hyper.psi);
                params.b0.assign(&abar);
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                if opts.init_scale > 0.0 {
                    let normal = Normal::new(0.0, opts.init_scale)
                        .map_err(|e| Error::invalid(format!("bad init scale: {e}")))?;
                    params.h.mapv_inplace(|_| normal.sample(&mut rng));
                }
                // Pooled variance of the centered responses, floored like
                // sigma2 itself.
                let mut ssr0 = 0.0;
                for i in 0..n {
                    for e in 0..ne {
                        let d = data.responses()[[i, e]] - abar[e];
                        ssr0 += d * d;
                    }
                }
                params.sigma2 = (ssr0 / (n * ne) as f64).max(hyper.sigma2_floor);
                params
            }
        };

        let omega = if hyper.nu > 0.0 {
            super::blocks::e_step(&params.alpha, net, hyper.nu, hyper.tau, hyper.eta)?
        } else {
            LatentGraph::zeros(net)
        };

        let lambda_h_col = data.lambda_h_columns(hyper.lambda_h);
        let f0 = expand_f0(data, &params.f);
        let u = assemble_u(data, &params, &f0);
        let mut col_x2 = Array1::<f64>::zeros(data.n_predictors());
        for row in data.predictors().rows() {
            for (s, &x) in col_x2.iter_mut().zip(row.iter()) {
                *s += x * x;
            }
        }

        let mut state = WorkState {
            data,
            net,
            hyper,
            params,
            omega,
            u,
            f0,
            resid: Array2::zeros((n, ne)),
            xbar,
            abar,
            lambda_h_col,
            lip_base: 0.0,
            step_f: 1.0,
            pred1: Array2::zeros((n, nv)),
            pred1_node: None,
            col_x2,
            xtx: if opts.explicit_rv {
                Some(data.predictors().t().dot(&data.predictors()))
            } else {
                None
            },
        };
        state.refresh_residuals();
        state.refresh_lipschitz();
        Ok(state)
    }

    #[inline]
    pub(crate) fn edge(&self, a: usize, b: usize) -> usize {
        edge_index(self.data.n_nodes(), a.min(b), a.max(b))
    }

    /// Recompute `u` from the current parameters (after f or global changes).
    pub(crate) fn rebuild_u(&mut self) {
        self.f0 = expand_f0(self.data, &self.params.f);
        self.u = assemble_u(self.data, &self.params, &self.f0);
        self.pred1_node = None;
    }

    /// Recompute the residual cache from scratch.
    pub(crate) fn refresh_residuals(&mut self) {
        self.resid = residual_matrix(self.data, &self.u, &self.params.b0);
        self.pred1_node = None;
    }

    pub(crate) fn ssr(&self) -> f64 {
        self.resid.iter().map(|r| r * r).sum()
    }

    pub(crate) fn objective(&self) -> f64 {
        neg_log_posterior_from_parts(self.ssr(), self.data, self.net, &self.params, self.hyper)
    }

    /// Power iteration on `z -> f0 . sum_v u_v . X^T X (u_v . f0 . z)`, a PSD
    /// matrix that dominates every per-node curvature. The result excludes the
    /// `1/sigma2` factor so it stays valid when sigma2 moves.
    pub(crate) fn refresh_lipschitz(&mut self) {
        let p = self.data.n_predictors();
        let norm0 = self.f0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut z = if norm0 > 0.0 {
            &self.f0 / norm0
        } else {
            Array1::from_elem(p, (p as f64).powf(-0.5))
        };
        let mut lam = 0.0;
        for _ in 0..POWER_ITERS {
            let w = self.apply_dominating_quadratic(&z);
            lam = z.dot(&w);
            let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nw <= 0.0 {
                lam = 0.0;
                break;
            }
            z = w / nw;
        }
        // Power iteration underestimates; pad and keep strictly positive.
        self.lip_base = (lam * 1.05).max(1e-12);
        self.step_f = self.step_f_bound();
    }

    fn apply_dominating_quadratic(&self, z: &Array1<f64>) -> Array1<f64> {
        let w = &self.f0 * z;
        let s1 = &self.u * &w; // V x P, rows u_v . w
        let t = s1.dot(&self.data.predictors().t()); // V x N
        let s2 = t.dot(&self.data.predictors()); // V x P
        let mut out = Array1::zeros(z.len());
        for v in 0..self.data.n_nodes() {
            let urow = self.u.row(v);
            let srow = s2.row(v);
            for j in 0..z.len() {
                out[j] += urow[j] * srow[j];
            }
        }
        &out * &self.f0
    }

    /// Step bound for the h update of node v: `1 / L_v` with
    /// `L_v = g_v^2 * lip_base / sigma2`. Nodes with g = 0 fall back to the
    /// unscaled bound so the prox still runs.
    pub(crate) fn step_h(&self, v: usize) -> f64 {
        let g = self.params.g[v];
        let scale = if g > 0.0 { g * g } else { 1.0 };
        self.params.sigma2 / (scale * self.lip_base)
    }

    /// Conservative initial step for the f block, from a Cauchy-Schwarz bound
    /// on `trace(R_f)`: with `c_p = sum_v (g_v h_vp)^2`,
    /// `trace(R_f) <= sum_q |q| sum_{p in q} ||x_p||^2 c_p^2 / (2 sigma2)`.
    /// Loose by design; the line search grows the step after clean accepts.
    pub(crate) fn step_f_bound(&self) -> f64 {
        let gmat = gh_matrix(&self.params);
        let mut c = Array1::<f64>::zeros(self.data.n_predictors());
        for row in gmat.rows() {
            for (cp, &g) in c.iter_mut().zip(row.iter()) {
                *cp += g * g;
            }
        }
        let mut bound = 0.0;
        for q in 0..self.data.n_sets() {
            if self.data.is_covariate_set(q) {
                continue;
            }
            let cols = self.data.set_members(q);
            let size = cols.len() as f64;
            for &p in cols {
                bound += size * self.col_x2[p] * c[p] * c[p] * 0.5;
            }
        }
        if bound <= 0.0 {
            1.0
        } else {
            self.params.sigma2 / bound
        }
    }
}

/// `a - b0 - pred` for given loadings, with one `X . W` product where column
/// `e = (a, b)` of `W` is `u_a . u_b`.
pub(crate) fn residual_matrix(data: &Dataset, u: &Array2<f64>, b0: &Array1<f64>) -> Array2<f64> {
    let p = data.n_predictors();
    let ne = data.n_edges();
    let mut w = Array2::zeros((p, ne));
    for (k, (a, b)) in edge_pairs(data.n_nodes()).enumerate() {
        let ua = u.row(a);
        let ub = u.row(b);
        let mut col = w.column_mut(k);
        for j in 0..p {
            col[j] = ua[j] * ub[j];
        }
    }
    let pred = data.predictors().dot(&w);
    let mut resid = &data.responses() - &pred;
    for (mut col, &b) in resid.columns_mut().into_iter().zip(b0.iter()) {
        col -= b;
    }
    resid
}

pub(crate) fn expand_f0(data: &Dataset, f: &Array1<f64>) -> Array1<f64> {
    let set_of = data.set_of();
    Array1::from_iter((0..data.n_predictors()).map(|p| f[set_of[p]].sqrt()))
}

fn assemble_u(data: &Dataset, params: &ModelParams, f0: &Array1<f64>) -> Array2<f64> {
    let mut u = params.h.clone();
    for v in 0..data.n_nodes() {
        let g = params.g[v];
        let mut row = u.row_mut(v);
        for j in 0..data.n_predictors() {
            row[j] *= g * f0[j];
        }
    }
    u
}

/// `G[v, p] = g_v h_vp`, the loading without the set scale.
pub(crate) fn gh_matrix(params: &ModelParams) -> Array2<f64> {
    let mut gmat = params.h.clone();
    for (v, mut row) in gmat.outer_iter_mut().enumerate() {
        row *= params.g[v];
    }
    gmat
}
