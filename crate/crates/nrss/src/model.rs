//! Core data containers, model parameters, and the MAP objective.
//!
//! The regression couples a symmetric `V x V` response per subject to `P`
//! grouped predictors. Predictor `p` carries the rank-1 coefficient matrix
//! `B_p = u_p (x) u_p` with loadings `u_{vp} = f_{q(p)}^{1/2} g_v h_{vp}`:
//! `f_q >= 0` scales predictor set `q`, `g_v >= 0` scales node `v`, and
//! `h_{vp}` is the free entry weight. Shrinkage priors: `f_q ~ Exp(lambda_f)`,
//! `g_v ~ Exp(e^{alpha_v})`, `h_{vp} ~ Laplace(lambda_h)`, `sigma^2 ~
//! InvGamma(1/2, 1/2)`, and `alpha` carries a graph-coupled normal prior whose
//! edge weights `omega` are Gamma-distributed on the support of a fixed
//! binary node network.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::edges::{edge_count, edge_index, edge_pairs};
use crate::error::{Error, Result};

/// Shrinkage applied to the `h` column of an unpenalized covariate in place
/// of `lambda_h`: close enough to zero that the covariate is never selected
/// away, far enough that the objective stays bounded.
pub const COVARIATE_LAMBDA_H: f64 = 1e-8;

/// Subjects' symmetric responses plus predictors and their set partition.
///
/// Responses are stored as strict upper triangles (see [`crate::edges`]);
/// diagonals are never modeled. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_nodes: usize,
    /// `N x E` response edges.
    a: Array2<f64>,
    /// `N x P` predictors.
    x: Array2<f64>,
    /// Set id per predictor column, ids contiguous in `0..Q`.
    set_of: Vec<usize>,
    /// Member columns of each set.
    sets: Vec<Vec<usize>>,
    /// Columns exempt from group/entry shrinkage (covariates).
    unpenalized: Vec<bool>,
}

impl Dataset {
    /// Builds a dataset from edge-major responses.
    ///
    /// `set_of[p]` must use contiguous ids `0..Q` with every set nonempty;
    /// every column listed in `unpenalized` must form a singleton set.
    pub fn new(
        n_nodes: usize,
        a: Array2<f64>,
        x: Array2<f64>,
        set_of: Vec<usize>,
        unpenalized: &[usize],
    ) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::invalid("need at least 2 nodes"));
        }
        if a.nrows() == 0 {
            return Err(Error::invalid("need at least 1 subject"));
        }
        if a.ncols() != edge_count(n_nodes) {
            return Err(Error::dim(format!(
                "response has {} edge columns, expected {} for V={}",
                a.ncols(),
                edge_count(n_nodes),
                n_nodes
            )));
        }
        if x.nrows() != a.nrows() {
            return Err(Error::dim(format!(
                "{} predictor rows vs {} response rows",
                x.nrows(),
                a.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("need at least 1 predictor"));
        }
        if set_of.len() != x.ncols() {
            return Err(Error::dim(format!(
                "set map covers {} columns, expected {}",
                set_of.len(),
                x.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("responses and predictors must be finite"));
        }
        let n_sets = set_of.iter().max().map_or(0, |m| m + 1);
        let mut sets = vec![Vec::new(); n_sets];
        for (p, &q) in set_of.iter().enumerate() {
            sets[q].push(p);
        }
        if let Some(q) = sets.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!(
                "set ids must be contiguous: set {q} is empty"
            )));
        }
        let mut unpen = vec![false; x.ncols()];
        for &p in unpenalized {
            if p >= x.ncols() {
                return Err(Error::invalid(format!(
                    "unpenalized column {p} out of range"
                )));
            }
            if sets[set_of[p]].len() != 1 {
                return Err(Error::invalid(format!(
                    "unpenalized column {p} must form a singleton set"
                )));
            }
            unpen[p] = true;
        }
        Ok(Dataset {
            n_nodes,
            a,
            x,
            set_of,
            sets,
            unpenalized: unpen,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    /// `N x E` responses, edge-major.
    pub fn responses(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }

    /// `N x P` predictors.
    pub fn predictors(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn set_of(&self) -> &[usize] {
        &self.set_of
    }

    pub fn set_members(&self, q: usize) -> &[usize] {
        &self.sets[q]
    }

    pub fn is_unpenalized(&self, p: usize) -> bool {
        self.unpenalized[p]
    }

    /// A set is a covariate set when its single member is unpenalized.
    pub fn is_covariate_set(&self, q: usize) -> bool {
        self.sets[q].len() == 1 && self.unpenalized[self.sets[q][0]]
    }

    pub fn unpenalized_columns(&self) -> Vec<usize> {
        (0..self.n_predictors())
            .filter(|&p| self.unpenalized[p])
            .collect()
    }

    /// Effective entry-level shrinkage per column under `lambda_h`.
    pub fn lambda_h_columns(&self, lambda_h: f64) -> Array1<f64> {
        Array1::from_iter(self.unpenalized.iter().map(|&cov| {
            if cov {
                COVARIATE_LAMBDA_H
            } else {
                lambda_h
            }
        }))
    }

    /// New dataset restricted to the given subjects (rows), in the given order.
    pub fn subset(&self, subjects: &[usize]) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::invalid("subset needs at least one subject"));
        }
        if let Some(&bad) = subjects.iter().find(|&&i| i >= self.n_subjects()) {
            return Err(Error::invalid(format!("subject index {bad} out of range")));
        }
        Ok(Dataset {
            n_nodes: self.n_nodes,
            a: self.a.select(Axis(0), subjects),
            x: self.x.select(Axis(0), subjects),
            set_of: self.set_of.clone(),
            sets: self.sets.clone(),
            unpenalized: self.unpenalized.clone(),
        })
    }

    /// Mean response per edge.
    pub fn mean_edges(&self) -> Array1<f64> {
        self.a.mean_axis(Axis(0)).expect("at least one subject")
    }

    /// Mean predictor per column.
    pub fn mean_predictors(&self) -> Array1<f64> {
        self.x.mean_axis(Axis(0)).expect("at least one subject")
    }
}

/// Packs a symmetric matrix into its strict upper triangle.
pub fn symmetric_to_edges(m: &ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let v = m.nrows();
    if m.ncols() != v {
        return Err(Error::dim("matrix must be square"));
    }
    for a in 0..v {
        for b in (a + 1)..v {
            if (m[[a, b]] - m[[b, a]]).abs() > 1e-12 * (1.0 + m[[a, b]].abs()) {
                return Err(Error::invalid(format!("matrix not symmetric at ({a},{b})")));
            }
        }
    }
    Ok(Array1::from_iter(
        edge_pairs(v).map(|(a, b)| m[[a, b]]),
    ))
}

/// Expands an edge vector to the full symmetric matrix; diagonal entries are
/// set to `diag` (callers use `NaN` to mark them non-modeled).
pub fn edges_to_symmetric(edges: &ArrayView1<'_, f64>, n_nodes: usize, diag: f64) -> Array2<f64> {
    let mut m = Array2::from_elem((n_nodes, n_nodes), diag);
    for (k, (a, b)) in edge_pairs(n_nodes).enumerate() {
        m[[a, b]] = edges[k];
        m[[b, a]] = edges[k];
    }
    m
}

/// Fixed binary node network: the support on which the latent graph weights
/// (and hence shrinkage coupling) may be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorNetwork {
    n_nodes: usize,
    support: Vec<bool>,
    edges: Vec<(usize, usize)>,
}

impl PriorNetwork {
    /// Builds from an undirected edge list; orientation and duplicates are
    /// normalized away, self-loops rejected.
    pub fn from_edge_list(n_nodes: usize, list: &[(usize, usize)]) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::invalid("need at least 2 nodes"));
        }
        let mut support = vec![false; edge_count(n_nodes)];
        for &(a, b) in list {
            if a == b {
                return Err(Error::invalid(format!("self-loop at node {a}")));
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::invalid(format!(
                    "edge ({a},{b}) out of range for V={n_nodes}"
                )));
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            support[edge_index(n_nodes, lo, hi)] = true;
        }
        let edges = edge_pairs(n_nodes)
            .enumerate()
            .filter(|(k, _)| support[*k])
            .map(|(_, ab)| ab)
            .collect();
        Ok(PriorNetwork {
            n_nodes,
            support,
            edges,
        })
    }

    /// Network with every node pair connected.
    pub fn complete(n_nodes: usize) -> Self {
        PriorNetwork {
            n_nodes,
            support: vec![true; edge_count(n_nodes)],
            edges: edge_pairs(n_nodes).collect(),
        }
    }

    /// Network with no edges.
    pub fn empty(n_nodes: usize) -> Self {
        PriorNetwork {
            n_nodes,
            support: vec![false; edge_count(n_nodes)],
            edges: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.support[edge_index(self.n_nodes, lo, hi)]
    }

    /// Supported pairs `(a, b)`, `a < b`, in edge-index order.
    pub fn support_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Support flags over all `E` edge slots.
    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn n_support_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn density(&self) -> f64 {
        if self.support.is_empty() {
            0.0
        } else {
            self.edges.len() as f64 / self.support.len() as f64
        }
    }
}

/// Nonnegative latent weights on the support edges of a [`PriorNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    omega: Vec<f64>,
}

impl LatentGraph {
    pub fn new(net: &PriorNetwork, omega: Vec<f64>) -> Result<Self> {
        if omega.len() != net.n_support_edges() {
            return Err(Error::dim(format!(
                "{} weights vs {} support edges",
                omega.len(),
                net.n_support_edges()
            )));
        }
        if omega.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("graph weights must be finite and >= 0"));
        }
        Ok(LatentGraph {
            n_nodes: net.n_nodes(),
            edges: net.support_edges().to_vec(),
            omega,
        })
    }

    pub fn zeros(net: &PriorNetwork) -> Self {
        LatentGraph {
            n_nodes: net.n_nodes(),
            edges: net.support_edges().to_vec(),
            omega: vec![0.0; net.n_support_edges()],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// `(a, b, omega)` triples in edge-index order.
    pub fn weighted_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges
            .iter()
            .zip(&self.omega)
            .map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn weights(&self) -> &[f64] {
        &self.omega
    }

    /// `Omega = I + sum_e omega_e L_e` with `L_e` the edge Laplacian. Rows sum
    /// to one by construction; diagonally dominant, hence positive definite.
    pub fn omega_matrix(&self) -> Array2<f64> {
        let mut m = Array2::eye(self.n_nodes);
        for (a, b, w) in self.weighted_edges() {
            m[[a, a]] += w;
            m[[b, b]] += w;
            m[[a, b]] -= w;
            m[[b, a]] -= w;
        }
        m
    }
}

/// Statistical hyperparameters of the NRSS prior.
///
/// `nu = 0` degenerates the node-rate prior to the point mass `alpha == psi`
/// (so every `lambda^g_v = e^psi`); the graph terms then drop from the
/// objective and `tau`/`eta` are unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Rate of the exponential prior on set scales `f_q`.
    pub lambda_f: f64,
    /// Rate of the Laplace prior on entry weights `h_{vp}`.
    pub lambda_h: f64,
    /// Center of the node log-rate prior.
    pub psi: f64,
    /// Scale of the node log-rate prior; `>= 0`.
    pub nu: f64,
    /// Gamma shape of the latent edge weights.
    pub tau: f64,
    /// Gamma rate of the latent edge weights.
    pub eta: f64,
    /// Lower bound kept on `sigma^2` to guard exact-fit degeneracy.
    #[serde(default = "default_sigma2_floor")]
    pub sigma2_floor: f64,
}

fn default_sigma2_floor() -> f64 {
    1e-10
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda_f: 1.0,
            lambda_h: 1.0,
            psi: 0.0,
            nu: 1.0,
            tau: 1.5,
            eta: 1.0,
            sigma2_floor: default_sigma2_floor(),
        }
    }
}

impl Hyperparams {
    pub fn new(lambda_f: f64, lambda_h: f64, psi: f64, nu: f64, tau: f64, eta: f64) -> Result<Self> {
        let h = Hyperparams {
            lambda_f,
            lambda_h,
            psi,
            nu,
            tau,
            eta,
            sigma2_floor: default_sigma2_floor(),
        };
        h.validate()?;
        Ok(h)
    }

    pub fn with_sigma2_floor(mut self, floor: f64) -> Result<Self> {
        self.sigma2_floor = floor;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.lambda_f,
            self.lambda_h,
            self.psi,
            self.nu,
            self.tau,
            self.eta,
            self.sigma2_floor,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("hyperparameters must be finite"));
        }
        if self.lambda_f <= 0.0 || self.lambda_h <= 0.0 {
            return Err(Error::invalid("lambda_f and lambda_h must be > 0"));
        }
        if self.nu < 0.0 {
            return Err(Error::invalid("nu must be >= 0"));
        }
        if self.tau <= 0.0 || self.eta <= 0.0 {
            return Err(Error::invalid("tau and eta must be > 0"));
        }
        if self.sigma2_floor <= 0.0 {
            return Err(Error::invalid("sigma2_floor must be > 0"));
        }
        Ok(())
    }
}

/// All free parameters of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Set scales, length `Q`; `>= 0`.
    pub f: Array1<f64>,
    /// Node scales, length `V`; `>= 0`.
    pub g: Array1<f64>,
    /// Entry weights, `V x P`.
    pub h: Array2<f64>,
    /// Intercept edges, length `E`.
    pub b0: Array1<f64>,
    /// Node log-rates, length `V`.
    pub alpha: Array1<f64>,
    /// Noise variance; `> 0`.
    pub sigma2: f64,
}

impl ModelParams {
    /// Zero-coefficient parameters sized for `data`.
    pub fn zeros(data: &Dataset) -> Self {
        ModelParams {
            f: Array1::zeros(data.n_sets()),
            g: Array1::zeros(data.n_nodes()),
            h: Array2::zeros((data.n_nodes(), data.n_predictors())),
            b0: Array1::zeros(data.n_edges()),
            alpha: Array1::zeros(data.n_nodes()),
            sigma2: 1.0,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.f.len() != data.n_sets()
            || self.g.len() != data.n_nodes()
            || self.h.nrows() != data.n_nodes()
            || self.h.ncols() != data.n_predictors()
            || self.b0.len() != data.n_edges()
            || self.alpha.len() != data.n_nodes()
        {
            return Err(Error::dim("parameter shapes do not match dataset"));
        }
        if self.f.iter().any(|v| !v.is_finite() || *v < 0.0)
            || self.g.iter().any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::invalid("f and g must be finite and >= 0"));
        }
        if self.h.iter().any(|v| !v.is_finite())
            || self.b0.iter().any(|v| !v.is_finite())
            || self.alpha.iter().any(|v| !v.is_finite())
        {
            return Err(Error::invalid("h, b0, alpha must be finite"));
        }
        if !self.sigma2.is_finite() || self.sigma2 <= 0.0 {
            return Err(Error::invalid("sigma2 must be finite and > 0"));
        }
        Ok(())
    }

    /// Assembles loadings `u_{vp} = f_{q(p)}^{1/2} g_v h_{vp}`.
    pub fn assemble_u(&self, set_of: &[usize]) -> Result<Array2<f64>> {
        if set_of.len() != self.h.ncols() {
            return Err(Error::dim(format!(
                "set map covers {} columns, h has {}",
                set_of.len(),
                self.h.ncols()
            )));
        }
        if let Some(&q) = set_of.iter().find(|&&q| q >= self.f.len()) {
            return Err(Error::dim(format!("set id {q} out of range")));
        }
        let mut u = self.h.clone();
        for (v, g) in self.g.iter().enumerate() {
            let mut row = u.row_mut(v);
            for (p, &q) in set_of.iter().enumerate() {
                row[p] *= self.f[q].sqrt() * g;
            }
        }
        Ok(u)
    }
}

/// Read-only coefficient access on assembled loadings.
#[derive(Debug, Clone, Copy)]
pub struct CoefficientView<'a> {
    u: ArrayView2<'a, f64>,
}

impl<'a> CoefficientView<'a> {
    pub fn new(u: ArrayView2<'a, f64>) -> Self {
        CoefficientView { u }
    }

    pub fn loadings(&self) -> ArrayView2<'a, f64> {
        self.u
    }

    pub fn n_nodes(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.u.ncols()
    }

    /// `B_p = u_p (x) u_p` as a full symmetric matrix. The diagonal is the
    /// literal outer-product value but is never part of the model.
    pub fn slice(&self, p: usize) -> Result<Array2<f64>> {
        if p >= self.u.ncols() {
            return Err(Error::invalid(format!("predictor {p} out of range")));
        }
        let col = self.u.column(p);
        let v = col.len();
        let mut b = Array2::zeros((v, v));
        for i in 0..v {
            for j in 0..v {
                b[[i, j]] = col[i] * col[j];
            }
        }
        Ok(b)
    }

    /// Flat coefficient `beta_{v v' p}`; symmetric in the node pair.
    pub fn beta(&self, v: usize, v2: usize, p: usize) -> f64 {
        self.u[[v, p]] * self.u[[v2, p]]
    }

    /// Strict upper triangle of `B_p` as an edge vector.
    pub fn slice_edges(&self, p: usize) -> Result<Array1<f64>> {
        if p >= self.u.ncols() {
            return Err(Error::invalid(format!("predictor {p} out of range")));
        }
        let col = self.u.column(p);
        let v = col.len();
        Ok(Array1::from_iter(
            edge_pairs(v).map(|(a, b)| col[a] * col[b]),
        ))
    }

    /// `max_{v<v'} |beta_{vv'p}|` per predictor, the per-predictor selection score.
    pub fn max_abs_beta_per_predictor(&self) -> Array1<f64> {
        let v = self.n_nodes();
        let mut out = Array1::zeros(self.n_predictors());
        for p in 0..self.n_predictors() {
            let col = self.u.column(p);
            let mut best: f64 = 0.0;
            for a in 0..v {
                if col[a] == 0.0 {
                    continue;
                }
                for b in (a + 1)..v {
                    best = best.max((col[a] * col[b]).abs());
                }
            }
            out[p] = best;
        }
        out
    }
}

/// Predicted edges for one predictor vector: `b0 + sum_p u_p (x) u_p x_p`.
pub fn predict_edges(
    u: &ArrayView2<'_, f64>,
    b0: &ArrayView1<'_, f64>,
    x: &ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let v = u.nrows();
    if x.len() != u.ncols() {
        return Err(Error::dim(format!(
            "predictor vector length {} vs {} columns",
            x.len(),
            u.ncols()
        )));
    }
    if b0.len() != edge_count(v) {
        return Err(Error::dim("intercept length mismatch"));
    }
    // (U . x) U^T restricted to the upper triangle.
    let scaled = u * x; // broadcasts x over rows
    let cross = scaled.dot(&u.t());
    let mut out = b0.to_owned();
    for (k, (a, b)) in edge_pairs(v).enumerate() {
        out[k] += cross[[a, b]];
    }
    Ok(out)
}

/// Full symmetric prediction with the non-modeled diagonal set to `NaN`.
pub fn predict_matrix(
    params: &ModelParams,
    set_of: &[usize],
    x: &ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    let u = params.assemble_u(set_of)?;
    let edges = predict_edges(&u.view(), &params.b0.view(), x)?;
    Ok(edges_to_symmetric(
        &edges.view(),
        params.g.len(),
        f64::NAN,
    ))
}

/// Sum of squared residuals over all subjects and edges.
pub fn sum_squared_residuals(data: &Dataset, u: &ArrayView2<'_, f64>, b0: &ArrayView1<'_, f64>) -> Result<f64> {
    let mut ssr = 0.0;
    for i in 0..data.n_subjects() {
        let pred = predict_edges(u, b0, &data.predictors().row(i))?;
        let responses = data.responses();
        let row = responses.row(i);
        ssr += row
            .iter()
            .zip(pred.iter())
            .map(|(a, p)| (a - p) * (a - p))
            .sum::<f64>();
    }
    Ok(ssr)
}

/// Negative log likelihood up to an additive constant.
pub fn neg_log_likelihood(data: &Dataset, params: &ModelParams) -> Result<f64> {
    params.validate(data)?;
    let u = params.assemble_u(data.set_of())?;
    let ssr = sum_squared_residuals(data, &u.view(), &params.b0.view())?;
    let n_obs = (data.n_subjects() * data.n_edges()) as f64;
    Ok(0.5 * n_obs * params.sigma2.ln() + ssr / (2.0 * params.sigma2))
}

/// Negative log posterior with the latent edge weights integrated out, up to
/// an additive constant independent of the parameters.
///
/// The graph part of the node-rate prior marginalizes edge by edge: the
/// quadratic form splits as `||alpha - psi||^2 + sum_e omega_e (alpha_a -
/// alpha_b)^2` and each `omega_e` integrates against its Gamma(tau, eta)
/// prior to `(1 + (alpha_a - alpha_b)^2 / (2 nu eta))^{-tau}` (determinant
/// factors cancel). With `nu = 0` the node rates are pinned at `psi` and the
/// graph terms vanish.
pub fn neg_log_posterior(
    data: &Dataset,
    net: &PriorNetwork,
    params: &ModelParams,
    hyper: &Hyperparams,
) -> Result<f64> {
    if net.n_nodes() != data.n_nodes() {
        return Err(Error::dim("network and dataset node counts differ"));
    }
    hyper.validate()?;
    if params.sigma2 <= 0.0 {
        return Err(Error::invalid("sigma2 must be > 0"));
    }
    params.validate(data)?;
    let u = params.assemble_u(data.set_of())?;
    let ssr = sum_squared_residuals(data, &u.view(), &params.b0.view())?;
    Ok(neg_log_posterior_from_parts(ssr, data, net, params, hyper))
}

/// Assembles the objective from a precomputed residual sum of squares.
/// Shared by [`neg_log_posterior`] and the solver's cached evaluation.
pub(crate) fn neg_log_posterior_from_parts(
    ssr: f64,
    data: &Dataset,
    net: &PriorNetwork,
    params: &ModelParams,
    hyper: &Hyperparams,
) -> f64 {
    let n_obs = (data.n_subjects() * data.n_edges()) as f64;
    let mut obj = 0.5 * n_obs * params.sigma2.ln() + ssr / (2.0 * params.sigma2);

    // Exponential set scales, covariate sets excluded.
    for q in 0..data.n_sets() {
        if !data.is_covariate_set(q) {
            obj += hyper.lambda_f * params.f[q];
        }
    }
    // Node scales given their log-rates: -(alpha_v - e^{alpha_v} g_v).
    for v in 0..data.n_nodes() {
        obj += params.alpha[v].exp() * params.g[v] - params.alpha[v];
    }
    // Laplace entry weights with per-column covariate overrides.
    let lambda_cols = data.lambda_h_columns(hyper.lambda_h);
    for (p, &lam) in lambda_cols.iter().enumerate() {
        obj += lam * params.h.column(p).iter().map(|h| h.abs()).sum::<f64>();
    }
    // InvGamma(1/2, 1/2) noise variance.
    obj += 1.5 * params.sigma2.ln() + 1.0 / (2.0 * params.sigma2);
    // Marginalized node-rate prior.
    if hyper.nu > 0.0 {
        for v in 0..data.n_nodes() {
            let d = params.alpha[v] - hyper.psi;
            obj += d * d / (2.0 * hyper.nu);
        }
        for &(a, b) in net.support_edges() {
            let d = params.alpha[a] - params.alpha[b];
            obj += hyper.tau * (d * d / (2.0 * hyper.nu * hyper.eta)).ln_1p();
        }
    }
    obj
}
