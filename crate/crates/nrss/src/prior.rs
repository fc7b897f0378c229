//! Prior-side tooling: analytic coefficient correlations, seeded prior
//! samplers, the Monte Carlo check table, marginal coefficient densities,
//! and the joint prior log-density.
//!
//! Coefficient entries are `beta_{vv'p} = f_{q(p)} g_v g_{v'} h_{vp} h_{v'p}`,
//! so `log|beta|` is a sum of independent log factors and the prior
//! correlation between two entries is the share of log-variance they share.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Hyperparams, LatentGraph, ModelParams};

/// Variances of the log factors of a coefficient entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorMoments {
    /// `Var(log f_q)`.
    pub sigma_f2: f64,
    /// `Var(log g_v)`.
    pub sigma_g2: f64,
    /// `Var(log |h_vp|)`.
    pub sigma_h2: f64,
}

impl PriorMoments {
    pub fn new(sigma_f2: f64, sigma_g2: f64, sigma_h2: f64) -> Result<Self> {
        if [sigma_f2, sigma_g2, sigma_h2]
            .iter()
            .any(|v| !v.is_finite() || *v <= 0.0)
        {
            return Err(Error::invalid("prior moments must be finite and > 0"));
        }
        Ok(PriorMoments {
            sigma_f2,
            sigma_g2,
            sigma_h2,
        })
    }

    /// Moments under the model's own factor laws. The log of an
    /// Exponential(rate) variable has variance `trigamma(1) = pi^2/6`
    /// whatever the rate, and `|Laplace(rate)|` is Exponential(rate), so all
    /// three moments coincide.
    pub fn homogeneous() -> Self {
        let t1 = std::f64::consts::PI.powi(2) / 6.0;
        PriorMoments {
            sigma_f2: t1,
            sigma_g2: t1,
            sigma_h2: t1,
        }
    }
}

/// Relative configuration of two coefficient entries `beta_{v1 v2 p}` and
/// `beta_{v3 v4 p'}` with all node labels distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationCase {
    /// Same node pair, same predictor (the unit case).
    SameEdgeSameP,
    /// Same node pair, different predictors of one set.
    SameEdgeSameSet,
    /// Same node pair, predictors of different sets.
    SameEdgeDifferentSet,
    /// One shared node, same predictor.
    SharedNodeSameP,
    /// One shared node, different predictors of one set.
    SharedNodeSameSet,
    /// One shared node, predictors of different sets.
    SharedNodeDifferentSet,
    /// Disjoint node pairs, different predictors of one set.
    DisjointNodesSameSet,
    /// Disjoint node pairs, predictors of different sets.
    DisjointNodesDifferentSet,
}

impl CorrelationCase {
    pub const ALL: [CorrelationCase; 8] = [
        CorrelationCase::SameEdgeSameP,
        CorrelationCase::SameEdgeSameSet,
        CorrelationCase::SameEdgeDifferentSet,
        CorrelationCase::SharedNodeSameP,
        CorrelationCase::SharedNodeSameSet,
        CorrelationCase::SharedNodeDifferentSet,
        CorrelationCase::DisjointNodesSameSet,
        CorrelationCase::DisjointNodesDifferentSet,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            CorrelationCase::SameEdgeSameP => "same-edge/same-p",
            CorrelationCase::SameEdgeSameSet => "same-edge/same-set",
            CorrelationCase::SameEdgeDifferentSet => "same-edge/different-set",
            CorrelationCase::SharedNodeSameP => "shared-node/same-p",
            CorrelationCase::SharedNodeSameSet => "shared-node/same-set",
            CorrelationCase::SharedNodeDifferentSet => "shared-node/different-set",
            CorrelationCase::DisjointNodesSameSet => "disjoint-nodes/same-set",
            CorrelationCase::DisjointNodesDifferentSet => "disjoint-nodes/different-set",
        }
    }
}

/// Prior correlation of `log|beta|` for two entries in the given
/// configuration, with shrinkage rates fixed homogeneously.
pub fn analytic_corr(case: CorrelationCase, m: &PriorMoments) -> f64 {
    let denom = m.sigma_f2 + 2.0 * m.sigma_g2 + 2.0 * m.sigma_h2;
    let shared = match case {
        CorrelationCase::SameEdgeSameP => denom,
        CorrelationCase::SameEdgeSameSet => m.sigma_f2 + 2.0 * m.sigma_g2,
        CorrelationCase::SameEdgeDifferentSet => 2.0 * m.sigma_g2,
        CorrelationCase::SharedNodeSameP => m.sigma_f2 + m.sigma_g2 + m.sigma_h2,
        CorrelationCase::SharedNodeSameSet => m.sigma_f2 + m.sigma_g2,
        CorrelationCase::SharedNodeDifferentSet => m.sigma_g2,
        CorrelationCase::DisjointNodesSameSet => m.sigma_f2,
        CorrelationCase::DisjointNodesDifferentSet => 0.0,
    };
    shared / denom
}

/// How node shrinkage rates are drawn when sampling the prior.
#[derive(Debug, Clone, Copy)]
pub enum RateMode<'a> {
    /// Every node uses the fixed rate `e^psi` (the Proposition-1 setting).
    Homogeneous,
    /// Node log-rates are drawn from `N(psi 1, nu Omega^{-1})` with `Omega`
    /// assembled from the supplied latent graph.
    Hierarchical(&'a LatentGraph),
}

/// Materialized prior draws.
#[derive(Debug, Clone)]
pub struct PriorDraws {
    /// `n x Q` set scales.
    pub f: Array2<f64>,
    /// `n x V` node scales.
    pub g: Array2<f64>,
    /// `n x V x P` entry weights.
    pub h: Array3<f64>,
    set_of: Vec<usize>,
}

impl PriorDraws {
    pub fn n_draws(&self) -> usize {
        self.f.nrows()
    }

    /// Loadings `u = f^{1/2} g h` of one draw.
    pub fn loadings(&self, draw: usize) -> Array2<f64> {
        let (v, p) = (self.g.ncols(), self.h.shape()[2]);
        let mut u = Array2::zeros((v, p));
        for vv in 0..v {
            for pp in 0..p {
                u[[vv, pp]] = self.f[[draw, self.set_of[pp]]].sqrt()
                    * self.g[[draw, vv]]
                    * self.h[[draw, vv, pp]];
            }
        }
        u
    }

    pub fn set_of(&self) -> &[usize] {
        &self.set_of
    }
}

fn laplace(rng: &mut impl Rng, rate: f64) -> f64 {
    // Inverse CDF on u ~ U(-1/2, 1/2): x = -sign(u) ln(1 - 2|u|) / rate.
    let u: f64 = rng.random::<f64>() - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln() / rate
}

/// I.i.d. draws of `(f, g, H)` from the NRSS prior; deterministic per seed.
pub fn sample_prior(
    hyper: &Hyperparams,
    n_nodes: usize,
    set_of: &[usize],
    mode: RateMode<'_>,
    n_draws: usize,
    seed: u64,
) -> Result<PriorDraws> {
    hyper.validate()?;
    if n_nodes == 0 || set_of.is_empty() || n_draws == 0 {
        return Err(Error::invalid("dims and draw count must be positive"));
    }
    let n_sets = set_of.iter().max().map_or(0, |m| m + 1);
    if let RateMode::Hierarchical(graph) = mode {
        if graph.n_nodes() != n_nodes {
            return Err(Error::dim("latent graph node count mismatch"));
        }
        if hyper.nu == 0.0 {
            return Err(Error::invalid("hierarchical sampling needs nu > 0"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp_f = Exp::new(hyper.lambda_f).map_err(|e| Error::invalid(e.to_string()))?;
    let mut f = Array2::zeros((n_draws, n_sets));
    let mut g = Array2::zeros((n_draws, n_nodes));
    let mut h = Array3::zeros((n_draws, n_nodes, set_of.len()));

    // Factor for hierarchical alpha draws: with Omega = L L^T, solving
    // L^T x = z gives Cov(x) = Omega^{-1}.
    let chol = match mode {
        RateMode::Hierarchical(graph) => Some(
            linalg::cholesky(&graph.omega_matrix())
                .ok_or_else(|| Error::numerical("Omega not positive definite"))?,
        ),
        RateMode::Homogeneous => None,
    };

    let mut z = Array1::zeros(n_nodes);
    for d in 0..n_draws {
        for q in 0..n_sets {
            f[[d, q]] = exp_f.sample(&mut rng);
        }
        match &chol {
            None => {
                let rate = hyper.psi.exp();
                let exp_g = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
                for v in 0..n_nodes {
                    g[[d, v]] = exp_g.sample(&mut rng);
                }
            }
            Some(l) => {
                for v in 0..n_nodes {
                    z[v] = rng.sample(StandardNormal);
                }
                let alpha = linalg::solve_upper_transposed(l, &z);
                for v in 0..n_nodes {
                    let rate = (hyper.psi + hyper.nu.sqrt() * alpha[v]).exp();
                    let exp_g = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
                    g[[d, v]] = exp_g.sample(&mut rng);
                }
            }
        }
        for v in 0..n_nodes {
            for p in 0..set_of.len() {
                h[[d, v, p]] = laplace(&mut rng, hyper.lambda_h);
            }
        }
    }
    Ok(PriorDraws {
        f,
        g,
        h,
        set_of: set_of.to_vec(),
    })
}

/// Streaming correlation accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct CorrAcc {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl CorrAcc {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    fn corr(&self) -> f64 {
        let cov = self.sxy / self.n - (self.sx / self.n) * (self.sy / self.n);
        let vx = self.sxx / self.n - (self.sx / self.n).powi(2);
        let vy = self.syy / self.n - (self.sy / self.n).powi(2);
        cov / (vx * vy).sqrt()
    }
}

/// One row of the Proposition-1 verification table.
#[derive(Debug, Clone, Serialize)]
pub struct CaseRow {
    pub case: CorrelationCase,
    pub analytic: f64,
    pub monte_carlo: f64,
}

/// Monte Carlo correlations of `log|beta|` pairs for all eight cases,
/// sampled on the minimal configuration that realizes them (four nodes,
/// three predictors, two sets), against the analytic values.
pub fn proposition_table(hyper: &Hyperparams, n_draws: usize, seed: u64) -> Result<Vec<CaseRow>> {
    hyper.validate()?;
    if n_draws < 2 {
        return Err(Error::invalid("need at least 2 draws"));
    }
    let moments = PriorMoments::homogeneous();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp_f = Exp::new(hyper.lambda_f).map_err(|e| Error::invalid(e.to_string()))?;
    let exp_g = Exp::new(hyper.psi.exp()).map_err(|e| Error::invalid(e.to_string()))?;

    let mut accs = [CorrAcc::default(); 8];
    // Nodes 0..4; predictors p0, p1 in set 0 and p2 in set 1.
    for _ in 0..n_draws {
        let lf = [exp_f.sample(&mut rng).ln(), exp_f.sample(&mut rng).ln()];
        let lg: [f64; 4] = std::array::from_fn(|_| exp_g.sample(&mut rng).ln());
        let lh: [[f64; 3]; 4] =
            std::array::from_fn(|_| std::array::from_fn(|_| laplace(&mut rng, hyper.lambda_h).abs().ln()));
        let set = [0usize, 0, 1];
        let log_beta =
            |a: usize, b: usize, p: usize| lf[set[p]] + lg[a] + lg[b] + lh[a][p] + lh[b][p];

        let pairs: [((usize, usize, usize), (usize, usize, usize)); 8] = [
            ((0, 1, 0), (0, 1, 0)),
            ((0, 1, 0), (0, 1, 1)),
            ((0, 1, 0), (0, 1, 2)),
            ((0, 2, 0), (1, 2, 0)),
            ((0, 2, 0), (1, 2, 1)),
            ((0, 2, 0), (1, 2, 2)),
            ((0, 1, 0), (2, 3, 1)),
            ((0, 1, 0), (2, 3, 2)),
        ];
        for (acc, ((a1, b1, p1), (a2, b2, p2))) in accs.iter_mut().zip(pairs) {
            acc.push(log_beta(a1, b1, p1), log_beta(a2, b2, p2));
        }
    }

    Ok(CorrelationCase::ALL
        .iter()
        .zip(accs.iter())
        .map(|(&case, acc)| CaseRow {
            case,
            analytic: analytic_corr(case, &moments),
            monte_carlo: acc.corr(),
        })
        .collect())
}

/// Draws of a single loading `u = f^{1/2} g h` under the prior. With
/// `nu > 0` the node rate is re-drawn per sample as `e^alpha`,
/// `alpha ~ N(psi, nu)` (an isolated node, no graph coupling).
pub fn sample_coefficients(hyper: &Hyperparams, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    hyper.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("need at least 1 sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp_f = Exp::new(hyper.lambda_f).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let rate_g = if hyper.nu > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            (hyper.psi + hyper.nu.sqrt() * z).exp()
        } else {
            hyper.psi.exp()
        };
        let f: f64 = exp_f.sample(&mut rng);
        let g: f64 = Exp::new(rate_g)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(&mut rng);
        let h = laplace(&mut rng, hyper.lambda_h);
        out.push(f.sqrt() * g * h);
    }
    Ok(out)
}

/// Gaussian-kernel density estimate on a fixed grid.
#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
}

/// Kernel estimate of the marginal density of a single coefficient loading.
/// Silverman's bandwidth; symmetric in `beta` up to Monte Carlo error.
pub fn marginal_coeff_density(
    hyper: &Hyperparams,
    grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<DensityEstimate> {
    if grid.is_empty() {
        return Err(Error::invalid("density grid is empty"));
    }
    if grid.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("density grid must be finite"));
    }
    if n_samples < 100_000 {
        return Err(Error::invalid("density estimation needs >= 1e5 samples"));
    }
    let samples = sample_coefficients(hyper, n_samples, seed)?;
    let bandwidth = silverman_bandwidth(&samples);
    if !(bandwidth > 0.0) {
        return Err(Error::numerical("degenerate density bandwidth"));
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * bandwidth * n_samples as f64);
    let density = grid
        .iter()
        .map(|&b| {
            let mut acc = 0.0;
            for s in &samples {
                let z = (b - s) / bandwidth;
                acc += (-0.5 * z * z).exp();
            }
            acc * norm
        })
        .collect();
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        density,
        bandwidth,
        n_samples,
    })
}

/// `0.9 min(sd, iqr/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    0.9 * sd.min(iqr / 1.34) * n.powf(-0.2)
}

/// Linear-interpolation quantile of pre-sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Joint log prior density of `(f, g, H, sigma^2)` given the node log-rates,
/// up to an additive constant:
/// `-sum_q lambda_f f_q + sum_v (alpha_v - e^{alpha_v} g_v)
///  - lambda_h sum |h| - (3/2) log sigma^2 - 1/(2 sigma^2)`.
pub fn prior_log_density(params: &ModelParams, hyper: &Hyperparams) -> Result<f64> {
    hyper.validate()?;
    if params.f.iter().any(|v| *v < 0.0) || params.g.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("f and g must be >= 0"));
    }
    if !(params.sigma2 > 0.0) {
        return Err(Error::invalid("sigma2 must be > 0"));
    }
    let mut ld = -hyper.lambda_f * params.f.sum();
    for v in 0..params.g.len() {
        ld += params.alpha[v] - params.alpha[v].exp() * params.g[v];
    }
    ld -= hyper.lambda_h * params.h.iter().map(|h| h.abs()).sum::<f64>();
    ld -= 1.5 * params.sigma2.ln() + 1.0 / (2.0 * params.sigma2);
    Ok(ld)
}
