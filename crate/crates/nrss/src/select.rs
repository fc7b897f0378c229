//! Model selection and evaluation: data splitting, validation grid search,
//! stability selection with the Meinshausen-Buhlmann error bound, and the
//! accuracy metrics used to score fits against a known generating model.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::edges::edge_pairs;
use crate::model::{predict_edges, CoefficientView, Dataset, Hyperparams, ModelParams, PriorNetwork};
use crate::simgen::GroundTruth;
use crate::solver::{fit, FitOptions};
use crate::{Error, Result};

/// Disjoint subject groups drawn uniformly at random. Group k receives
/// `sizes[k]` subjects; any remainder stays unassigned.
pub fn split(n_subjects: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let total: usize = sizes.iter().sum();
    if total > n_subjects {
        return Err(Error::invalid(format!(
            "split sizes sum to {total} but only {n_subjects} subjects exist"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("split sizes must be positive"));
    }
    let mut order: Vec<usize> = (0..n_subjects).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_subjects.saturating_sub(1) {
        let j = rng.random_range(i..n_subjects);
        order.swap(i, j);
    }
    let mut groups = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in sizes {
        let mut g: Vec<usize> = order[at..at + s].to_vec();
        g.sort_unstable();
        groups.push(g);
        at += s;
    }
    Ok(groups)
}

/// Mean squared prediction error of `params` on held-out data.
pub fn mspe(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let u = params.assemble_u(data.set_of())?;
    let mut total = 0.0;
    for i in 0..data.n_subjects() {
        let pred = predict_edges(&u.view(), &params.b0.view(), &data.predictors().row(i))?;
        let responses = data.responses();
        let row = responses.row(i);
        total += row
            .iter()
            .zip(pred.iter())
            .map(|(a, p)| (a - p) * (a - p))
            .sum::<f64>();
    }
    Ok(total / (data.n_subjects() * data.n_edges()) as f64)
}

/// One grid cell: the penalty pair plus either a validation score or the
/// failure it produced.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub lambda_h: f64,
    pub lambda_f: f64,
    pub mspe: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    /// Successful cells first, ascending validation MSPE. Ties prefer the
    /// stronger penalty (larger lambda_h, then larger lambda_f). Failed
    /// cells follow in grid order.
    pub entries: Vec<GridPoint>,
}

impl GridSearchResult {
    /// The winning penalty pair, if any fit succeeded.
    pub fn best(&self) -> Option<(f64, f64)> {
        self.entries
            .first()
            .filter(|e| e.mspe.is_some())
            .map(|e| (e.lambda_h, e.lambda_f))
    }

    pub fn n_failed(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }
}

/// Fits every (lambda_h, lambda_f) combination on `train` and scores it on
/// `validation`. Individual fit failures are recorded, not fatal.
pub fn grid_search(
    train: &Dataset,
    validation: &Dataset,
    net: &PriorNetwork,
    base: &Hyperparams,
    opts: &FitOptions,
    lambda_h_grid: &[f64],
    lambda_f_grid: &[f64],
    workers: usize,
) -> Result<GridSearchResult> {
    if lambda_h_grid.is_empty() || lambda_f_grid.is_empty() {
        return Err(Error::invalid("penalty grids must be non-empty"));
    }
    if train.set_of() != validation.set_of() {
        return Err(Error::invalid("train and validation use different SNP sets"));
    }
    let mut combos = Vec::new();
    for &lh in lambda_h_grid {
        for &lf in lambda_f_grid {
            combos.push((lh, lf));
        }
    }
    let pool = worker_pool(workers)?;
    let mut entries: Vec<GridPoint> = pool.install(|| {
        combos
            .par_iter()
            .map(|&(lh, lf)| {
                let cell = Hyperparams::new(lf, lh, base.psi, base.nu, base.tau, base.eta)
                    .and_then(|h| h.with_sigma2_floor(base.sigma2_floor))
                    .and_then(|h| fit(train, net, &h, opts))
                    .and_then(|r| mspe(&r.params, validation));
                match cell {
                    Ok(score) => GridPoint {
                        lambda_h: lh,
                        lambda_f: lf,
                        mspe: Some(score),
                        error: None,
                    },
                    Err(e) => GridPoint {
                        lambda_h: lh,
                        lambda_f: lf,
                        mspe: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    entries.sort_by(|a, b| match (a.mspe, b.mspe) {
        (Some(x), Some(y)) => x
            .partial_cmp(&y)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.lambda_h.partial_cmp(&a.lambda_h).unwrap())
            .then_with(|| b.lambda_f.partial_cmp(&a.lambda_f).unwrap()),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(GridSearchResult { entries })
}

#[derive(Debug, Clone)]
pub struct StabilityOptions {
    pub n_runs: usize,
    /// Subjects per subsample; 0 means floor(N / 2).
    pub subsample: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            n_runs: 100,
            subsample: 0,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityResult {
    /// Selection frequency per (edge, predictor) over completed runs.
    pub freq_edge: Array2<f64>,
    /// Frequency with which each SNP had any selected edge coefficient.
    pub freq_snp: Array1<f64>,
    /// Average number of SNPs selected per completed run.
    pub q_bar: f64,
    pub n_completed: usize,
    /// Run index and fit wall time for each completed run.
    pub run_times: Vec<(usize, f64)>,
    /// Run index and error text for each failed run.
    pub failures: Vec<(usize, String)>,
}

/// Refits the model on random subject subsamples and tallies how often each
/// coefficient is exactly nonzero. Failed runs are dropped and frequencies
/// are averaged over the runs that completed.
pub fn stability(
    data: &Dataset,
    net: &PriorNetwork,
    hyper: &Hyperparams,
    opts: &FitOptions,
    sopts: &StabilityOptions,
) -> Result<StabilityResult> {
    if sopts.n_runs == 0 {
        return Err(Error::invalid("need at least one stability run"));
    }
    let m = if sopts.subsample == 0 {
        data.n_subjects() / 2
    } else {
        sopts.subsample
    };
    if m == 0 || m > data.n_subjects() {
        return Err(Error::invalid(format!(
            "subsample size {m} out of range for {} subjects",
            data.n_subjects()
        )));
    }
    let mut master = ChaCha8Rng::seed_from_u64(sopts.seed);
    let run_seeds: Vec<u64> = (0..sopts.n_runs).map(|_| master.next_u64()).collect();

    let ne = data.n_edges();
    let np = data.n_predictors();
    let pool = worker_pool(sopts.workers)?;
    let runs: Vec<std::result::Result<(Vec<(usize, usize)>, usize, f64), String>> =
        pool.install(|| {
            run_seeds
                .par_iter()
                .map(|&rs| one_stability_run(data, net, hyper, opts, m, rs, ne))
                .collect()
        });

    let mut counts = Array2::<f64>::zeros((ne, np));
    let mut snp_counts = Array1::<f64>::zeros(np);
    let mut q_total = 0usize;
    let mut n_completed = 0usize;
    let mut run_times = Vec::new();
    let mut failures = Vec::new();
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok((selected, q, secs)) => {
                n_completed += 1;
                q_total += q;
                run_times.push((k, secs));
                let mut snp_hit = vec![false; np];
                for (e, p) in selected {
                    counts[[e, p]] += 1.0;
                    snp_hit[p] = true;
                }
                for (p, hit) in snp_hit.iter().enumerate() {
                    if *hit {
                        snp_counts[p] += 1.0;
                    }
                }
            }
            Err(msg) => failures.push((k, msg)),
        }
    }
    if n_completed == 0 {
        return Err(Error::numerical("every stability run failed"));
    }
    let denom = n_completed as f64;
    Ok(StabilityResult {
        freq_edge: counts / denom,
        freq_snp: snp_counts / denom,
        q_bar: q_total as f64 / denom,
        n_completed,
        run_times,
        failures,
    })
}

fn one_stability_run(
    data: &Dataset,
    net: &PriorNetwork,
    hyper: &Hyperparams,
    opts: &FitOptions,
    m: usize,
    run_seed: u64,
    ne: usize,
) -> std::result::Result<(Vec<(usize, usize)>, usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let n = data.n_subjects();
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..m.min(n - 1) {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut subjects = order[..m].to_vec();
    subjects.sort_unstable();

    let mut run_opts = opts.clone();
    run_opts.seed = rng.next_u64();
    let sub = data.subset(&subjects).map_err(|e| e.to_string())?;
    let result = fit(&sub, net, hyper, &run_opts).map_err(|e| e.to_string())?;
    let u = result
        .params
        .assemble_u(sub.set_of())
        .map_err(|e| e.to_string())?;

    let mut selected = Vec::new();
    let mut snp_any = vec![false; data.n_predictors()];
    for p in 0..data.n_predictors() {
        let col = u.column(p);
        for (e, (a, b)) in edge_pairs(data.n_nodes()).enumerate() {
            debug_assert!(e < ne);
            if col[a] != 0.0 && col[b] != 0.0 {
                selected.push((e, p));
                snp_any[p] = true;
            }
        }
    }
    let q = snp_any.iter().filter(|&&h| h).count();
    Ok((selected, q, result.wall_time.as_secs_f64()))
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::numerical(format!("could not build worker pool: {e}")))
}

/// Smallest threshold in (0.5, 1] whose expected number of falsely selected
/// variables, `q_bar^2 / ((2 pi - 1) P)`, stays at or below `target_ev`.
/// Returns 1 when no threshold in range achieves it.
pub fn threshold_for_expected_false(q_bar: f64, n_predictors: usize, target_ev: f64) -> f64 {
    if !(target_ev > 0.0) || n_predictors == 0 || !(q_bar >= 0.0) {
        return 1.0;
    }
    let pi = 0.5 * (1.0 + q_bar * q_bar / (n_predictors as f64 * target_ev));
    if pi > 1.0 {
        1.0
    } else {
        pi
    }
}

/// Smallest threshold in (0.5, 1] for which the error bound divided by the
/// number of variables it would select stays at or below `target_fdr`.
/// Returns 1 when no threshold in range achieves it.
pub fn threshold_mb(freq_snp: &[f64], q_bar: f64, target_fdr: f64) -> f64 {
    let p = freq_snp.len();
    if p == 0 || !(target_fdr > 0.0) {
        return 1.0;
    }
    // The selected count is piecewise constant between observed frequencies;
    // within each region the bound decreases in pi, so the smallest feasible
    // threshold there is the bound's own crossing point.
    let mut cuts: Vec<f64> = freq_snp.iter().copied().filter(|&f| f > 0.5).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let mut best = f64::INFINITY;
    let mut lo = 0.5;
    for &cut in &cuts {
        // Any pi in (lo, cut] selects exactly the SNPs with frequency >= cut.
        let n_sel = freq_snp.iter().filter(|&&f| f >= cut).count() as f64;
        let crossing = 0.5 * (1.0 + q_bar * q_bar / (p as f64 * n_sel * target_fdr));
        let candidate = crossing.max(next_above(lo));
        if candidate <= cut && candidate <= 1.0 {
            best = best.min(candidate);
        }
        lo = cut;
    }
    if best.is_finite() {
        best
    } else {
        1.0
    }
}

fn next_above(x: f64) -> f64 {
    // Smallest representable value strictly greater than x.
    f64::from_bits(x.to_bits() + 1)
}

/// Sparse true coefficient tensor for evaluation: edge-ordered slices for
/// the risk SNPs (zero slices are kept so the risk set survives round
/// trips), everything else implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTensor {
    n_nodes: usize,
    n_predictors: usize,
    slices: std::collections::BTreeMap<usize, Array1<f64>>,
}

impl TruthTensor {
    pub fn new(
        n_nodes: usize,
        n_predictors: usize,
        slices: std::collections::BTreeMap<usize, Array1<f64>>,
    ) -> Result<Self> {
        let ne = crate::edges::edge_count(n_nodes);
        for (&p, slice) in &slices {
            if p >= n_predictors {
                return Err(Error::invalid(format!("risk SNP {p} out of range")));
            }
            if slice.len() != ne {
                return Err(Error::dim(format!(
                    "slice for SNP {p} has {} edges, expected {ne}",
                    slice.len()
                )));
            }
        }
        Ok(TruthTensor { n_nodes, n_predictors, slices })
    }

    pub fn from_ground_truth(truth: &GroundTruth) -> Self {
        let slices = truth
            .risk_snps()
            .into_iter()
            .map(|p| (p, truth.beta_edges(p)))
            .collect();
        TruthTensor {
            n_nodes: truth.n_nodes(),
            n_predictors: truth.n_predictors(),
            slices,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_predictors(&self) -> usize {
        self.n_predictors
    }

    pub fn risk_snps(&self) -> Vec<usize> {
        self.slices.keys().copied().collect()
    }

    pub fn is_risk(&self, p: usize) -> bool {
        self.slices.contains_key(&p)
    }

    /// Edge-ordered slice; `None` for non-risk SNPs (implicitly zero).
    pub fn slice_edges(&self, p: usize) -> Option<&Array1<f64>> {
        self.slices.get(&p)
    }

    pub fn beta(&self, p: usize, e: usize) -> f64 {
        self.slices.get(&p).map_or(0.0, |s| s[e])
    }
}

/// Rank-sum AUC with tied-rank averaging. `None` when labels are all one
/// class (the score is undefined there).
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    // Average ranks across ties, then Mann-Whitney.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Some((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Mean squared coefficient error over every (edge, predictor) pair.
pub fn mse_b(params: &ModelParams, set_of: &[usize], truth: &TruthTensor) -> Result<f64> {
    let u = params.assemble_u(set_of)?;
    let view = CoefficientView::new(u.view());
    if view.n_nodes() != truth.n_nodes() || set_of.len() != truth.n_predictors() {
        return Err(Error::dim("estimate and truth have different shapes"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..set_of.len() {
        for (e, (a, b)) in edge_pairs(view.n_nodes()).enumerate() {
            let d = view.beta(a, b, p) - truth.beta(p, e);
            total += d * d;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// AUC for edge-level support recovery, scoring |beta| (or any per-(edge,
/// predictor) score matrix) against the true nonzero pattern.
pub fn auc_b(scores: &Array2<f64>, truth: &TruthTensor) -> Result<Option<f64>> {
    let ne = crate::edges::edge_count(truth.n_nodes());
    if scores.nrows() != ne || scores.ncols() != truth.n_predictors() {
        return Err(Error::dim("score matrix shape mismatch"));
    }
    let mut s = Vec::with_capacity(ne * truth.n_predictors());
    let mut l = Vec::with_capacity(ne * truth.n_predictors());
    for p in 0..truth.n_predictors() {
        for e in 0..ne {
            s.push(scores[[e, p]]);
            l.push(truth.beta(p, e) != 0.0);
        }
    }
    Ok(auc(&s, &l))
}

/// AUC for SNP-level recovery, scoring a per-SNP vector (max |beta| over
/// edges, or a stability frequency) against risk-set membership.
pub fn auc_snp(scores: &Array1<f64>, truth: &TruthTensor) -> Result<Option<f64>> {
    if scores.len() != truth.n_predictors() {
        return Err(Error::dim("per-SNP score length mismatch"));
    }
    let labels: Vec<bool> = (0..truth.n_predictors()).map(|p| truth.is_risk(p)).collect();
    Ok(auc(scores.as_slice().unwrap(), &labels))
}

/// |beta| summary matrix (E x P) for a fitted parameter set.
pub fn abs_beta_matrix(params: &ModelParams, set_of: &[usize]) -> Result<Array2<f64>> {
    let u = params.assemble_u(set_of)?;
    let view = CoefficientView::new(u.view());
    let ne = crate::edges::edge_count(view.n_nodes());
    let mut out = Array2::zeros((ne, set_of.len()));
    for p in 0..set_of.len() {
        for (e, (a, b)) in edge_pairs(view.n_nodes()).enumerate() {
            out[[e, p]] = view.beta(a, b, p).abs();
        }
    }
    Ok(out)
}

/// Classification counts at a fixed decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_decisions(selected: &[bool], truth: &[bool]) -> Self {
        assert_eq!(selected.len(), truth.len());
        let mut c = Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 };
        for (&s, &t) in selected.iter().zip(truth) {
            match (s, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// Thresholds scores at `>= cut` and compares to the truth labels.
    pub fn at_threshold(scores: &[f64], cut: f64, truth: &[bool]) -> Self {
        let selected: Vec<bool> = scores.iter().map(|&s| s >= cut).collect();
        Confusion::from_decisions(&selected, truth)
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// False discovery proportion; 0 when nothing is selected.
    pub fn fdr(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.fp as f64 / (self.tp + self.fp) as f64
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}
