//! Synthetic data generation: block-correlated genotypes, SNP-set detection,
//! sparse clique (or rank-3) coefficient tensors, Gaussian connectome
//! responses, and prior-network construction with optional corruption.
//!
//! Every generator is a pure function of its configuration and seed.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal, Uniform};
use statrs::distribution::{ContinuousCDF, Normal as Gaussian};

use crate::edges::{edge_count, edge_index, edge_pairs};
use crate::model::{Dataset, PriorNetwork};
use crate::{Error, Result};

/// Block-LD genotype generator settings. Each SNP is the sum of two
/// haplotype indicator draws; within a block the latent Gaussians share an
/// equicorrelation `rho`, across blocks they are independent.
#[derive(Debug, Clone)]
pub struct GenotypeConfig {
    pub n_subjects: usize,
    pub block_sizes: Vec<usize>,
    /// Within-block latent correlation, in [0, 1).
    pub rho: f64,
    /// Minor allele frequency range, within (0, 0.5].
    pub maf_lo: f64,
    pub maf_hi: f64,
    pub seed: u64,
}

impl GenotypeConfig {
    /// Blocks of equal size `block` covering `n_predictors`, the last block
    /// absorbing any remainder.
    pub fn uniform_blocks(
        n_subjects: usize,
        n_predictors: usize,
        block: usize,
        rho: f64,
        maf_lo: f64,
        maf_hi: f64,
        seed: u64,
    ) -> Result<Self> {
        if block == 0 || n_predictors == 0 {
            return Err(Error::invalid("need positive block size and predictor count"));
        }
        let mut block_sizes = vec![block; n_predictors / block];
        let rem = n_predictors % block;
        if rem > 0 {
            block_sizes.push(rem);
        }
        let cfg = GenotypeConfig {
            n_subjects,
            block_sizes,
            rho,
            maf_lo,
            maf_hi,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_predictors(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::invalid("need at least one subject"));
        }
        if self.block_sizes.is_empty() || self.block_sizes.iter().any(|&b| b == 0) {
            return Err(Error::invalid("block sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid("rho must be in [0, 1)"));
        }
        if !(self.maf_lo > 0.0 && self.maf_hi <= 0.5 && self.maf_lo <= self.maf_hi) {
            return Err(Error::invalid(
                "allele frequency range must satisfy 0 < lo <= hi <= 0.5",
            ));
        }
        Ok(())
    }
}

/// Allele dosages in {0, 1, 2}: two haplotypes per subject, each haplotype
/// carrying the minor allele at SNP j when its latent Gaussian falls below
/// the quantile of that SNP's frequency.
pub fn gen_genotypes(cfg: &GenotypeConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = cfg.n_subjects;
    let p = cfg.n_predictors();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = Gaussian::standard();
    let maf_dist = Uniform::new_inclusive(cfg.maf_lo, cfg.maf_hi)
        .map_err(|e| Error::invalid(format!("bad allele frequency range: {e}")))?;
    // Per-SNP frequency, then its latent threshold.
    let cuts: Vec<f64> = (0..p)
        .map(|_| gauss.inverse_cdf(rng.sample(maf_dist)))
        .collect();

    let sr = cfg.rho.sqrt();
    let se = (1.0 - cfg.rho).sqrt();
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for _hap in 0..2 {
            let mut j = 0;
            for &bs in &cfg.block_sizes {
                let shared: f64 = rng.sample(StandardNormal);
                for _ in 0..bs {
                    let z = sr * shared + se * rng.sample::<f64, _>(StandardNormal);
                    if z < cuts[j] {
                        x[[i, j]] += 1.0;
                    }
                    j += 1;
                }
            }
        }
    }
    Ok(x)
}

/// Contiguous SNP-set detection by a shrinking-window r² scan: from each
/// start, the largest window size w <= init_window for which more than
/// `fraction` of the pairwise r² values exceed `r2_threshold` becomes a
/// block; if no size >= 2 qualifies, the SNP is a singleton.
///
/// Returns the set id per SNP (contiguous ids starting at 0).
pub fn detect_snp_sets(
    x: &Array2<f64>,
    r2_threshold: f64,
    init_window: usize,
    fraction: f64,
) -> Result<Vec<usize>> {
    let n = x.nrows();
    let p = x.ncols();
    if n < 30 {
        return Err(Error::invalid(
            "need at least 30 subjects for stable r2 estimates",
        ));
    }
    if p == 0 {
        return Err(Error::invalid("no SNP columns"));
    }
    if !(r2_threshold >= 0.0) || !(0.0..1.0).contains(&fraction) || init_window < 2 {
        return Err(Error::invalid("bad detection parameters"));
    }

    // Normalize columns to zero mean, unit norm; constant columns become
    // zero (correlation treated as 0).
    let mut z = x.clone();
    for mut col in z.columns_mut() {
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }

    let mut set_of = vec![0usize; p];
    let mut q = 0usize;
    let mut start = 0usize;
    while start < p {
        let maxw = init_window.min(p - start);
        let mut chosen = 1usize;
        if maxw >= 2 {
            let zwin = z.slice(s![.., start..start + maxw]);
            let corr = zwin.t().dot(&zwin); // maxw x maxw
            // high[k] = number of pairs (j < k') with k' <= k whose r2 beats
            // the threshold, built incrementally by leading submatrix.
            let mut cum = vec![0usize; maxw + 1];
            let mut cnt = 0usize;
            for k in 1..maxw {
                for j in 0..k {
                    let r = corr[[j, k]];
                    if r * r > r2_threshold {
                        cnt += 1;
                    }
                }
                cum[k + 1] = cnt;
            }
            for w in (2..=maxw).rev() {
                let pairs = (w * (w - 1) / 2) as f64;
                if cum[w] as f64 > fraction * pairs {
                    chosen = w;
                    break;
                }
            }
        }
        for item in set_of.iter_mut().skip(start).take(chosen) {
            *item = q;
        }
        q += 1;
        start += chosen;
    }
    Ok(set_of)
}

/// Which sets carry signal and how many risk SNPs each contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalPattern {
    /// Two sets with 50 risk SNPs each.
    P1,
    /// Ten sets with 10 risk SNPs each.
    P2,
    /// Arbitrary: `n_sets` sets with `per_set` risk SNPs each.
    Sets { n_sets: usize, per_set: usize },
}

impl SignalPattern {
    fn layout(&self) -> (usize, usize) {
        match *self {
            SignalPattern::P1 => (2, 50),
            SignalPattern::P2 => (10, 10),
            SignalPattern::Sets { n_sets, per_set } => (n_sets, per_set),
        }
    }
}

/// How the nonzero support and values of each clique vector are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectMode {
    /// Fixed fraction of nodes nonzero; values Normal(0, variance).
    Fraction { fraction: f64, variance: f64 },
    /// Nonzero count Poisson(mean), truncated to [1, V]; values
    /// Normal(0, variance).
    Poisson { mean: f64, variance: f64 },
}

/// Rank structure of the true coefficient slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceStructure {
    /// Rank-1 outer products (the model's own assumption).
    Clique,
    /// Sum of three independent rank-1 terms.
    Rank3,
}

#[derive(Debug, Clone)]
pub struct SignalSpec {
    pub pattern: SignalPattern,
    pub n_nodes: usize,
    pub structure: SliceStructure,
    pub effect: EffectMode,
    pub seed: u64,
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::invalid("need at least 2 nodes"));
        }
        let (ns, per) = self.pattern.layout();
        if ns == 0 || per == 0 {
            return Err(Error::invalid("pattern must select at least one risk SNP"));
        }
        match self.effect {
            EffectMode::Fraction { fraction, variance } => {
                if !(fraction > 0.0 && fraction <= 1.0) || !(variance > 0.0) {
                    return Err(Error::invalid("fraction in (0,1] and variance > 0 required"));
                }
            }
            EffectMode::Poisson { mean, variance } => {
                if !(mean > 0.0) || !(variance > 0.0) {
                    return Err(Error::invalid("Poisson mean and variance must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// True generating parameters: rank components per risk SNP, intercept, and
/// the noise variance used for the responses (0 until responses are drawn).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    n_nodes: usize,
    n_predictors: usize,
    /// Rank-1 components per risk SNP; clique slices have one component.
    components: BTreeMap<usize, Vec<Array1<f64>>>,
    pub b0: Array1<f64>,
    pub sigma2: f64,
}

impl GroundTruth {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_predictors(&self) -> usize {
        self.n_predictors
    }

    /// Risk SNP ids in increasing order.
    pub fn risk_snps(&self) -> Vec<usize> {
        self.components.keys().copied().collect()
    }

    pub fn is_risk(&self, p: usize) -> bool {
        self.components.contains_key(&p)
    }

    pub fn components(&self, p: usize) -> Option<&[Array1<f64>]> {
        self.components.get(&p).map(|v| v.as_slice())
    }

    /// True coefficient `beta_{p,ab} = sum_r u_{pr}[a] u_{pr}[b]`, zero for
    /// non-risk SNPs.
    pub fn beta(&self, p: usize, a: usize, b: usize) -> f64 {
        match self.components.get(&p) {
            Some(comps) => comps.iter().map(|u| u[a] * u[b]).sum(),
            None => 0.0,
        }
    }

    /// Edge-ordered slice of SNP p (length `V(V-1)/2`).
    pub fn beta_edges(&self, p: usize) -> Array1<f64> {
        let mut out = Array1::zeros(edge_count(self.n_nodes));
        if let Some(comps) = self.components.get(&p) {
            for (k, (a, b)) in edge_pairs(self.n_nodes).enumerate() {
                out[k] = comps.iter().map(|u| u[a] * u[b]).sum();
            }
        }
        out
    }

    /// Full symmetric slice with zero diagonal.
    pub fn slice(&self, p: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_nodes, self.n_nodes));
        if let Some(comps) = self.components.get(&p) {
            for u in comps {
                for a in 0..self.n_nodes {
                    for b in 0..self.n_nodes {
                        if a != b {
                            out[[a, b]] += u[a] * u[b];
                        }
                    }
                }
            }
        }
        out
    }

    /// Edges with a nonzero true coefficient in any slice.
    pub fn support_edges(&self) -> Vec<(usize, usize)> {
        edge_pairs(self.n_nodes)
            .filter(|&(a, b)| {
                self.components
                    .values()
                    .any(|comps| comps.iter().map(|u| u[a] * u[b]).sum::<f64>() != 0.0)
            })
            .collect()
    }
}

/// Draws the true coefficient tensor for the given partition.
pub fn gen_signal(spec: &SignalSpec, set_of: &[usize]) -> Result<GroundTruth> {
    spec.validate()?;
    let p = set_of.len();
    if p == 0 {
        return Err(Error::invalid("empty partition"));
    }
    let nq = set_of.iter().max().map(|&q| q + 1).unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nq];
    for (j, &q) in set_of.iter().enumerate() {
        if q >= nq {
            return Err(Error::invalid("set ids not contiguous"));
        }
        members[q].push(j);
    }

    let (n_sets, per_set) = spec.pattern.layout();
    let eligible: Vec<usize> = (0..nq).filter(|&q| members[q].len() >= per_set).collect();
    if eligible.len() < n_sets {
        return Err(Error::invalid(format!(
            "pattern needs {n_sets} sets with >= {per_set} SNPs, only {} available",
            eligible.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen_sets = eligible.clone();
    partial_shuffle(&mut chosen_sets, n_sets, &mut rng);
    chosen_sets.truncate(n_sets);

    let mut risk: Vec<usize> = Vec::with_capacity(n_sets * per_set);
    for &q in &chosen_sets {
        let mut pool = members[q].clone();
        partial_shuffle(&mut pool, per_set, &mut rng);
        risk.extend_from_slice(&pool[..per_set]);
    }
    risk.sort_unstable();

    let n_rank = match spec.structure {
        SliceStructure::Clique => 1,
        SliceStructure::Rank3 => 3,
    };
    let mut components = BTreeMap::new();
    for &snp in &risk {
        let mut comps = Vec::with_capacity(n_rank);
        for _ in 0..n_rank {
            comps.push(draw_clique_vector(spec, &mut rng)?);
        }
        components.insert(snp, comps);
    }

    Ok(GroundTruth {
        n_nodes: spec.n_nodes,
        n_predictors: p,
        components,
        b0: Array1::zeros(edge_count(spec.n_nodes)),
        sigma2: 0.0,
    })
}

fn draw_clique_vector(spec: &SignalSpec, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
    let v = spec.n_nodes;
    let (count, variance) = match spec.effect {
        EffectMode::Fraction { fraction, variance } => {
            (((fraction * v as f64).round() as usize).clamp(1, v), variance)
        }
        EffectMode::Poisson { mean, variance } => {
            let pois = Poisson::new(mean)
                .map_err(|e| Error::invalid(format!("bad Poisson mean: {e}")))?;
            // Zero-truncated: an empty support would make the SNP silent.
            let mut c = 0usize;
            while c == 0 {
                c = rng.sample(pois) as usize;
            }
            (c.min(v), variance)
        }
    };
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::invalid(format!("bad effect variance: {e}")))?;
    let mut idx: Vec<usize> = (0..v).collect();
    partial_shuffle(&mut idx, count, rng);
    let mut u = Array1::zeros(v);
    for &node in &idx[..count] {
        u[node] = rng.sample(normal);
    }
    Ok(u)
}

/// Fisher-Yates on the first `k` positions.
fn partial_shuffle<T>(items: &mut [T], k: usize, rng: &mut ChaCha8Rng) {
    let n = items.len();
    for i in 0..k.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        items.swap(i, j);
    }
}

/// Gaussian connectome responses `A_i = B0 + sum_p B_p x_ip + noise` on the
/// upper triangle, returned as a Dataset together with the empirical
/// signal-to-noise ratio `Var(signal) / sigma2` (infinite when `sigma2 = 0`).
pub fn gen_connectomes(
    x: &Array2<f64>,
    set_of: &[usize],
    truth: &GroundTruth,
    sigma2: f64,
    seed: u64,
) -> Result<(Dataset, f64)> {
    if x.ncols() != truth.n_predictors() || x.ncols() != set_of.len() {
        return Err(Error::dim(format!(
            "{} genotype columns vs {} truth predictors vs {} set entries",
            x.ncols(),
            truth.n_predictors(),
            set_of.len()
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::invalid("sigma2 must be >= 0"));
    }
    let n = x.nrows();
    let ne = edge_count(truth.n_nodes());
    if truth.b0.len() != ne {
        return Err(Error::dim("truth intercept length mismatch"));
    }

    let mut signal = Array2::<f64>::zeros((n, ne));
    for p in truth.risk_snps() {
        let slice = truth.beta_edges(p);
        let xcol = x.column(p);
        for i in 0..n {
            let xi = xcol[i];
            if xi == 0.0 {
                continue;
            }
            let mut row = signal.row_mut(i);
            for e in 0..ne {
                row[e] += xi * slice[e];
            }
        }
    }
    let snr = if sigma2 > 0.0 {
        pooled_variance(&signal) / sigma2
    } else {
        f64::INFINITY
    };

    let mut a = signal;
    for (mut col, &b) in a.columns_mut().into_iter().zip(truth.b0.iter()) {
        col += b;
    }
    if sigma2 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma2.sqrt())
            .map_err(|e| Error::invalid(format!("bad sigma2: {e}")))?;
        a.mapv_inplace(|v| v + rng.sample::<f64, _>(noise));
    }
    let data = Dataset::new(truth.n_nodes(), a, x.clone(), set_of.to_vec(), &[])?;
    Ok((data, snr))
}

/// Noise variance that would put the empirical SNR of this design at
/// `target`: `Var(signal) / target`.
pub fn sigma2_for_snr(x: &Array2<f64>, truth: &GroundTruth, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::invalid("target SNR must be > 0"));
    }
    if x.ncols() != truth.n_predictors() {
        return Err(Error::dim("genotype and truth predictor counts differ"));
    }
    let n = x.nrows();
    let ne = edge_count(truth.n_nodes());
    let mut signal = Array2::<f64>::zeros((n, ne));
    for p in truth.risk_snps() {
        let slice = truth.beta_edges(p);
        let xcol = x.column(p);
        for i in 0..n {
            let xi = xcol[i];
            if xi == 0.0 {
                continue;
            }
            let mut row = signal.row_mut(i);
            for e in 0..ne {
                row[e] += xi * slice[e];
            }
        }
    }
    Ok(pooled_variance(&signal) / target)
}

fn pooled_variance(m: &Array2<f64>) -> f64 {
    let count = m.len() as f64;
    if count == 0.0 {
        return 0.0;
    }
    let mean = m.sum() / count;
    m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count
}

/// How the binary prior network is derived.
#[derive(Debug, Clone, Copy)]
pub enum NetworkRule<'a> {
    /// Edge present iff at least one subject has a nonzero response there.
    AnySubject(&'a Dataset),
    /// Edge present iff every subject has a nonzero response there.
    AllSubjects(&'a Dataset),
    /// Edge present iff some true slice is nonzero there.
    FromTruth(&'a GroundTruth),
}

pub fn build_prior_network(rule: NetworkRule<'_>) -> Result<PriorNetwork> {
    let (n_nodes, edges): (usize, Vec<(usize, usize)>) = match rule {
        NetworkRule::AnySubject(data) => {
            let nv = data.n_nodes();
            let edges = edge_pairs(nv)
                .enumerate()
                .filter(|&(k, _)| data.responses().column(k).iter().any(|&v| v != 0.0))
                .map(|(_, e)| e)
                .collect();
            (nv, edges)
        }
        NetworkRule::AllSubjects(data) => {
            let nv = data.n_nodes();
            let edges = edge_pairs(nv)
                .enumerate()
                .filter(|&(k, _)| data.responses().column(k).iter().all(|&v| v != 0.0))
                .map(|(_, e)| e)
                .collect();
            (nv, edges)
        }
        NetworkRule::FromTruth(truth) => (truth.n_nodes(), truth.support_edges()),
    };
    PriorNetwork::from_edge_list(n_nodes, &edges)
}

/// Flips exactly `floor(fraction * E)` upper-triangle entries of the support
/// indicator, chosen uniformly without replacement.
pub fn corrupt(net: &PriorNetwork, fraction: f64, seed: u64) -> Result<PriorNetwork> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("corruption fraction must be in [0, 1]"));
    }
    let nv = net.n_nodes();
    let ne = edge_count(nv);
    let n_flip = (fraction * ne as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..ne).collect();
    partial_shuffle(&mut all, n_flip, &mut rng);

    let mut present = vec![false; ne];
    for &(a, b) in net.support_edges() {
        present[edge_index(nv, a, b)] = true;
    }
    for &k in &all[..n_flip] {
        present[k] = !present[k];
    }
    let edges: Vec<(usize, usize)> = edge_pairs(nv)
        .enumerate()
        .filter(|&(k, _)| present[k])
        .map(|(_, e)| e)
        .collect();
    PriorNetwork::from_edge_list(nv, &edges)
}

/// Noise level for a replicate: fixed, or calibrated to a target SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Sigma2(f64),
    TargetSnr(f64),
}

/// One full synthetic replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub data: Dataset,
    pub truth: GroundTruth,
    pub snr: f64,
}

/// Genotypes, detected SNP sets, signal, and responses from one master seed
/// (component seeds are derived from it, so replicates with different seeds
/// are independent).
pub fn gen_replicate(
    genotypes: &GenotypeConfig,
    signal: &SignalSpec,
    noise: NoiseSpec,
    seed: u64,
) -> Result<Replicate> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut gcfg = genotypes.clone();
    gcfg.seed = master.next_u64();
    let mut sspec = signal.clone();
    sspec.seed = master.next_u64();
    let noise_seed = master.next_u64();

    let x = gen_genotypes(&gcfg)?;
    let set_of = detect_snp_sets(&x, 0.02, 100, 0.5)?;
    let mut truth = gen_signal(&sspec, &set_of)?;
    let sigma2 = match noise {
        NoiseSpec::Sigma2(s) => s,
        NoiseSpec::TargetSnr(t) => sigma2_for_snr(&x, &truth, t)?,
    };
    truth.sigma2 = sigma2;
    let (data, snr) = gen_connectomes(&x, &set_of, &truth, sigma2, noise_seed)?;
    Ok(Replicate { data, truth, snr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg(rho: f64, seed: u64) -> GenotypeConfig {
        GenotypeConfig::uniform_blocks(2000, 40, 10, rho, 0.1, 0.4, seed).unwrap()
    }

    #[test]
    fn genotypes_are_dosages_with_sane_frequencies() {
        let cfg = small_cfg(0.7, 1);
        let x = gen_genotypes(&cfg).unwrap();
        assert!(x.iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
        for col in x.columns() {
            let mean = col.sum() / col.len() as f64;
            assert!(mean >= 2.0 * 0.1 * 0.5 && mean <= 2.0 * 0.4 * 1.5, "mean {mean}");
        }
    }

    #[test]
    fn genotypes_deterministic_per_seed() {
        let cfg = small_cfg(0.5, 7);
        assert_eq!(gen_genotypes(&cfg).unwrap(), gen_genotypes(&cfg).unwrap());
        let cfg2 = small_cfg(0.5, 8);
        assert_ne!(gen_genotypes(&cfg).unwrap(), gen_genotypes(&cfg2).unwrap());
    }

    #[test]
    fn zero_rho_gives_near_zero_cross_correlation() {
        let cfg = small_cfg(0.0, 3);
        let x = gen_genotypes(&cfg).unwrap();
        let n = x.nrows() as f64;
        let mut z = x.clone();
        for mut col in z.columns_mut() {
            let mean = col.sum() / n;
            col.mapv_inplace(|v| v - mean);
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            col.mapv_inplace(|v| v / norm);
        }
        let corr = z.t().dot(&z);
        let p = x.ncols();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for j in 0..p {
            for k in (j + 1)..p {
                total += corr[[j, k]] * corr[[j, k]];
                pairs += 1;
            }
        }
        let mean_r2 = total / pairs as f64;
        assert!(mean_r2 < 0.01, "mean r2 {mean_r2}");
    }

    #[test]
    fn positive_rho_raises_within_block_correlation() {
        let cfg = small_cfg(0.7, 5);
        let x = gen_genotypes(&cfg).unwrap();
        let n = x.nrows() as f64;
        let mut z = x.clone();
        for mut col in z.columns_mut() {
            let mean = col.sum() / n;
            col.mapv_inplace(|v| v - mean);
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            col.mapv_inplace(|v| v / norm);
        }
        let corr = z.t().dot(&z);
        // Average r2 within the first block vs across blocks.
        let mut within = 0.0;
        let mut wn = 0;
        for j in 0..10 {
            for k in (j + 1)..10 {
                within += corr[[j, k]] * corr[[j, k]];
                wn += 1;
            }
        }
        let mut across = 0.0;
        let mut an = 0;
        for j in 0..10 {
            for k in 10..20 {
                across += corr[[j, k]] * corr[[j, k]];
                an += 1;
            }
        }
        assert!(within / wn as f64 > 10.0 * (across / an as f64));
    }

    #[test]
    fn duplicated_columns_form_one_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base: Vec<f64> = (0..60).map(|_| rng.random_range(0..3) as f64).collect();
        let mut x = Array2::zeros((60, 100));
        for mut col in x.columns_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = base[i];
            }
        }
        let sets = detect_snp_sets(&x, 0.02, 100, 0.5).unwrap();
        assert!(sets.iter().all(|&q| q == 0), "expected a single block");
    }

    #[test]
    fn independent_columns_stay_singletons() {
        // N large enough that sample r2 on independent columns cannot
        // plausibly cross 0.02 (|r| > 0.14 is a 6-sigma event at N=2000).
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Array2::from_shape_fn((2000, 30), |_| rng.sample::<f64, _>(StandardNormal));
        let sets = detect_snp_sets(&x, 0.02, 100, 0.5).unwrap();
        let expected: Vec<usize> = (0..30).collect();
        assert_eq!(sets, expected);
    }

    #[test]
    fn detected_sets_are_a_contiguous_partition() {
        let cfg = GenotypeConfig::uniform_blocks(300, 120, 15, 0.8, 0.15, 0.35, 21).unwrap();
        let x = gen_genotypes(&cfg).unwrap();
        let sets = detect_snp_sets(&x, 0.02, 100, 0.5).unwrap();
        assert_eq!(sets.len(), 120);
        assert_eq!(sets[0], 0);
        for w in sets.windows(2) {
            assert!(w[1] == w[0] || w[1] == w[0] + 1, "ids must be contiguous");
        }
    }

    #[test]
    fn subject_permutation_does_not_change_detection() {
        let cfg = GenotypeConfig::uniform_blocks(200, 60, 12, 0.7, 0.2, 0.4, 31).unwrap();
        let x = gen_genotypes(&cfg).unwrap();
        let sets = detect_snp_sets(&x, 0.02, 100, 0.5).unwrap();
        let perm: Vec<usize> = (0..200).rev().collect();
        let xp = x.select(ndarray::Axis(0), &perm);
        assert_eq!(sets, detect_snp_sets(&xp, 0.02, 100, 0.5).unwrap());
    }

    fn uniform_sets(p: usize, size: usize) -> Vec<usize> {
        (0..p).map(|j| j / size).collect()
    }

    #[test]
    fn p1_signal_has_100_risk_snps_in_two_sets() {
        let spec = SignalSpec {
            pattern: SignalPattern::P1,
            n_nodes: 20,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.75, variance: 0.5 },
            seed: 4,
        };
        let set_of = uniform_sets(600, 60);
        let truth = gen_signal(&spec, &set_of).unwrap();
        let risk = truth.risk_snps();
        assert_eq!(risk.len(), 100);
        let mut per_set = std::collections::BTreeMap::new();
        for &p in &risk {
            *per_set.entry(set_of[p]).or_insert(0usize) += 1;
        }
        assert_eq!(per_set.len(), 2);
        assert!(per_set.values().all(|&c| c == 50));
        // Non-risk slices are exactly zero.
        for p in 0..600 {
            if !truth.is_risk(p) {
                assert!(truth.beta_edges(p).iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn p2_signal_has_ten_sets_of_ten() {
        let spec = SignalSpec {
            pattern: SignalPattern::P2,
            n_nodes: 20,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.75, variance: 0.5 },
            seed: 9,
        };
        let set_of = uniform_sets(400, 20);
        let truth = gen_signal(&spec, &set_of).unwrap();
        let risk = truth.risk_snps();
        assert_eq!(risk.len(), 100);
        let mut per_set = std::collections::BTreeMap::new();
        for &p in &risk {
            *per_set.entry(set_of[p]).or_insert(0usize) += 1;
        }
        assert_eq!(per_set.len(), 10);
        assert!(per_set.values().all(|&c| c == 10));
    }

    #[test]
    fn clique_slices_match_their_outer_product() {
        let spec = SignalSpec {
            pattern: SignalPattern::Sets { n_sets: 1, per_set: 3 },
            n_nodes: 6,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.75, variance: 0.5 },
            seed: 2,
        };
        let set_of = uniform_sets(10, 5);
        let truth = gen_signal(&spec, &set_of).unwrap();
        for p in truth.risk_snps() {
            let comps = truth.components(p).unwrap();
            assert_eq!(comps.len(), 1);
            let u = &comps[0];
            for a in 0..6 {
                for b in 0..6 {
                    if a != b {
                        assert_abs_diff_eq!(truth.beta(p, a, b), u[a] * u[b]);
                    }
                }
            }
        }
    }

    #[test]
    fn rank3_slices_sum_three_components() {
        let spec = SignalSpec {
            pattern: SignalPattern::Sets { n_sets: 1, per_set: 2 },
            n_nodes: 8,
            structure: SliceStructure::Rank3,
            effect: EffectMode::Fraction { fraction: 0.5, variance: 0.5 },
            seed: 14,
        };
        let set_of = uniform_sets(8, 4);
        let truth = gen_signal(&spec, &set_of).unwrap();
        for p in truth.risk_snps() {
            assert_eq!(truth.components(p).unwrap().len(), 3);
        }
    }

    #[test]
    fn infeasible_pattern_is_rejected() {
        let spec = SignalSpec {
            pattern: SignalPattern::P1,
            n_nodes: 20,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.75, variance: 0.5 },
            seed: 4,
        };
        // Sets of 10 cannot host 50 risk SNPs each.
        let set_of = uniform_sets(200, 10);
        assert!(gen_signal(&spec, &set_of).is_err());
    }

    #[test]
    fn poisson_mode_truncates_support_to_at_least_one() {
        let spec = SignalSpec {
            pattern: SignalPattern::Sets { n_sets: 3, per_set: 5 },
            n_nodes: 12,
            structure: SliceStructure::Clique,
            effect: EffectMode::Poisson { mean: 8.0, variance: 0.1 },
            seed: 77,
        };
        let set_of = uniform_sets(60, 12);
        let truth = gen_signal(&spec, &set_of).unwrap();
        assert_eq!(truth.risk_snps().len(), 15);
        for p in truth.risk_snps() {
            let nonzero = truth.components(p).unwrap()[0]
                .iter()
                .filter(|&&v| v != 0.0)
                .count();
            assert!(nonzero >= 1 && nonzero <= 12);
        }
    }

    #[test]
    fn noiseless_connectomes_match_the_model_exactly() {
        let spec = SignalSpec {
            pattern: SignalPattern::Sets { n_sets: 2, per_set: 2 },
            n_nodes: 5,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.8, variance: 0.5 },
            seed: 6,
        };
        let set_of = uniform_sets(12, 3);
        let mut truth = gen_signal(&spec, &set_of).unwrap();
        truth.b0 = Array1::from_elem(edge_count(5), 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = Array2::from_shape_fn((9, 12), |_| rng.random_range(0..3) as f64);
        let (data, snr) = gen_connectomes(&x, &set_of, &truth, 0.0, 99).unwrap();
        assert!(snr.is_infinite());
        for i in 0..9 {
            for (k, (a, b)) in edge_pairs(5).enumerate() {
                let mut expect = truth.b0[k];
                for p in 0..12 {
                    expect += truth.beta(p, a, b) * x[[i, p]];
                }
                assert_abs_diff_eq!(data.responses()[[i, k]], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pure_noise_variance_matches_sigma2() {
        let spec = SignalSpec {
            pattern: SignalPattern::Sets { n_sets: 1, per_set: 1 },
            n_nodes: 20,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.5, variance: 0.5 },
            seed: 3,
        };
        let set_of = uniform_sets(10, 10);
        let mut truth = gen_signal(&spec, &set_of).unwrap();
        // Erase the signal: intercept zero, no components.
        truth.components.clear();
        let x = Array2::zeros((600, 10));
        let (data, snr) = gen_connectomes(&x, &set_of, &truth, 0.3, 17).unwrap();
        assert_eq!(snr, 0.0);
        let m = data.responses();
        let count = m.len() as f64;
        let mean = m.sum() / count;
        let var = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        assert!((var - 0.3).abs() / 0.3 < 0.05, "pooled variance {var}");
    }

    #[test]
    fn snr_calibration_hits_target() {
        let cfg = GenotypeConfig::uniform_blocks(300, 80, 10, 0.6, 0.2, 0.4, 55).unwrap();
        let rep = gen_replicate(
            &cfg,
            &SignalSpec {
                pattern: SignalPattern::Sets { n_sets: 2, per_set: 4 },
                n_nodes: 10,
                structure: SliceStructure::Clique,
                effect: EffectMode::Fraction { fraction: 0.6, variance: 0.5 },
                seed: 0,
            },
            NoiseSpec::TargetSnr(20.0),
            123,
        )
        .unwrap();
        assert_abs_diff_eq!(rep.snr, 20.0, epsilon = 1e-9);
        assert!(rep.truth.sigma2 > 0.0);
    }

    #[test]
    fn network_rules_and_corruption() {
        let spec = SignalSpec {
            pattern: SignalPattern::Sets { n_sets: 1, per_set: 2 },
            n_nodes: 8,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.5, variance: 0.5 },
            seed: 10,
        };
        let set_of = uniform_sets(6, 3);
        let truth = gen_signal(&spec, &set_of).unwrap();
        let net = build_prior_network(NetworkRule::FromTruth(&truth)).unwrap();
        assert_eq!(net.support_edges().len(), truth.support_edges().len());

        // corrupt(0) is the identity; corrupt flips exactly floor(f * E).
        let same = corrupt(&net, 0.0, 5).unwrap();
        assert_eq!(net.support(), same.support());
        let flipped = corrupt(&net, 0.3, 5).unwrap();
        let ne = edge_count(8);
        let diff: usize = edge_pairs(8)
            .filter(|&(a, b)| net.contains(a, b) != flipped.contains(a, b))
            .count();
        assert_eq!(diff, (0.3 * ne as f64).floor() as usize);
        // Deterministic per seed.
        let again = corrupt(&net, 0.3, 5).unwrap();
        assert_eq!(flipped.support(), again.support());
    }

    #[test]
    fn all_zero_dataset_gives_empty_any_subject_network() {
        let a = Array2::zeros((4, edge_count(5)));
        let x = Array2::zeros((4, 3));
        let data = Dataset::new(5, a, x, vec![0, 1, 2], &[]).unwrap();
        let net = build_prior_network(NetworkRule::AnySubject(&data)).unwrap();
        assert_eq!(net.support_edges().len(), 0);
    }

    #[test]
    fn replicates_are_deterministic_and_seed_sensitive() {
        let cfg = GenotypeConfig::uniform_blocks(120, 60, 12, 0.7, 0.2, 0.4, 0).unwrap();
        let spec = SignalSpec {
            pattern: SignalPattern::Sets { n_sets: 2, per_set: 3 },
            n_nodes: 6,
            structure: SliceStructure::Clique,
            effect: EffectMode::Fraction { fraction: 0.7, variance: 0.5 },
            seed: 0,
        };
        let r1 = gen_replicate(&cfg, &spec, NoiseSpec::Sigma2(0.1), 42).unwrap();
        let r2 = gen_replicate(&cfg, &spec, NoiseSpec::Sigma2(0.1), 42).unwrap();
        assert_eq!(r1.data.responses(), r2.data.responses());
        assert_eq!(r1.truth.risk_snps(), r2.truth.risk_snps());
        let r3 = gen_replicate(&cfg, &spec, NoiseSpec::Sigma2(0.1), 43).unwrap();
        assert_ne!(r1.data.responses(), r3.data.responses());
    }
}
