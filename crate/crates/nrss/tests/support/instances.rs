//! Random problem instances and a flat parameterization of the model, so a
//! generic optimizer can run on the identical objective the solver minimizes.

use ndarray::{Array1, Array2};
use nrss::edges::{edge_count, edge_pairs};
use nrss::model::{Dataset, Hyperparams, ModelParams, PriorNetwork};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub data: Dataset,
    pub net: PriorNetwork,
    pub hyper: Hyperparams,
}

/// A dense-noise instance with a planted sparse rank-1 signal and randomized
/// hyperparameters. Roughly one predictor per set carries signal.
pub fn planted_instance(
    nv: usize,
    np: usize,
    nq: usize,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ne = edge_count(nv);

    // Genotype-like dosages with per-column allele frequency.
    let mut x = Array2::<f64>::zeros((n, np));
    for j in 0..np {
        let maf = rng.random_range(0.1..0.5);
        for i in 0..n {
            let mut d = 0.0;
            for _ in 0..2 {
                if rng.random_range(0.0..1.0) < maf {
                    d += 1.0;
                }
            }
            x[[i, j]] = d;
        }
    }
    let set_of: Vec<usize> = (0..np).map(|j| j % nq).collect();

    // Planted coefficients: one clique vector per set on a random subset of
    // predictors, two-thirds of the nodes active.
    let mut u = Array2::<f64>::zeros((nv, np));
    for q in 0..nq {
        let j = (0..np).filter(|&j| set_of[j] == q).choose(&mut rng).unwrap();
        let active = ((2 * nv).div_ceil(3)).max(1);
        let mut nodes: Vec<usize> = (0..nv).collect();
        nodes.shuffle(&mut rng);
        for &v in nodes.iter().take(active) {
            u[[v, j]] = 0.7 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let b0 = Array1::from_shape_fn(ne, |_| 0.3 * rng.sample::<f64, _>(StandardNormal));

    let mut a = Array2::<f64>::zeros((n, ne));
    for i in 0..n {
        for (e, (va, vb)) in edge_pairs(nv).enumerate() {
            let mut val = b0[e];
            for j in 0..np {
                val += x[[i, j]] * u[[va, j]] * u[[vb, j]];
            }
            a[[i, e]] = val + sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let data = Dataset::new(nv, a, x, set_of, &[]).unwrap();
    let edges: Vec<(usize, usize)> = edge_pairs(nv)
        .filter(|_| rng.random_range(0.0..1.0) < 0.6)
        .collect();
    let net = PriorNetwork::from_edge_list(nv, &edges).unwrap();

    // Every fourth instance exercises the pinned-rate branch.
    let nu = if seed % 4 == 3 { 0.0 } else { rng.random_range(0.2..1.5) };
    let hyper = Hyperparams::new(
        rng.random_range(0.3..1.5),
        rng.random_range(0.3..1.5),
        rng.random_range(-0.5..0.5),
        nu,
        rng.random_range(0.8..2.5),
        rng.random_range(0.3..1.5),
    )
    .unwrap();

    Instance { data, net, hyper }
}

/// A random interior parameter point: every entry of `h` is bounded away
/// from zero and all scales are strictly positive, so the objective is
/// differentiable in each coordinate.
pub fn interior_params(data: &Dataset, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nv = data.n_nodes();
    let np = data.n_predictors();
    let nq = data.n_sets();
    let sign = |r: &mut ChaCha8Rng| if r.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
    ModelParams {
        f: Array1::from_shape_fn(nq, |_| rng.random_range(0.3..1.5)),
        g: Array1::from_shape_fn(nv, |_| rng.random_range(0.2..1.2)),
        h: Array2::from_shape_fn((nv, np), |_| sign(&mut rng) * rng.random_range(0.1..0.6)),
        b0: Array1::from_shape_fn(edge_count(nv), |_| {
            0.5 * rng.sample::<f64, _>(StandardNormal)
        }),
        alpha: Array1::from_shape_fn(nv, |_| 0.6 * rng.sample::<f64, _>(StandardNormal)),
        sigma2: rng.random_range(0.3..1.5),
    }
}

/// Flat vector layout for the generic optimizer. Nonnegative scales enter
/// through squares and the variance through its logarithm, so the optimizer
/// works on an unconstrained space; with `nu = 0` the node log-rates are not
/// free parameters and stay pinned at `psi`.
pub struct Packing {
    nv: usize,
    np: usize,
    nq: usize,
    ne: usize,
    include_alpha: bool,
    psi: f64,
}

impl Packing {
    pub fn new(data: &Dataset, hyper: &Hyperparams) -> Self {
        Packing {
            nv: data.n_nodes(),
            np: data.n_predictors(),
            nq: data.n_sets(),
            ne: data.n_edges(),
            include_alpha: hyper.nu > 0.0,
            psi: hyper.psi,
        }
    }

    pub fn dim(&self) -> usize {
        self.nv * self.np
            + self.nv
            + self.nq
            + self.ne
            + if self.include_alpha { self.nv } else { 0 }
            + 1
    }

    pub fn pack(&self, params: &ModelParams) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.extend(params.h.iter().copied());
        z.extend(params.g.iter().map(|&g| g.sqrt()));
        z.extend(params.f.iter().map(|&f| f.sqrt()));
        z.extend(params.b0.iter().copied());
        if self.include_alpha {
            z.extend(params.alpha.iter().copied());
        }
        z.push(params.sigma2.ln());
        z
    }

    pub fn unpack(&self, z: &[f64]) -> ModelParams {
        assert_eq!(z.len(), self.dim());
        let mut at = 0;
        let mut take = |k: usize| {
            let s = &z[at..at + k];
            at += k;
            s
        };
        let h = Array2::from_shape_vec((self.nv, self.np), take(self.nv * self.np).to_vec())
            .unwrap();
        let g = Array1::from_iter(take(self.nv).iter().map(|&z| z * z));
        let f = Array1::from_iter(take(self.nq).iter().map(|&z| z * z));
        let b0 = Array1::from_vec(take(self.ne).to_vec());
        let alpha = if self.include_alpha {
            Array1::from_vec(take(self.nv).to_vec())
        } else {
            Array1::from_elem(self.nv, self.psi)
        };
        let sigma2 = take(1)[0].clamp(-25.0, 12.0).exp();
        ModelParams { f, g, h, b0, alpha, sigma2 }
    }

    /// A randomized starting point for one optimizer run.
    pub fn random_start(&self, data: &Dataset, seed: u64) -> Vec<f64> {
        let params = interior_params(data, seed);
        let mut z = self.pack(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for zi in z.iter_mut() {
            *zi += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        z
    }
}
