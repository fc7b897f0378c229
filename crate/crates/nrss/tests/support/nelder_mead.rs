//! Plain Nelder-Mead simplex minimizer. Used as a generic optimizer oracle:
//! it knows nothing about the model structure and works on a flat parameter
//! vector, so agreement with the dedicated solver is meaningful evidence.

pub struct Options {
    pub max_iter: usize,
    /// Stop when the simplex function values span less than this.
    pub ftol: f64,
    /// Initial simplex edge length, scaled per coordinate by `1 + |x0_i|`.
    pub step: f64,
    /// Number of restarts from the incumbent best with a fresh simplex.
    pub restarts: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options { max_iter: 20_000, ftol: 1e-12, step: 0.5, restarts: 3 }
    }
}

pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &Options,
) -> (Vec<f64>, f64) {
    let mut best = x0.to_vec();
    let mut best_val = f(&best);
    let mut step = opts.step;
    for _ in 0..=opts.restarts {
        let (x, val) = run_once(f, &best, step, opts);
        if val < best_val {
            best = x;
            best_val = val;
        }
        step *= 0.25;
    }
    (best, best_val)
}

fn run_once(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    opts: &Options,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step * (1.0 + v[i].abs());
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (lo, hi, second_hi) = (order[0], order[n], order[n - 1]);
        if values[hi] - values[lo] <= opts.ftol * (1.0 + values[lo].abs()) {
            break;
        }

        // Centroid of all vertices except the worst.
        let mut centroid = vec![0.0; n];
        for (k, v) in simplex.iter().enumerate() {
            if k == hi {
                continue;
            }
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }

        let lerp = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|i| centroid[i] + t * (simplex[hi][i] - centroid[i]))
                .collect()
        };

        let reflected = lerp(-1.0);
        let fr = f(&reflected);
        if fr < values[lo] {
            let expanded = lerp(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[hi] = expanded;
                values[hi] = fe;
            } else {
                simplex[hi] = reflected;
                values[hi] = fr;
            }
        } else if fr < values[second_hi] {
            simplex[hi] = reflected;
            values[hi] = fr;
        } else {
            let contracted = if fr < values[hi] { lerp(-0.5) } else { lerp(0.5) };
            let fc = f(&contracted);
            if fc < values[hi].min(fr) {
                simplex[hi] = contracted;
                values[hi] = fc;
            } else {
                // Shrink everything toward the best vertex.
                let anchor = simplex[lo].clone();
                for (k, v) in simplex.iter_mut().enumerate() {
                    if k == lo {
                        continue;
                    }
                    for i in 0..n {
                        v[i] = anchor[i] + 0.5 * (v[i] - anchor[i]);
                    }
                    values[k] = f(v);
                }
            }
        }
    }

    let mut lo = 0;
    for k in 1..=n {
        if values[k] < values[lo] {
            lo = k;
        }
    }
    (simplex[lo].clone(), values[lo])
}

