//! End-to-end run orchestration: each mode reads its inputs, writes its
//! outputs into the configured directory, and records every file with a
//! content hash in the manifest.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::edges::edge_pairs;
use crate::io::config::{Mode, NetworkRuleConfig, PlotKind, RunConfig};
use crate::io::manifest::{hash_outputs, save_manifest, Manifest, RunStatus};
use crate::io::tables;
use crate::model::{CoefficientView, Dataset, Hyperparams, PriorNetwork};
use crate::prior::{marginal_coeff_density, proposition_table, sample_coefficients};
use crate::select::{
    grid_search, mse_b, mspe, split, stability, threshold_mb, Confusion, StabilityOptions,
    TruthTensor,
};
use crate::simgen::{
    build_prior_network, corrupt, gen_replicate, GenotypeConfig, NetworkRule, NoiseSpec,
};
use crate::solver::{fit, FitResult};
use crate::{Error, Result};

/// A completed run: the manifest as written to disk.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
}

impl RunOutcome {
    /// The exit contract: success iff at least one sub-run succeeded.
    pub fn succeeded(&self) -> bool {
        self.manifest.n_succeeded() > 0
    }
}

/// SplitMix64; derives independent component seeds from the master seed.
fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let mode = config
        .mode
        .ok_or_else(|| Error::invalid("no mode selected"))?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let started = Instant::now();

    let mut files: Vec<String> = Vec::new();
    let mut statuses: Vec<RunStatus> = Vec::new();
    match mode {
        Mode::Simulate => run_simulate(config, &mut files, &mut statuses)?,
        Mode::Blocks => run_blocks(config, &mut files, &mut statuses)?,
        Mode::Fit => run_fit(config, &mut files, &mut statuses)?,
        Mode::Grid => run_grid(config, &mut files, &mut statuses)?,
        Mode::Stability => run_stability(config, &mut files, &mut statuses)?,
        Mode::Eval => run_eval(config, &mut files, &mut statuses)?,
        Mode::PriorCheck => run_prior_check(config, &mut files, &mut statuses)?,
        Mode::ExportPlot => run_export_plot(config, &mut files, &mut statuses)?,
    }

    let entries = hash_outputs(&config.out_dir, &files)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        mode: mode.name().to_string(),
        seed: config.seed,
        workers: config.effective_workers(),
        config: serde_json::to_value(config)
            .map_err(|e| Error::invalid(format!("config echo: {e}")))?,
        statuses,
        files: entries,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    save_manifest(&config.out_dir, &manifest)?;
    Ok(RunOutcome { manifest })
}

/// Summary emitted next to the simulated tables.
#[derive(Debug, Serialize, Deserialize)]
pub struct SimSummary {
    pub snr: f64,
    pub sigma2: f64,
    pub n_risk_snps: usize,
    pub n_sets: usize,
    pub n_nodes: usize,
}

fn run_simulate(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let t0 = Instant::now();
    let sim = &config.simulate;
    let gcfg = GenotypeConfig::uniform_blocks(
        sim.n_subjects,
        sim.n_predictors,
        sim.block_size,
        sim.rho,
        sim.maf[0],
        sim.maf[1],
        0,
    )?;
    let spec = sim.signal_spec();
    let noise = match sim.noise {
        crate::io::config::NoiseConfig::Sigma2(s) => NoiseSpec::Sigma2(s),
        crate::io::config::NoiseConfig::TargetSnr(t) => NoiseSpec::TargetSnr(t),
    };
    let rep = gen_replicate(&gcfg, &spec, noise, config.seed)?;

    let net = match sim.network_rule {
        NetworkRuleConfig::AnySubject => build_prior_network(NetworkRule::AnySubject(&rep.data))?,
        NetworkRuleConfig::AllSubjects => {
            build_prior_network(NetworkRule::AllSubjects(&rep.data))?
        }
        NetworkRuleConfig::FromTruth => build_prior_network(NetworkRule::FromTruth(&rep.truth))?,
    };
    let net = if sim.corrupt_fraction > 0.0 {
        corrupt(&net, sim.corrupt_fraction, derive_seed(config.seed, 100))?
    } else {
        net
    };

    let dir = &config.out_dir;
    tables::save_genotypes(&dir.join("genotypes.csv"), &rep.data.predictors().to_owned())?;
    tables::save_connectomes(&dir.join("connectomes.csv"), &rep.data)?;
    tables::save_snp_sets(&dir.join("snp_sets.csv"), rep.data.set_of())?;
    tables::save_truth(
        &dir.join("truth.csv"),
        &TruthTensor::from_ground_truth(&rep.truth),
    )?;
    tables::save_network(&dir.join("prior_network.csv"), &net)?;
    let summary = SimSummary {
        snr: rep.snr,
        sigma2: rep.truth.sigma2,
        n_risk_snps: rep.truth.risk_snps().len(),
        n_sets: rep.data.n_sets(),
        n_nodes: rep.data.n_nodes(),
    };
    write_json(&dir.join("sim.json"), &summary)?;
    files.extend(
        [
            "genotypes.csv",
            "connectomes.csv",
            "snp_sets.csv",
            "truth.csv",
            "prior_network.csv",
            "sim.json",
        ]
        .map(String::from),
    );
    statuses.push(RunStatus::ok("simulate", t0.elapsed().as_secs_f64()));
    Ok(())
}

fn run_blocks(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let t0 = Instant::now();
    let x = tables::load_genotypes(&config.require_genotypes()?)?;
    let b = &config.blocks;
    let set_of = crate::simgen::detect_snp_sets(&x, b.r2_threshold, b.init_window, b.fraction)?;
    tables::save_snp_sets(&config.out_dir.join("snp_sets.csv"), &set_of)?;
    files.push("snp_sets.csv".into());
    statuses.push(RunStatus::ok("blocks", t0.elapsed().as_secs_f64()));
    Ok(())
}

fn load_inputs(config: &RunConfig) -> Result<(Dataset, PriorNetwork)> {
    let data = tables::load_dataset(
        &config.require_connectomes()?,
        &config.require_genotypes()?,
        &config.require_snp_sets()?,
        &config.data.unpenalized,
    )?;
    let net = match &config.data.prior_network {
        Some(p) => tables::load_network(p, data.n_nodes())?,
        None => PriorNetwork::empty(data.n_nodes()),
    };
    Ok((data, net))
}

fn run_fit(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let (data, net) = load_inputs(config)?;
    let mut opts = config.fit.clone();
    opts.seed = derive_seed(config.seed, 0);
    let t0 = Instant::now();
    match fit(&data, &net, &config.hyper, &opts) {
        Ok(result) => {
            save_fit_outputs(&config.out_dir, &result, &data, files)?;
            statuses.push(RunStatus::ok("fit", t0.elapsed().as_secs_f64()));
        }
        Err(e) => {
            statuses.push(RunStatus::failed("fit", e.to_string(), t0.elapsed().as_secs_f64()));
        }
    }
    Ok(())
}

fn save_fit_outputs(
    dir: &Path,
    result: &FitResult,
    data: &Dataset,
    files: &mut Vec<String>,
) -> Result<()> {
    write_json(&dir.join("fit.json"), result)?;
    let u = result.params.assemble_u(data.set_of())?;
    tables::save_loadings(&dir.join("u.csv"), &u)?;
    tables::save_intercept(&dir.join("b0.csv"), &result.params.b0, data.n_nodes())?;
    export_trace(&dir.join("trace.csv"), &result.objective_trace)?;
    files.extend(["fit.json", "u.csv", "b0.csv", "trace.csv"].map(String::from));
    Ok(())
}

pub fn load_fit(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("fit file: {e}")))
}

fn run_grid(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let (data, net) = load_inputs(config)?;
    let n = data.n_subjects();
    let [mut n_train, mut n_val] = config.grid.split;
    if n_train == 0 && n_val == 0 {
        n_train = n / 3;
        n_val = n / 3;
    }
    if n_train == 0 || n_val == 0 {
        return Err(Error::invalid("grid.split needs positive train and validation sizes"));
    }
    let groups = split(n, &[n_train, n_val], derive_seed(config.seed, 1))?;
    let train = data.subset(&groups[0])?;
    let val = data.subset(&groups[1])?;
    let mut opts = config.fit.clone();
    opts.seed = derive_seed(config.seed, 2);

    let t0 = Instant::now();
    let result = grid_search(
        &train,
        &val,
        &net,
        &config.hyper,
        &opts,
        &config.grid.lambda_h,
        &config.grid.lambda_f,
        config.effective_workers(),
    )?;
    let elapsed = t0.elapsed().as_secs_f64();
    let per_cell = elapsed / result.entries.len() as f64;

    let mut csv = String::from("lambda_h,lambda_f,mspe,status\n");
    for e in &result.entries {
        let name = format!("lambda_h={},lambda_f={}", e.lambda_h, e.lambda_f);
        match (e.mspe, &e.error) {
            (Some(m), _) => {
                csv.push_str(&format!(
                    "{},{},{},ok\n",
                    tables::fmt_float(e.lambda_h),
                    tables::fmt_float(e.lambda_f),
                    tables::fmt_float(m)
                ));
                statuses.push(RunStatus::ok(name, per_cell));
            }
            (None, Some(err)) => {
                csv.push_str(&format!(
                    "{},{},,{}\n",
                    tables::fmt_float(e.lambda_h),
                    tables::fmt_float(e.lambda_f),
                    err.replace(',', ";")
                ));
                statuses.push(RunStatus::failed(name, err.clone(), per_cell));
            }
            (None, None) => unreachable!("grid point without score or error"),
        }
    }
    let path = config.out_dir.join("grid.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    files.push("grid.csv".into());

    if let Some((lh, lf)) = result.best() {
        let best = serde_json::json!({
            "lambda_h": lh,
            "lambda_f": lf,
            "mspe": result.entries[0].mspe,
        });
        write_json(&config.out_dir.join("best.json"), &best)?;
        files.push("best.json".into());
    }
    Ok(())
}

/// Stability outputs as one JSON document (selection probabilities included
/// so downstream exports need no side files).
#[derive(Debug, Serialize, Deserialize)]
pub struct StabilityFile {
    pub q_bar: f64,
    pub threshold: f64,
    pub target_fdr: f64,
    pub n_runs: usize,
    pub n_completed: usize,
    pub freq_snp: Vec<f64>,
    /// SNP indices whose selection probability reaches the threshold.
    pub selected: Vec<usize>,
    pub failures: Vec<(usize, String)>,
}

fn run_stability(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let (data, net) = load_inputs(config)?;
    let mut opts = config.fit.clone();
    opts.seed = derive_seed(config.seed, 3);
    let sopts = StabilityOptions {
        n_runs: config.stability.n_runs,
        subsample: config.stability.subsample,
        seed: derive_seed(config.seed, 4),
        workers: config.effective_workers(),
    };
    let result = stability(&data, &net, &config.hyper, &opts, &sopts)?;
    for &(k, secs) in &result.run_times {
        statuses.push(RunStatus::ok(format!("run-{k}"), secs));
    }
    for (k, msg) in &result.failures {
        statuses.push(RunStatus::failed(format!("run-{k}"), msg.clone(), 0.0));
    }
    statuses.sort_by_key(|s| s.name.clone());

    let freq: Vec<f64> = result.freq_snp.to_vec();
    let threshold = threshold_mb(&freq, result.q_bar, config.stability.target_fdr);
    let selected: Vec<usize> = freq
        .iter()
        .enumerate()
        .filter(|&(_, &f)| f >= threshold)
        .map(|(p, _)| p)
        .collect();

    let dir = &config.out_dir;
    export_manhattan(&dir.join("selection.csv"), &freq)?;
    save_edge_frequencies(&dir.join("freq_edges.csv"), &result.freq_edge, data.n_nodes())?;
    write_json(
        &dir.join("stability.json"),
        &StabilityFile {
            q_bar: result.q_bar,
            threshold,
            target_fdr: config.stability.target_fdr,
            n_runs: config.stability.n_runs,
            n_completed: result.n_completed,
            freq_snp: freq,
            selected,
            failures: result.failures.clone(),
        },
    )?;
    files.extend(["selection.csv", "freq_edges.csv", "stability.json"].map(String::from));
    Ok(())
}

pub fn load_stability(path: &Path) -> Result<StabilityFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("stability file: {e}")))
}

/// Nonzero edge-level selection frequencies, sparse rows.
fn save_edge_frequencies(path: &Path, freq: &Array2<f64>, n_nodes: usize) -> Result<()> {
    let mut buf = String::from("v,v',snp_id,frequency\n");
    for p in 0..freq.ncols() {
        for (e, (a, b)) in edge_pairs(n_nodes).enumerate() {
            let f = freq[[e, p]];
            if f > 0.0 {
                buf.push_str(&format!("{a},{b},snp_{},{}\n", p + 1, tables::fmt_float(f)));
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fdr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub mse_b: f64,
    pub mspe: f64,
    pub auc_b: Option<f64>,
    pub auc_snp: Option<f64>,
    /// SNP-level AUC scored by stability selection probability.
    pub auc_snp_stability: Option<f64>,
    pub confusion: Option<ConfusionSummary>,
}

fn run_eval(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let t0 = Instant::now();
    let data = tables::load_dataset(
        &config.require_connectomes()?,
        &config.require_genotypes()?,
        &config.require_snp_sets()?,
        &config.data.unpenalized,
    )?;
    let truth = tables::load_truth(
        &config.require_truth()?,
        data.n_nodes(),
        data.n_predictors(),
    )?;
    let result = load_fit(&config.require_fit()?)?;

    let mse = mse_b(&result.params, data.set_of(), &truth)?;
    let pred_err = mspe(&result.params, &data)?;
    let scores = crate::select::abs_beta_matrix(&result.params, data.set_of())?;
    let auc_edge = crate::select::auc_b(&scores, &truth)?;
    let u = result.params.assemble_u(data.set_of())?;
    let per_snp = CoefficientView::new(u.view()).max_abs_beta_per_predictor();
    let auc_snp_beta = crate::select::auc_snp(&per_snp, &truth)?;

    let mut auc_snp_stab = None;
    let mut confusion = None;
    if let Some(stab_path) = &config.data.stability {
        let stab = load_stability(stab_path)?;
        if stab.freq_snp.len() != data.n_predictors() {
            return Err(Error::dim("stability frequencies do not match the predictor count"));
        }
        let freq = ndarray::Array1::from_vec(stab.freq_snp.clone());
        auc_snp_stab = crate::select::auc_snp(&freq, &truth)?;
        let cut = if config.eval.threshold > 0.0 {
            config.eval.threshold
        } else {
            stab.threshold
        };
        let labels: Vec<bool> = (0..data.n_predictors()).map(|p| truth.is_risk(p)).collect();
        let c = Confusion::at_threshold(&stab.freq_snp, cut, &labels);
        confusion = Some(ConfusionSummary {
            threshold: cut,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
            fdr: c.fdr(),
        });
    }

    write_json(
        &config.out_dir.join("metrics.json"),
        &MetricsFile {
            mse_b: mse,
            mspe: pred_err,
            auc_b: auc_edge,
            auc_snp: auc_snp_beta,
            auc_snp_stability: auc_snp_stab,
            confusion,
        },
    )?;
    files.push("metrics.json".into());
    statuses.push(RunStatus::ok("eval", t0.elapsed().as_secs_f64()));
    Ok(())
}

fn run_prior_check(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let t0 = Instant::now();
    let rows = proposition_table(&config.hyper, config.prior_check.n_draws, config.seed)?;
    let mut csv = String::from("case,analytic,monte_carlo,abs_error\n");
    let mut worst = 0.0f64;
    for row in &rows {
        let err = (row.monte_carlo - row.analytic).abs();
        worst = worst.max(err);
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.case.label(),
            tables::fmt_float(row.analytic),
            tables::fmt_float(row.monte_carlo),
            tables::fmt_float(err)
        ));
    }
    let path = config.out_dir.join("prior_check.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    files.push("prior_check.csv".into());
    let mut status = RunStatus::ok("prior-check", t0.elapsed().as_secs_f64());
    status.detail = format!("max abs error {worst:.6}");
    statuses.push(status);
    Ok(())
}

fn run_export_plot(
    config: &RunConfig,
    files: &mut Vec<String>,
    statuses: &mut Vec<RunStatus>,
) -> Result<()> {
    let t0 = Instant::now();
    let dir = &config.out_dir;
    match config.export_plot.kind {
        PlotKind::Manhattan => {
            let stab = load_stability(&config.require_stability()?)?;
            export_manhattan(&dir.join("manhattan.csv"), &stab.freq_snp)?;
            files.push("manhattan.csv".into());
        }
        PlotKind::Density => {
            export_density_panel(config, &dir.join("density.csv"))?;
            files.push("density.csv".into());
        }
        PlotKind::Trace => {
            let result = load_fit(&config.require_fit()?)?;
            export_trace(&dir.join("trace.csv"), &result.objective_trace)?;
            files.push("trace.csv".into());
        }
    }
    statuses.push(RunStatus::ok("export-plot", t0.elapsed().as_secs_f64()));
    Ok(())
}

/// Manhattan-style selection probabilities: `snp_id,position_index,
/// selection_probability`, one row per SNP.
pub fn export_manhattan(path: &Path, freq_snp: &[f64]) -> Result<()> {
    let mut buf = String::from("snp_id,position_index,selection_probability\n");
    for (j, &f) in freq_snp.iter().enumerate() {
        buf.push_str(&format!("snp_{},{j},{}\n", j + 1, tables::fmt_float(f)));
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Objective trace: `iteration,neg_log_posterior`.
pub fn export_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut buf = String::from("iteration,neg_log_posterior\n");
    for (it, &v) in trace.iter().enumerate() {
        buf.push_str(&format!("{it},{}\n", tables::fmt_float(v)));
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// One labeled density curve for the prior panel.
pub struct DensityCurve {
    pub label: String,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Density panel: `beta,density,prior_label` rows for each curve.
pub fn export_density(path: &Path, curves: &[DensityCurve]) -> Result<()> {
    let mut buf = String::from("beta,density,prior_label\n");
    for curve in curves {
        if curve.grid.len() != curve.density.len() {
            return Err(Error::dim("density curve grid and values differ in length"));
        }
        for (b, d) in curve.grid.iter().zip(&curve.density) {
            buf.push_str(&format!(
                "{},{},{}\n",
                tables::fmt_float(*b),
                tables::fmt_float(*d),
                curve.label
            ));
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn export_density_panel(config: &RunConfig, path: &Path) -> Result<()> {
    let ep = &config.export_plot;
    if ep.psi.is_empty() {
        return Err(Error::invalid("export_plot.psi must list at least one value"));
    }
    if ep.grid_points < 3 || !(ep.grid_half_width > 0.0) {
        return Err(Error::invalid("density grid must have >= 3 points and positive width"));
    }
    let grid: Vec<f64> = (0..ep.grid_points)
        .map(|k| {
            -ep.grid_half_width
                + 2.0 * ep.grid_half_width * k as f64 / (ep.grid_points - 1) as f64
        })
        .collect();
    let mut curves = Vec::new();
    for (k, &psi) in ep.psi.iter().enumerate() {
        let hyper = Hyperparams {
            psi,
            ..config.hyper.clone()
        };
        hyper.validate()?;
        let seed = derive_seed(config.seed, 10 + k as u64);
        let est = marginal_coeff_density(&hyper, &grid, ep.n_draws, seed)?;
        curves.push(DensityCurve {
            label: format!("coeff_psi={psi}"),
            grid: est.grid.clone(),
            density: est.density.clone(),
        });
        // Variance-matched normal reference for the same draws.
        let samples = sample_coefficients(&hyper, ep.n_draws, seed)?;
        let var = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
        let norm: Vec<f64> = grid
            .iter()
            .map(|&b| (-0.5 * b * b / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
            .collect();
        curves.push(DensityCurve {
            label: format!("normal_psi={psi}"),
            grid: grid.clone(),
            density: norm,
        });
    }
    export_density(path, &curves)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("serialization: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
