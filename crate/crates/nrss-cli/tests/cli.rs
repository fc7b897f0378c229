//! End-to-end checks driving the compiled binary: simulate, blocks, fit,
//! stability, eval, prior-check, and export-plot chained through real files.

use std::path::Path;
use std::process::{Command, Output};

fn nrss(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nrss"));
    cmd.args(args);
    cmd.env_remove("NRSS_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn simulate_config(out: &Path) -> serde_json::Value {
    serde_json::json!({
        "out_dir": out,
        "simulate": {
            "n_subjects": 60,
            "n_predictors": 40,
            "block_size": 8,
            "n_nodes": 6,
            "pattern": {"sets": {"n_sets": 2, "per_set": 2}},
            "effect": {"fraction": {"fraction": 0.7, "variance": 0.5}},
            "noise": {"sigma2": 0.1}
        }
    })
}

#[test]
fn simulate_fit_eval_pipeline_through_the_binary() {
    let root = tempfile::tempdir().unwrap();
    let sim_out = root.path().join("sim");
    let cfg = write_config(root.path(), "sim.json", simulate_config(&sim_out));

    let out = nrss(&["simulate", "--config", &cfg, "--seed", "7"], &[]);
    assert!(out.status.success(), "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mode: simulate"));
    for name in ["genotypes.csv", "connectomes.csv", "snp_sets.csv", "truth.csv", "prior_network.csv", "manifest.json"] {
        assert!(sim_out.join(name).exists(), "{name} missing");
    }

    // Manifest records the seed override and hashes that verify.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sim_out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 7);
    let first = &manifest["files"][0];
    let hash = nrss::io::hash_file(&sim_out.join(first["path"].as_str().unwrap())).unwrap();
    assert_eq!(hash, first["sha256"].as_str().unwrap());

    // blocks: re-detect SNP sets from the genotype file alone.
    let blocks_out = root.path().join("blocks");
    let bcfg = write_config(
        root.path(),
        "blocks.json",
        serde_json::json!({
            "out_dir": blocks_out,
            "data": {"genotypes": sim_out.join("genotypes.csv")}
        }),
    );
    let out = nrss(&["blocks", "--config", &bcfg], &[]);
    assert!(out.status.success(), "blocks failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(blocks_out.join("snp_sets.csv").exists());

    // fit
    let fit_out = root.path().join("fit");
    let fcfg = write_config(
        root.path(),
        "fit.json",
        serde_json::json!({
            "out_dir": fit_out,
            "data": {
                "connectomes": sim_out.join("connectomes.csv"),
                "genotypes": sim_out.join("genotypes.csv"),
                "snp_sets": sim_out.join("snp_sets.csv"),
                "prior_network": sim_out.join("prior_network.csv")
            },
            "hyper": {"lambda_f": 0.1, "lambda_h": 0.08, "psi": 0.0, "nu": 0.5, "tau": 1.5, "eta": 1.0},
            "fit": {"max_iter": 40}
        }),
    );
    let out = nrss(&["fit", "--config", &fcfg, "--seed", "1"], &[]);
    assert!(out.status.success(), "fit failed: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["fit.json", "u.csv", "b0.csv", "trace.csv"] {
        assert!(fit_out.join(name).exists(), "{name} missing");
    }

    // The emitted trace never increases.
    let trace = std::fs::read_to_string(fit_out.join("trace.csv")).unwrap();
    let values: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-8 * (1.0 + w[0].abs())));

    // stability with a handful of runs, then eval with truth.
    let stab_out = root.path().join("stab");
    let scfg = write_config(
        root.path(),
        "stab.json",
        serde_json::json!({
            "out_dir": stab_out,
            "data": {
                "connectomes": sim_out.join("connectomes.csv"),
                "genotypes": sim_out.join("genotypes.csv"),
                "snp_sets": sim_out.join("snp_sets.csv"),
                "prior_network": sim_out.join("prior_network.csv")
            },
            "hyper": {"lambda_f": 0.1, "lambda_h": 0.08, "psi": 0.0, "nu": 0.5, "tau": 1.5, "eta": 1.0},
            "fit": {"max_iter": 30},
            "stability": {"n_runs": 4, "target_fdr": 0.3}
        }),
    );
    let out = nrss(&["stability", "--config", &scfg, "--seed", "2"], &[]);
    assert!(out.status.success(), "stability failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stab_out.join("selection.csv").exists());
    assert!(stab_out.join("stability.json").exists());

    let eval_out = root.path().join("eval");
    let ecfg = write_config(
        root.path(),
        "eval.json",
        serde_json::json!({
            "out_dir": eval_out,
            "data": {
                "connectomes": sim_out.join("connectomes.csv"),
                "genotypes": sim_out.join("genotypes.csv"),
                "snp_sets": sim_out.join("snp_sets.csv"),
                "truth": sim_out.join("truth.csv"),
                "fit": fit_out.join("fit.json"),
                "stability": stab_out.join("stability.json")
            }
        }),
    );
    let out = nrss(&["eval", "--config", &ecfg], &[]);
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_out.join("metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["mse_b"].as_f64().unwrap().is_finite());
    assert!(metrics["confusion"]["threshold"].as_f64().unwrap() > 0.5);

    // export-plot consumes earlier outputs.
    let plot_out = root.path().join("plot");
    let pcfg = write_config(
        root.path(),
        "plot.json",
        serde_json::json!({
            "out_dir": plot_out,
            "data": {"stability": stab_out.join("stability.json")},
            "export_plot": {"kind": "manhattan"}
        }),
    );
    let out = nrss(&["export-plot", "--config", &pcfg], &[]);
    assert!(out.status.success(), "export-plot failed: {}", String::from_utf8_lossy(&out.stderr));
    let manhattan = std::fs::read_to_string(plot_out.join("manhattan.csv")).unwrap();
    assert_eq!(manhattan.lines().count(), 41, "header plus one row per SNP");
}

#[test]
fn same_seed_reproduces_outputs_byte_for_byte() {
    let root = tempfile::tempdir().unwrap();
    let out1 = root.path().join("a");
    let out2 = root.path().join("b");
    let c1 = write_config(root.path(), "a.json", simulate_config(&out1));
    let c2 = write_config(root.path(), "b.json", simulate_config(&out2));
    assert!(nrss(&["simulate", "--config", &c1, "--seed", "5"], &[]).status.success());
    assert!(nrss(&["simulate", "--config", &c2, "--seed", "5"], &[]).status.success());
    for name in ["genotypes.csv", "connectomes.csv", "truth.csv", "snp_sets.csv"] {
        assert_eq!(
            std::fs::read(out1.join(name)).unwrap(),
            std::fs::read(out2.join(name)).unwrap(),
            "{name} not reproducible"
        );
    }
}

#[test]
fn prior_check_emits_the_comparison_table() {
    let root = tempfile::tempdir().unwrap();
    let out_dir = root.path().join("prior");
    let cfg = write_config(
        root.path(),
        "prior.json",
        serde_json::json!({
            "out_dir": out_dir,
            "prior_check": {"n_draws": 30000}
        }),
    );
    let out = nrss(&["prior-check", "--config", &cfg], &[]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(out_dir.join("prior_check.csv")).unwrap();
    assert_eq!(table.lines().count(), 9);
    assert!(table.starts_with("case,analytic,monte_carlo,abs_error"));
}

#[test]
fn missing_inputs_exit_nonzero() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(
        root.path(),
        "bad.json",
        serde_json::json!({"out_dir": root.path().join("x")}),
    );
    let out = nrss(&["fit", "--config", &cfg], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("connectomes"), "unhelpful error: {err}");
}

#[test]
fn workers_env_var_is_used_only_without_the_flag() {
    let root = tempfile::tempdir().unwrap();
    let out_env = root.path().join("env");
    let cfg = write_config(root.path(), "w.json", simulate_config(&out_env));
    let out = nrss(
        &["simulate", "--config", &cfg],
        &[("NRSS_WORKERS", "3")],
    );
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_env.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["workers"], 3, "env var should apply without the flag");

    let out_flag = root.path().join("flag");
    let cfg2 = write_config(root.path(), "w2.json", simulate_config(&out_flag));
    let out = nrss(
        &["simulate", "--config", &cfg2, "--workers", "2"],
        &[("NRSS_WORKERS", "5")],
    );
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_flag.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["workers"], 2, "flag must beat the env var");

    // A malformed env var is a configuration error.
    let out_bad = root.path().join("bad");
    let cfg3 = write_config(root.path(), "w3.json", simulate_config(&out_bad));
    let out = nrss(&["simulate", "--config", &cfg3], &[("NRSS_WORKERS", "lots")]);
    assert!(!out.status.success());
}
