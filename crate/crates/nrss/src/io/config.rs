//! Run configuration: a single JSON document. Every field has a default, and
//! the fully materialized configuration is echoed into the manifest so a run
//! can be reproduced from its outputs alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::Hyperparams;
use crate::simgen::{EffectMode, SignalPattern, SignalSpec, SliceStructure};
use crate::solver::FitOptions;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Blocks,
    Fit,
    Grid,
    Stability,
    Eval,
    PriorCheck,
    ExportPlot,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Blocks => "blocks",
            Mode::Fit => "fit",
            Mode::Grid => "grid",
            Mode::Stability => "stability",
            Mode::Eval => "eval",
            Mode::PriorCheck => "prior-check",
            Mode::ExportPlot => "export-plot",
        }
    }
}

/// Input file locations. Which ones are required depends on the mode.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub connectomes: Option<PathBuf>,
    pub genotypes: Option<PathBuf>,
    pub snp_sets: Option<PathBuf>,
    pub prior_network: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// A fit.json produced by the fit mode.
    pub fit: Option<PathBuf>,
    /// A stability.json produced by the stability mode.
    pub stability: Option<PathBuf>,
    /// 0-based genotype columns treated as unpenalized covariates.
    pub unpenalized: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternConfig {
    P1,
    P2,
    Sets { n_sets: usize, per_set: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureConfig {
    Clique,
    Rank3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectConfig {
    Fraction { fraction: f64, variance: f64 },
    Poisson { mean: f64, variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConfig {
    Sigma2(f64),
    TargetSnr(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkRuleConfig {
    AnySubject,
    AllSubjects,
    FromTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub n_subjects: usize,
    pub n_predictors: usize,
    pub block_size: usize,
    pub rho: f64,
    pub maf: [f64; 2],
    pub n_nodes: usize,
    pub pattern: PatternConfig,
    pub structure: StructureConfig,
    pub effect: EffectConfig,
    pub noise: NoiseConfig,
    pub network_rule: NetworkRuleConfig,
    /// Fraction of prior-network entries flipped after construction.
    pub corrupt_fraction: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_subjects: 300,
            n_predictors: 2000,
            block_size: 100,
            rho: 0.7,
            maf: [0.05, 0.5],
            n_nodes: 20,
            pattern: PatternConfig::P1,
            structure: StructureConfig::Clique,
            effect: EffectConfig::Fraction { fraction: 0.75, variance: 0.5 },
            noise: NoiseConfig::Sigma2(0.1),
            network_rule: NetworkRuleConfig::FromTruth,
            corrupt_fraction: 0.0,
        }
    }
}

impl SimulateConfig {
    pub fn signal_spec(&self) -> SignalSpec {
        let pattern = match self.pattern {
            PatternConfig::P1 => SignalPattern::P1,
            PatternConfig::P2 => SignalPattern::P2,
            PatternConfig::Sets { n_sets, per_set } => SignalPattern::Sets { n_sets, per_set },
        };
        let structure = match self.structure {
            StructureConfig::Clique => SliceStructure::Clique,
            StructureConfig::Rank3 => SliceStructure::Rank3,
        };
        let effect = match self.effect {
            EffectConfig::Fraction { fraction, variance } => {
                EffectMode::Fraction { fraction, variance }
            }
            EffectConfig::Poisson { mean, variance } => EffectMode::Poisson { mean, variance },
        };
        SignalSpec { pattern, n_nodes: self.n_nodes, structure, effect, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct BlocksConfig {
    pub r2_threshold: f64,
    pub init_window: usize,
    pub fraction: f64,
}

impl Default for BlocksConfig {
    fn default() -> Self {
        BlocksConfig { r2_threshold: 0.02, init_window: 100, fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub lambda_h: Vec<f64>,
    pub lambda_f: Vec<f64>,
    /// Train and validation sizes; subjects beyond their sum are unused.
    pub split: [usize; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lambda_h: vec![0.05, 0.1, 0.2, 0.4],
            lambda_f: vec![0.05, 0.1, 0.2],
            split: [0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub n_runs: usize,
    /// Subjects per subsample; 0 means half of N.
    pub subsample: usize,
    pub target_fdr: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { n_runs: 100, subsample: 0, target_fdr: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Selection-probability cutoff for the confusion matrix; 0 means use
    /// the threshold stored in the stability output.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorCheckConfig {
    pub n_draws: usize,
}

impl Default for PriorCheckConfig {
    fn default() -> Self {
        PriorCheckConfig { n_draws: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Manhattan,
    Density,
    Trace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportPlotConfig {
    pub kind: PlotKind,
    /// Density panel settings: psi values to overlay.
    pub psi: Vec<f64>,
    pub n_draws: usize,
    pub grid_half_width: f64,
    pub grid_points: usize,
}

impl Default for ExportPlotConfig {
    fn default() -> Self {
        ExportPlotConfig {
            kind: PlotKind::Trace,
            psi: vec![0.0],
            n_draws: 200_000,
            grid_half_width: 8.0,
            grid_points: 321,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 defers to the CLI flag or environment.
    pub workers: usize,
    pub data: DataPaths,
    pub hyper: Hyperparams,
    pub fit: FitOptions,
    pub simulate: SimulateConfig,
    pub blocks: BlocksConfig,
    pub grid: GridConfig,
    pub stability: StabilityConfig,
    pub eval: EvalConfig,
    pub prior_check: PriorCheckConfig,
    pub export_plot: ExportPlotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            workers: 0,
            data: DataPaths::default(),
            hyper: Hyperparams::default(),
            fit: FitOptions::default(),
            simulate: SimulateConfig::default(),
            blocks: BlocksConfig::default(),
            grid: GridConfig::default(),
            stability: StabilityConfig::default(),
            eval: EvalConfig::default(),
            prior_check: PriorCheckConfig::default(),
            export_plot: ExportPlotConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Effective worker count: the config value, or 1 when unset.
    pub fn effective_workers(&self) -> usize {
        if self.workers == 0 {
            1
        } else {
            self.workers
        }
    }

    fn require(&self, path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        match path {
            Some(p) => {
                if p.exists() {
                    Ok(p.clone())
                } else {
                    Err(Error::invalid(format!(
                        "{what} file '{}' does not exist",
                        p.display()
                    )))
                }
            }
            None => Err(Error::invalid(format!("this mode requires data.{what}"))),
        }
    }

    pub fn require_connectomes(&self) -> Result<PathBuf> {
        self.require(&self.data.connectomes, "connectomes")
    }

    pub fn require_genotypes(&self) -> Result<PathBuf> {
        self.require(&self.data.genotypes, "genotypes")
    }

    pub fn require_snp_sets(&self) -> Result<PathBuf> {
        self.require(&self.data.snp_sets, "snp_sets")
    }

    pub fn require_truth(&self) -> Result<PathBuf> {
        self.require(&self.data.truth, "truth")
    }

    pub fn require_fit(&self) -> Result<PathBuf> {
        self.require(&self.data.fit, "fit")
    }

    pub fn require_stability(&self) -> Result<PathBuf> {
        self.require(&self.data.stability, "stability")
    }
}
