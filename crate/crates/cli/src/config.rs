//! Experiment configuration.
//!
//! A config file is TOML. Any key left out takes the preset value for the
//! chosen objective, so an empty file is a valid config. Unknown keys are
//! errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fsrfm::objectives::bubble::IntegratorOptions;
use fsrfm::objectives::H3Config;
use fsrfm::{
    AcousticDrive, AlphaPolicy, Block, LoopConfig, MarmottantParams, SamplerConfig, TrainConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    H1,
    H2,
    H3,
    /// H3 fitted against a reference trajectory read from `reference_csv`.
    ExternalCsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveKind,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Replaces the objective's default grid (H1 and H2 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Block>>,
    /// `t_us,R_um` trajectory used as the reference for `external-csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_csv: Option<PathBuf>,
    pub fmqa: LoopConfig,
    pub h3: H3Config,
    pub surface: SurfaceSection,
    pub bench_h2: BenchH2Section,
    pub optimize: OptimizeSection,
    pub bubble: BubbleSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    /// Loop steps after which the surrogate surface is written.
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchH2Section {
    pub n_samples: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub ranks: Vec<usize>,
    pub n_test: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    /// Also run every seed with `lambda_sr = 0`.
    pub compare_naive: bool,
    /// Success means best-so-far within `tolerance` of the known minimum.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleSection {
    pub params: MarmottantParams,
    pub drive: AcousticDrive,
    /// s
    pub t_end: f64,
    pub n_out: usize,
    pub integrator: IntegratorOptions,
}

impl Default for BubbleSection {
    fn default() -> Self {
        Self {
            params: MarmottantParams::default(),
            drive: AcousticDrive::default(),
            t_end: 10e-6,
            n_out: 201,
            integrator: IntegratorOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for each objective.
    pub fn preset(objective: ObjectiveKind) -> Self {
        let fmqa = match objective {
            ObjectiveKind::H1 => LoopConfig {
                sampler: SamplerConfig::Boltzmann { beta: 20.0 },
                train: TrainConfig {
                    n_updates: 3000,
                    lambda_sr: 0.1,
                    ..TrainConfig::default()
                },
                ..LoopConfig::default()
            },
            // 101^4 states cannot be enumerated, so H2 anneals
            ObjectiveKind::H2 | ObjectiveKind::H3 | ObjectiveKind::ExternalCsv => LoopConfig {
                sampler: SamplerConfig::SimulatedAnnealing {
                    sweeps: 1000,
                    beta_start: None,
                    beta_end: None,
                },
                train: TrainConfig {
                    n_updates: 1000,
                    lambda_sr: 0.1,
                    ..TrainConfig::default()
                },
                alpha: AlphaPolicy::Local(0.5),
                ..LoopConfig::default()
            },
        };
        let seeds = match objective {
            ObjectiveKind::H1 => (0..8).collect(),
            ObjectiveKind::H2 => (0..8).collect(),
            ObjectiveKind::H3 | ObjectiveKind::ExternalCsv => (0..16).collect(),
        };
        Self {
            objective,
            seeds,
            out: None,
            grid: None,
            reference_csv: None,
            fmqa,
            h3: H3Config::default(),
            surface: SurfaceSection {
                steps: vec![1, 2, 8, 16],
            },
            bench_h2: BenchH2Section {
                n_samples: vec![10, 50, 100, 500, 1000],
                lambdas: vec![0.0, 0.1, 1.0, 10.0],
                ranks: vec![16, 4],
                n_test: 2000,
                train: TrainConfig::default(),
            },
            optimize: OptimizeSection {
                compare_naive: true,
                tolerance: 0.01,
            },
            bubble: BubbleSection::default(),
        }
    }

    /// Parses `text`, filling absent keys from the preset of `objective`
    /// (or of `default_objective` when the document does not name one).
    pub fn from_toml(text: &str, default_objective: ObjectiveKind) -> Result<Self> {
        let user: toml::Table = text.parse().context("config is not valid TOML")?;
        let objective = match user.get("objective") {
            Some(v) => ObjectiveKind::deserialize(v.clone())
                .with_context(|| format!("unknown objective {v}"))?,
            None => default_objective,
        };
        let mut merged = toml::Value::try_from(Self::preset(objective))?;
        merge(&mut merged, toml::Value::Table(user));
        let config: Self = merged.try_into().context("invalid config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, default_objective: ObjectiveKind) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text, default_objective)
            .with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        self.fmqa
            .validate()
            .context("invalid [fmqa] section")?;
        self.bench_h2.train.validate().context("invalid [bench_h2.train]")?;
        if self.bench_h2.n_test == 0
            || self.bench_h2.n_samples.contains(&0)
            || self.bench_h2.ranks.contains(&0)
        {
            bail!("bench_h2 sample counts, ranks and n_test must be positive");
        }
        if self.bench_h2.lambdas.iter().any(|l| !(*l >= 0.0)) {
            bail!("bench_h2 lambdas must be non-negative");
        }
        if !(self.optimize.tolerance > 0.0) {
            bail!("optimize.tolerance must be positive");
        }
        if self.grid.is_some()
            && matches!(self.objective, ObjectiveKind::H3 | ObjectiveKind::ExternalCsv)
        {
            bail!("grid overrides apply to h1 and h2; set the h3 blocks in [h3]");
        }
        if self.objective == ObjectiveKind::ExternalCsv && self.reference_csv.is_none() {
            bail!("objective external-csv needs reference_csv");
        }
        Ok(())
    }
}

/// Recursive table merge. A single-key table replacing a single-key table
/// with a different key is an enum variant switch and replaces wholesale.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            let variant_switch = b.len() == 1
                && o.len() == 1
                && b.keys().next() != o.keys().next();
            if variant_switch {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
