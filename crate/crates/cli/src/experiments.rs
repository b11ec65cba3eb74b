//! Experiment drivers shared by the subcommands and the acceptance suite.

use anyhow::{bail, Context, Result};
use fsrfm::anneal::unrank_feasible;
use fsrfm::engine::{derive_seed, run_trial_with};
use fsrfm::objectives::{H3Config, H3};
use fsrfm::{
    init_params, r_squared, r_squared_standard, run_trials, success_count, train, BubbleTrajectory,
    FmParams, GridSpace, LoopConfig, Objective, TrainConfig, TrainingSet, TrialResult, H1, H2,
};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{BenchH2Section, ExperimentConfig, ObjectiveKind};

const TAG_H2_TEST: u64 = 101;
const TAG_H2_TRAIN: u64 = 102;
const TAG_H2_INIT: u64 = 103;

pub fn build_objective(config: &ExperimentConfig) -> Result<Box<dyn Objective>> {
    Ok(match config.objective {
        ObjectiveKind::H1 => Box::new(match &config.grid {
            Some(blocks) => H1::with_space(GridSpace::new(blocks.clone())?)?,
            None => H1::new(),
        }),
        ObjectiveKind::H2 => Box::new(match &config.grid {
            Some(blocks) => H2::with_space(GridSpace::new(blocks.clone())?)?,
            None => H2::new(),
        }),
        ObjectiveKind::H3 => Box::new(H3::new(config.h3.clone())?),
        ObjectiveKind::ExternalCsv => {
            let path = config
                .reference_csv
                .as_ref()
                .context("external-csv needs reference_csv")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let reference = BubbleTrajectory::from_csv(&text)
                .with_context(|| format!("bad trajectory in {}", path.display()))?;
            Box::new(external_h3(config.h3.clone(), reference)?)
        }
    })
}

pub fn external_h3(config: H3Config, reference: BubbleTrajectory) -> Result<H3> {
    Ok(H3::with_reference(config, reference)?)
}

/// Mean squared error of the surrogate over the whole grid.
pub fn grid_mse(objective: &dyn Objective, params: &FmParams) -> Result<f64> {
    let space = objective.space();
    let total = space.n_combinations();
    if total > 10_000_000 {
        bail!("grid of {total} points is too large for a full-grid error");
    }
    let total = total as usize;
    let sum: f64 = (0..total)
        .into_par_iter()
        .map(|r| {
            let idx = unrank_feasible(space, r);
            let bits = space.active_bits(&idx).expect("valid indices");
            (params.predict_active(&bits) - objective.evaluate(&idx)).powi(2)
        })
        .sum();
    Ok(sum / total as f64)
}

/// The surrogate and the data right after one loop step.
#[derive(Debug, Clone)]
pub struct SurfaceSnapshot {
    pub step: usize,
    pub params: FmParams,
    /// Points known before the step (the training data of `params`).
    pub known: Vec<(Vec<usize>, f64)>,
    /// Points proposed and evaluated in the step.
    pub new: Vec<(Vec<usize>, f64)>,
}

/// One trial that keeps the surrogate of every step listed in `steps`.
pub fn surface_run(
    objective: &dyn Objective,
    config: &LoopConfig,
    steps: &[usize],
) -> Result<(TrialResult, Vec<SurfaceSnapshot>)> {
    let mut snaps = Vec::new();
    let trial = run_trial_with(objective, config, |step, params, dataset| {
        if steps.contains(&step) {
            let split = dataset.len() - config.reads_per_step;
            let pairs = |range: std::ops::Range<usize>| {
                range
                    .map(|m| (dataset.points[m].clone(), dataset.values[m]))
                    .collect::<Vec<_>>()
            };
            snaps.push(SurfaceSnapshot {
                step,
                params: params.clone(),
                known: pairs(0..split),
                new: pairs(split..dataset.len()),
            });
        }
    })?;
    Ok((trial, snaps))
}

/// Test-set predictions for one `(n_samples, lambda_sr, rank)` cell.
#[derive(Debug, Clone)]
pub struct H2Condition {
    pub seed: u64,
    pub n_samples: usize,
    pub lambda_sr: f64,
    pub rank: usize,
    pub truths: Vec<f64>,
    pub predictions: Vec<f64>,
    /// NaN when the predictions are constant.
    pub r2_centred: f64,
    pub r2_standard: f64,
}

fn distinct_points(space: &GridSpace, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let total = space.n_combinations();
    if (n as u128) > total || total > usize::MAX as u128 {
        bail!("cannot draw {n} distinct points from {total}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_indices(&mut rng, total as usize, n)
        .into_iter()
        .map(|r| unrank_feasible(space, r))
        .collect())
}

/// Generalization sweep: surrogates trained once on uniform random data and
/// scored on an independent uniform test set. Training data depend on
/// `(seed, n_samples)` only, so every lambda and rank sees the same points.
pub fn bench_h2(
    objective: &dyn Objective,
    section: &BenchH2Section,
    seed: u64,
) -> Result<Vec<H2Condition>> {
    let space = objective.space();
    let adjacency = space.adjacency_pairs();
    let test = distinct_points(space, section.n_test, derive_seed(seed, TAG_H2_TEST, 0))?;
    let truths: Vec<f64> = test.iter().map(|p| objective.evaluate(p)).collect();
    let test_bits: Vec<Vec<usize>> = test
        .iter()
        .map(|p| space.active_bits(p).expect("valid"))
        .collect();

    let mut cells = Vec::new();
    for &n in &section.n_samples {
        for &rank in &section.ranks {
            for &lambda in &section.lambdas {
                cells.push((n, rank, lambda));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(n, rank, lambda_sr)| {
            let points = distinct_points(space, n, derive_seed(seed, TAG_H2_TRAIN, n as u64))?;
            let mut data = TrainingSet::new(space.n_bits());
            for p in &points {
                data.push_active(space.active_bits(p)?, objective.evaluate(p))?;
            }
            let cfg = TrainConfig {
                lambda_sr,
                ..section.train.clone()
            };
            let init_seed = derive_seed(seed, TAG_H2_INIT, (n as u64) << 8 | rank as u64);
            let start = init_params(space.n_bits(), rank, cfg.init_scale, init_seed)?;
            let (params, _) = train(start, &data, &cfg, &adjacency)?;
            let predictions: Vec<f64> =
                test_bits.iter().map(|b| params.predict_active(b)).collect();
            Ok(H2Condition {
                seed,
                n_samples: n,
                lambda_sr,
                rank,
                r2_centred: r_squared(&predictions, &truths).unwrap_or(f64::NAN),
                r2_standard: r_squared_standard(&predictions, &truths).unwrap_or(f64::NAN),
                truths: truths.clone(),
                predictions,
            })
        })
        .collect()
}

/// Trials of one loop variant over a seed list.
#[derive(Debug)]
pub struct OptimizeRun {
    pub variant: &'static str,
    pub lambda_sr: f64,
    pub trials: Vec<(u64, fsrfm::Result<TrialResult>)>,
    /// Per step, over the successful trials.
    pub success: Vec<usize>,
}

impl OptimizeRun {
    pub fn completed(&self) -> Vec<TrialResult> {
        self.trials
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok().cloned())
            .collect()
    }
}

/// Runs the configured loop (`fsr`) and, if asked, the same loop with
/// `lambda_sr = 0` (`naive`).
pub fn optimize(
    objective: &dyn Objective,
    config: &LoopConfig,
    seeds: &[u64],
    compare_naive: bool,
    tolerance: f64,
) -> Result<Vec<OptimizeRun>> {
    let h_min = objective.known_minimum().unwrap_or(0.0);
    let mut variants = vec![("fsr", config.train.lambda_sr)];
    if compare_naive {
        variants.push(("naive", 0.0));
    }
    variants
        .into_iter()
        .map(|(variant, lambda_sr)| {
            let mut cfg = config.clone();
            cfg.train.lambda_sr = lambda_sr;
            let results = run_trials(objective, &cfg, seeds);
            let trials: Vec<(u64, fsrfm::Result<TrialResult>)> =
                seeds.iter().copied().zip(results).collect();
            let done: Vec<TrialResult> = trials
                .iter()
                .filter_map(|(_, r)| r.as_ref().ok().cloned())
                .collect();
            let success = success_count(&done, h_min, tolerance)?;
            Ok(OptimizeRun {
                variant,
                lambda_sr,
                trials,
                success,
            })
        })
        .collect()
}

/// First step at which `counts` reaches `target`, if ever.
pub fn first_step_reaching(counts: &[usize], target: usize) -> Option<usize> {
    counts.iter().position(|&c| c >= target)
}
