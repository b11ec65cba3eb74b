//! The FMQA loop: train a surrogate on the known points, sample new
//! candidates from it, evaluate them on the true objective, repeat.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{boltzmann_sample, simulated_anneal, unrank_feasible, AnnealSchedule};
use crate::encoding::{AlphaPolicy, GridSpace};
use crate::error::{Error, Result};
use crate::fm::{init_params, train, FmParams, TrainConfig, TrainingSet};
use crate::objectives::Objective;

/// Known evaluation points (as grid indices) and their true values, in
/// insertion order. `steps[m]` records the loop step that produced point `m`
/// (0 for the initial design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub space: GridSpace,
    pub points: Vec<Vec<usize>>,
    pub values: Vec<f64>,
    pub steps: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(space: GridSpace, seed: u64) -> Self {
        Self {
            space,
            points: Vec::new(),
            values: Vec::new(),
            steps: Vec::new(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Vec<usize>, value: f64, step: usize) -> Result<()> {
        self.space.check_indices(&point)?;
        self.points.push(point);
        self.values.push(value);
        self.steps.push(step);
        Ok(())
    }

    pub fn training_set(&self) -> TrainingSet {
        let mut data = TrainingSet::new(self.space.n_bits());
        for (p, &v) in self.points.iter().zip(&self.values) {
            data.push_active(self.space.active_bits(p).expect("validated on push"), v)
                .expect("bits in range");
        }
        data
    }

    pub fn best(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::min)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("bad dataset JSON: {e}")))?;
        if ds.points.len() != ds.values.len() || ds.points.len() != ds.steps.len() {
            return Err(Error::InvalidArgument("dataset columns differ in length".into()));
        }
        for p in &ds.points {
            ds.space.check_indices(p)?;
        }
        Ok(ds)
    }
}

/// `n_init` distinct grid points drawn uniformly without replacement.
pub fn init_dataset(objective: &dyn Objective, n_init: usize, seed: u64) -> Result<Dataset> {
    let space = objective.space().clone();
    let total = space.n_combinations();
    if n_init == 0 || n_init as u128 > total {
        return Err(Error::InvalidArgument(format!(
            "n_init must be in 1..={total}, got {n_init}"
        )));
    }
    let total = usize::try_from(total).map_err(|_| Error::TooLarge {
        what: "grid",
        size: total,
        limit: usize::MAX as u128,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranks = sample_indices(&mut rng, total, n_init).into_vec();
    let points: Vec<Vec<usize>> = ranks.iter().map(|&r| unrank_feasible(&space, r)).collect();
    let values: Vec<f64> = points.par_iter().map(|p| objective.evaluate(p)).collect();
    let mut ds = Dataset::new(space, seed);
    for (p, v) in points.into_iter().zip(values) {
        ds.push(p, v, 0)?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    /// Exact sampling from `exp(-beta * H_FM)` over the feasible grid.
    Boltzmann { beta: f64 },
    /// Annealing on the assembled QUBO. Unset betas default to
    /// `0.1 / <|Q|>` and `50 / <|Q|>`.
    SimulatedAnnealing {
        sweeps: usize,
        #[serde(default)]
        beta_start: Option<f64>,
        #[serde(default)]
        beta_end: Option<f64>,
    },
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::Boltzmann { beta: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub n_init: usize,
    pub n_steps: usize,
    pub reads_per_step: usize,
    pub sampler: SamplerConfig,
    /// `train.seed` is ignored; per-step initialization seeds derive from `seed`.
    pub train: TrainConfig,
    pub rank: usize,
    pub alpha: AlphaPolicy,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            n_init: 16,
            n_steps: 16,
            reads_per_step: 16,
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            rank: 16,
            alpha: AlphaPolicy::default(),
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.n_steps == 0 || self.reads_per_step == 0 || self.rank == 0 {
            return Err(Error::InvalidArgument(
                "n_init, n_steps, reads_per_step and rank must be positive".into(),
            ));
        }
        self.train.validate()?;
        match self.sampler {
            SamplerConfig::Boltzmann { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                Error::InvalidArgument(format!("beta must be positive, got {beta}")),
            ),
            SamplerConfig::SimulatedAnnealing { sweeps: 0, .. } => {
                Err(Error::InvalidArgument("sweeps must be positive".into()))
            }
            _ => {
                if let AlphaPolicy::Fixed(a) | AlphaPolicy::Local(a) = self.alpha {
                    if !(a > 0.0 && a.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "alpha must be positive, got {a}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// splitmix64 finalizer over a seed and a small tag tuple.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_INIT_DATA: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_SAMPLE: u64 = 3;

/// Maximum extra sampling rounds when annealing reads come back infeasible.
pub const SA_RETRY_ROUNDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub points: Vec<Vec<usize>>,
    pub values: Vec<f64>,
    /// Regularized training loss before each update.
    pub loss_history: Vec<f64>,
    /// Penalty strength used for the QUBO, when annealing.
    pub alpha: Option<f64>,
    /// Annealing reads discarded because they violated one-hot.
    pub infeasible_reads: usize,
}

struct Candidates {
    points: Vec<Vec<usize>>,
    alpha: Option<f64>,
    infeasible: usize,
}

fn sample_candidates(
    params: &FmParams,
    space: &GridSpace,
    config: &LoopConfig,
    step: usize,
) -> Result<Candidates> {
    let want = config.reads_per_step;
    match config.sampler {
        SamplerConfig::Boltzmann { beta } => Ok(Candidates {
            points: boltzmann_sample(
                params,
                space,
                beta,
                want,
                derive_seed(config.seed, TAG_SAMPLE, step as u64),
            )?,
            alpha: None,
            infeasible: 0,
        }),
        SamplerConfig::SimulatedAnnealing {
            sweeps,
            beta_start,
            beta_end,
        } => {
            let alpha = config.alpha.resolve(params, space);
            let q = space.assemble_qubo(params, alpha)?;
            let defaults = AnnealSchedule::scaled_to(&q, want, 0);
            let mut points = Vec::with_capacity(want);
            let mut infeasible = 0;
            for round in 0..=SA_RETRY_ROUNDS {
                let schedule = AnnealSchedule {
                    beta_start: beta_start.unwrap_or(defaults.beta_start),
                    beta_end: beta_end.unwrap_or(defaults.beta_end),
                    sweeps,
                    reads: want - points.len(),
                    seed: derive_seed(config.seed, TAG_SAMPLE, (step * 16 + round) as u64),
                };
                let set = simulated_anneal(&q, &schedule)?;
                for read in set.reads() {
                    match space.decode(&read.bits) {
                        Ok(idx) => points.push(idx),
                        Err(_) => infeasible += 1,
                    }
                }
                if points.len() >= want {
                    break;
                }
            }
            if points.is_empty() {
                return Err(Error::NoFeasibleCandidate {
                    rounds: SA_RETRY_ROUNDS + 1,
                });
            }
            // keep the per-step count fixed by cycling the feasible reads
            let found = points.len();
            for k in found..want {
                points.push(points[k % found].clone());
            }
            Ok(Candidates {
                points,
                alpha: Some(alpha),
                infeasible,
            })
        }
    }
}

/// Trains a fresh (or warm-started) surrogate on `dataset`.
pub fn train_surrogate(
    dataset: &Dataset,
    config: &LoopConfig,
    step: usize,
    warm: Option<&FmParams>,
) -> Result<(FmParams, Vec<f64>)> {
    let space = &dataset.space;
    let start = match warm {
        Some(p) if config.train.warm_start => p.clone(),
        _ => init_params(
            space.n_bits(),
            config.rank,
            config.train.init_scale,
            derive_seed(config.seed, TAG_TRAIN, step as u64),
        )?,
    };
    train(
        start,
        &dataset.training_set(),
        &config.train,
        &space.adjacency_pairs(),
    )
}

/// One loop iteration: train, sample `reads_per_step` candidates, evaluate
/// them and append every candidate (duplicates included) to `dataset`.
/// Returns the step record and the surrogate trained in this step.
pub fn fmqa_step(
    dataset: &mut Dataset,
    objective: &dyn Objective,
    config: &LoopConfig,
    step: usize,
    warm: Option<&FmParams>,
) -> Result<(StepRecord, FmParams)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (params, loss_history) = train_surrogate(dataset, config, step, warm)?;
    let candidates = sample_candidates(&params, &dataset.space, config, step)?;
    let values: Vec<f64> = candidates
        .points
        .par_iter()
        .map(|p| objective.evaluate(p))
        .collect();
    for (p, &v) in candidates.points.iter().zip(&values) {
        dataset.push(p.clone(), v, step)?;
    }
    Ok((
        StepRecord {
            step,
            points: candidates.points,
            values,
            loss_history,
            alpha: candidates.alpha,
            infeasible_reads: candidates.infeasible,
        },
        params,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    /// `records[0]` is the initial design (step 0), then one per loop step.
    pub records: Vec<StepRecord>,
    /// Running minimum of all values seen up to and including each step.
    pub best_so_far: Vec<f64>,
    pub dataset: Dataset,
}

impl TrialResult {
    pub fn n_steps(&self) -> usize {
        self.records.len() - 1
    }

    /// `step,rank,value` rows, one per evaluated point in step order.
    pub fn evaluations_csv(&self) -> String {
        let mut out = String::from("step,rank,value\n");
        for r in &self.records {
            for (k, v) in r.values.iter().enumerate() {
                writeln!(out, "{},{},{}", r.step, k, v).expect("writing to a String");
            }
        }
        out
    }
}

/// Runs a full trial and calls `observe(step, surrogate, dataset)` after each
/// loop step.
pub fn run_trial_with<F>(objective: &dyn Objective, config: &LoopConfig, mut observe: F) -> Result<TrialResult>
where
    F: FnMut(usize, &FmParams, &Dataset),
{
    config.validate()?;
    let mut dataset = init_dataset(
        objective,
        config.n_init,
        derive_seed(config.seed, TAG_INIT_DATA, 0),
    )?;
    dataset.seed = config.seed;
    let initial = StepRecord {
        step: 0,
        points: dataset.points.clone(),
        values: dataset.values.clone(),
        loss_history: Vec::new(),
        alpha: None,
        infeasible_reads: 0,
    };
    let mut best = dataset.best().expect("non-empty");
    let mut best_so_far = vec![best];
    let mut records = vec![initial];
    let mut previous: Option<FmParams> = None;
    for step in 1..=config.n_steps {
        let (record, params) = fmqa_step(&mut dataset, objective, config, step, previous.as_ref())
            .map_err(|e| Error::Step {
                step,
                source: Box::new(e),
            })?;
        observe(step, &params, &dataset);
        best = record.values.iter().copied().fold(best, f64::min);
        best_so_far.push(best);
        records.push(record);
        previous = Some(params);
    }
    Ok(TrialResult {
        seed: config.seed,
        records,
        best_so_far,
        dataset,
    })
}

pub fn run_trial(objective: &dyn Objective, config: &LoopConfig) -> Result<TrialResult> {
    run_trial_with(objective, config, |_, _, _| {})
}

/// Independent trials, one per seed, run concurrently. Results keep seed order.
pub fn run_trials(
    objective: &dyn Objective,
    config: &LoopConfig,
    seeds: &[u64],
) -> Vec<Result<TrialResult>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LoopConfig {
                seed,
                ..config.clone()
            };
            run_trial(objective, &cfg)
        })
        .collect()
}

/// Per step, the number of trials whose best-so-far is within `tol` of `h_min`.
pub fn success_count(trials: &[TrialResult], h_min: f64, tol: f64) -> Result<Vec<usize>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let Some(first) = trials.first() else {
        return Ok(Vec::new());
    };
    let len = first.best_so_far.len();
    if let Some(bad) = trials.iter().find(|t| t.best_so_far.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: bad.best_so_far.len(),
        });
    }
    Ok((0..len)
        .map(|s| {
            trials
                .iter()
                .filter(|t| t.best_so_far[s] <= h_min + tol)
                .count()
        })
        .collect())
}

fn check_pair(predictions: &[f64], truths: &[f64]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `1 - sum (p - h)^2 / sum (p - mean(p))^2`: the denominator centres the
/// predictions, not the truths.
pub fn r_squared(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(predictions, truths)?;
    let mp = mean(predictions);
    let ss_res: f64 = predictions.iter().zip(truths).map(|(p, h)| (p - h).powi(2)).sum();
    let ss_pred: f64 = predictions.iter().map(|p| (p - mp).powi(2)).sum();
    if ss_pred == 0.0 {
        return Err(Error::ConstantPredictions);
    }
    Ok(1.0 - ss_res / ss_pred)
}

/// Conventional coefficient of determination (centres the truths).
pub fn r_squared_standard(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(predictions, truths)?;
    let mh = mean(truths);
    let ss_res: f64 = predictions.iter().zip(truths).map(|(p, h)| (p - h).powi(2)).sum();
    let ss_tot: f64 = truths.iter().map(|h| (h - mh).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantPredictions);
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::H1;

    #[test]
    fn r_squared_examples() {
        let x = [1.0, 2.0, 4.0];
        assert_eq!(r_squared(&x, &x).unwrap(), 1.0);
        assert_eq!(r_squared(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(r_squared(&[0.0, 4.0], &[3.0, 3.0]).unwrap() < 0.0);
        assert_eq!(r_squared(&[1.0, 1.0], &[0.0, 2.0]), Err(Error::ConstantPredictions));
        assert!(r_squared(&[1.0], &[1.0, 2.0]).is_err());
        assert!(r_squared(&[], &[]).is_err());
        assert_eq!(r_squared_standard(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn init_dataset_distinct_and_deterministic() {
        let h1 = H1::new();
        let ds = init_dataset(&h1, 16, 4).unwrap();
        assert_eq!(ds.len(), 16);
        let mut pts = ds.points.clone();
        pts.sort();
        pts.dedup();
        assert_eq!(pts.len(), 16);
        for (p, v) in ds.points.iter().zip(&ds.values) {
            assert_eq!(*v, h1.evaluate(p));
        }
        assert_eq!(ds, init_dataset(&h1, 16, 4).unwrap());
        assert!(init_dataset(&h1, 0, 4).is_err());
        assert!(init_dataset(&h1, 10202, 4).is_err());
    }

    #[test]
    fn init_dataset_can_exhaust_grid() {
        let space = GridSpace::uniform(2, -5.12, 5.12, 3).unwrap();
        let h1 = H1::with_space(space).unwrap();
        let mut ds = init_dataset(&h1, 9, 1).unwrap();
        ds.points.sort();
        assert_eq!(ds.points.len(), 9);
        ds.points.dedup();
        assert_eq!(ds.points.len(), 9);
    }

    fn fake_trial(best: Vec<f64>) -> TrialResult {
        TrialResult {
            seed: 0,
            records: Vec::new(),
            best_so_far: best,
            dataset: Dataset::new(GridSpace::uniform(1, 0.0, 1.0, 2).unwrap(), 0),
        }
    }

    #[test]
    fn success_count_cases() {
        let trials = vec![
            fake_trial(vec![5.0, 3.0, 3.0, 0.0, 0.0]),
            fake_trial(vec![4.0, 4.0, 2.0, 2.0, 1.0]),
        ];
        assert_eq!(success_count(&trials, 0.0, f64::INFINITY).unwrap(), vec![2; 5]);
        assert_eq!(success_count(&trials, 0.0, 0.01).unwrap(), vec![0, 0, 0, 1, 1]);
        assert_eq!(success_count(&trials, -10.0, 0.01).unwrap(), vec![0; 5]);
        assert!(success_count(&trials, 0.0, 0.0).is_err());
        let ragged = vec![fake_trial(vec![1.0]), fake_trial(vec![1.0, 0.0])];
        assert!(success_count(&ragged, 0.0, 1.0).is_err());
    }

    #[test]
    fn dataset_json_round_trip() {
        let ds = init_dataset(&H1::new(), 5, 2).unwrap();
        let back = Dataset::from_json(&ds.to_json()).unwrap();
        assert_eq!(ds, back);
        let mut broken = ds.clone();
        broken.values.pop();
        assert!(Dataset::from_json(&serde_json::to_string(&broken).unwrap()).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
        assert_eq!(derive_seed(7, 1, 1), derive_seed(7, 1, 1));
    }
}
