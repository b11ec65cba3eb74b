//! Samplers over QUBO and factorization-machine energies.
//!
//! * [`brute_force_min`]: exhaustive minimum for small QUBOs (verification).
//! * [`boltzmann_sample`]: exact sampling from `exp(-beta * H_FM)` over the
//!   feasible one-hot states, with the partition function computed by full
//!   enumeration.
//! * [`simulated_anneal`]: single-flip Metropolis annealing on an arbitrary
//!   QUBO with a geometric inverse-temperature schedule.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::GridSpace;
use crate::error::{Error, Result};
use crate::fm::FmParams;
use crate::qubo::QuboMatrix;

pub const BRUTE_FORCE_MAX_BITS: usize = 24;
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Global minimum over all `2^n` assignments. Ties go to the assignment with
/// the smallest integer value (bit 0 least significant).
pub fn brute_force_min(q: &QuboMatrix) -> Result<(Vec<bool>, f64)> {
    let n = q.n();
    if n > BRUTE_FORCE_MAX_BITS {
        return Err(Error::TooLarge {
            what: "QUBO",
            size: 1u128 << n.min(127),
            limit: 1u128 << BRUTE_FORCE_MAX_BITS,
        });
    }
    let mut coupling = vec![0.0; n * n];
    let mut field = vec![0.0; n];
    let mut scale = q.offset().abs();
    for (i, j, value) in q.iter() {
        scale += value.abs();
        if i == j {
            field[i] += value;
        } else {
            coupling[i * n + j] += value;
            coupling[j * n + i] += value;
        }
    }
    let tie_tol = 1e-12 * (1.0 + scale);

    let mut state: u64 = 0;
    let mut energy = q.offset();
    let mut best = (0u64, energy);
    for k in 1u64..(1u64 << n) {
        let i = k.trailing_zeros() as usize;
        let was_set = state >> i & 1 == 1;
        let sign = if was_set { -1.0 } else { 1.0 };
        energy += sign * field[i];
        state ^= 1 << i;
        for j in 0..n {
            field[j] += sign * coupling[i * n + j];
        }
        if energy < best.1 - tie_tol || (energy <= best.1 + tie_tol && state < best.0) {
            best = (state, energy);
        }
    }
    let bits: Vec<bool> = (0..n).map(|i| best.0 >> i & 1 == 1).collect();
    let exact = q.energy(&bits)?;
    Ok((bits, exact))
}

fn check_enumerable(space: &GridSpace) -> Result<()> {
    let size = space.n_combinations();
    if size > ENUMERATION_LIMIT {
        Err(Error::TooLarge {
            what: "feasible space",
            size,
            limit: ENUMERATION_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// Every feasible grid point in lexicographic index order (last block
/// varies fastest), paired with its one-hot bit-vector.
pub fn enumerate_feasible(space: &GridSpace) -> Result<FeasibleIter<'_>> {
    check_enumerable(space)?;
    Ok(FeasibleIter {
        space,
        next: Some(vec![0; space.n_blocks()]),
    })
}

pub struct FeasibleIter<'a> {
    space: &'a GridSpace,
    next: Option<Vec<usize>>,
}

impl Iterator for FeasibleIter<'_> {
    type Item = (Vec<usize>, Vec<bool>);

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carried = true;
        for (c, block) in succ.iter_mut().zip(self.space.blocks()).rev() {
            *c += 1;
            if *c < block.count {
                carried = false;
                break;
            }
            *c = 0;
        }
        if !carried {
            self.next = Some(succ);
        }
        let bits = self.space.encode(&current).expect("indices in range");
        Some((current, bits))
    }
}

/// Grid indices of the `rank`-th feasible point in lexicographic order.
pub fn unrank_feasible(space: &GridSpace, mut rank: usize) -> Vec<usize> {
    let mut out = vec![0; space.n_blocks()];
    for (c, block) in out.iter_mut().zip(space.blocks()).rev() {
        *c = rank % block.count;
        rank /= block.count;
    }
    out
}

/// `predict` at every feasible point, in lexicographic order.
pub fn feasible_energies(params: &FmParams, space: &GridSpace) -> Result<Vec<f64>> {
    check_enumerable(space)?;
    if params.n_bits() != space.n_bits() {
        return Err(Error::DimensionMismatch {
            expected: space.n_bits(),
            actual: params.n_bits(),
        });
    }
    let total = space.n_combinations() as usize;
    Ok((0..total)
        .into_par_iter()
        .map(|r| {
            let active = space
                .active_bits(&unrank_feasible(space, r))
                .expect("indices in range");
            params.predict_active(&active)
        })
        .collect())
}

fn boltzmann_weights(energies: &[f64], beta: f64) -> Vec<f64> {
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    energies.iter().map(|e| (-beta * (e - min)).exp()).collect()
}

/// Exact Boltzmann probabilities over the feasible points, lexicographic order.
pub fn boltzmann_probabilities(params: &FmParams, space: &GridSpace, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let weights = boltzmann_weights(&feasible_energies(params, space)?, beta);
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "inverse temperature must be positive, got {beta}"
        )))
    }
}

/// Draws `count` independent feasible points with probability proportional
/// to `exp(-beta * predict)`.
pub fn boltzmann_sample(
    params: &FmParams,
    space: &GridSpace,
    beta: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    check_beta(beta)?;
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let weights = boltzmann_weights(&feasible_energies(params, space)?, beta);
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidArgument(format!("degenerate Boltzmann weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| unrank_feasible(space, dist.sample(&mut rng)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub sweeps: usize,
    pub reads: usize,
    pub seed: u64,
}

impl AnnealSchedule {
    /// `0.1 / <|Q|>` to `50 / <|Q|>` over 1000 sweeps, where `<|Q|>` is the
    /// mean absolute nonzero coefficient.
    pub fn scaled_to(q: &QuboMatrix, reads: usize, seed: u64) -> Self {
        let scale = q.mean_abs_coefficient();
        Self {
            beta_start: 0.1 / scale,
            beta_end: 50.0 / scale,
            sweeps: 1000,
            reads,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_start > 0.0 && self.beta_end >= self.beta_start && self.beta_end.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "schedule needs 0 < beta_start <= beta_end, got {} -> {}",
                self.beta_start, self.beta_end
            )));
        }
        if self.sweeps == 0 || self.reads == 0 {
            return Err(Error::InvalidArgument(
                "sweeps and reads must be positive".into(),
            ));
        }
        Ok(())
    }

    fn beta_at(&self, sweep: usize) -> f64 {
        if self.sweeps == 1 {
            return self.beta_end;
        }
        let frac = sweep as f64 / (self.sweeps - 1) as f64;
        self.beta_start * (self.beta_end / self.beta_start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub bits: Vec<bool>,
    pub energy: f64,
    pub count: usize,
}

/// Distinct final states sorted by ascending energy, with occurrence counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    samples: Vec<Sample>,
}

impl SampleSet {
    fn from_reads(mut reads: Vec<(Vec<bool>, f64)>) -> Self {
        reads.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        let mut samples: Vec<Sample> = Vec::new();
        for (bits, energy) in reads {
            match samples.last_mut() {
                Some(last) if last.bits == bits => last.count += 1,
                _ => samples.push(Sample {
                    bits,
                    energy,
                    count: 1,
                }),
            }
        }
        Self { samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn best(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn num_reads(&self) -> usize {
        self.samples.iter().map(|s| s.count).sum()
    }

    /// Every read, lowest energy first, duplicates repeated `count` times.
    pub fn reads(&self) -> impl Iterator<Item = &Sample> {
        self.samples
            .iter()
            .flat_map(|s| std::iter::repeat_n(s, s.count))
    }
}

struct Couplings {
    diag: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl Couplings {
    fn new(q: &QuboMatrix) -> Self {
        let n = q.n();
        let mut diag = vec![0.0; n];
        let mut neighbors = vec![Vec::new(); n];
        for (i, j, value) in q.iter() {
            if i == j {
                diag[i] += value;
            } else if value != 0.0 {
                neighbors[i].push((j, value));
                neighbors[j].push((i, value));
            }
        }
        Self { diag, neighbors }
    }

    fn local_fields(&self, x: &[bool]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                self.diag[i]
                    + self.neighbors[i]
                        .iter()
                        .filter(|(j, _)| x[*j])
                        .map(|(_, w)| w)
                        .sum::<f64>()
            })
            .collect()
    }
}

fn anneal_once(couplings: &Couplings, schedule: &AnnealSchedule, read: usize) -> Vec<bool> {
    let n = couplings.diag.len();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(read as u64);
    let mut x: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let mut field = couplings.local_fields(&x);
    let mut order: Vec<usize> = (0..n).collect();
    for sweep in 0..schedule.sweeps {
        let beta = schedule.beta_at(sweep);
        order.shuffle(&mut rng);
        for &i in &order {
            let delta = if x[i] { -field[i] } else { field[i] };
            if delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp() {
                let sign = if x[i] { -1.0 } else { 1.0 };
                x[i] = !x[i];
                for &(j, w) in &couplings.neighbors[i] {
                    field[j] += sign * w;
                }
            }
        }
    }
    x
}

/// Runs `schedule.reads` independent annealing reads. Each read starts from
/// a uniformly random assignment and owns a generator stream derived from the
/// seed and its read index, so results do not depend on thread scheduling.
pub fn simulated_anneal(q: &QuboMatrix, schedule: &AnnealSchedule) -> Result<SampleSet> {
    schedule.validate()?;
    let couplings = Couplings::new(q);
    let reads: Vec<(Vec<bool>, f64)> = (0..schedule.reads)
        .into_par_iter()
        .map(|read| {
            let bits = anneal_once(&couplings, schedule, read);
            let energy = q.energy(&bits).expect("length n");
            (bits, energy)
        })
        .collect();
    Ok(SampleSet::from_reads(reads))
}
