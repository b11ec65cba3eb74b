//! Second-order factorization machine used as the QUBO surrogate.
//!
//! The model is
//!
//! ```text
//! H_FM(x) = a + sum_i b_i x_i + sum_{i<j} <v_i, v_j> x_i x_j
//! ```
//!
//! over binary `x`, trained by full-batch AMSGRAD on the summed squared error,
//! optionally augmented with a smoothing penalty tying adjacent bits together
//! and a plain L2 penalty.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Factorization machine parameters: bias `a`, linear weights `b`, and one
/// rank-`K` factor row per bit in `v` (row-major, `N x K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FmParamsRepr", into = "FmParamsRepr")]
pub struct FmParams {
    a: f64,
    b: Vec<f64>,
    v: Vec<f64>,
    rank: usize,
}

#[derive(Serialize, Deserialize)]
struct FmParamsRepr {
    a: f64,
    b: Vec<f64>,
    v: Vec<Vec<f64>>,
}

impl TryFrom<FmParamsRepr> for FmParams {
    type Error = Error;

    fn try_from(repr: FmParamsRepr) -> Result<Self> {
        let n = repr.b.len();
        ensure_len(n, repr.v.len())?;
        let rank = repr.v.first().map_or(0, Vec::len);
        let mut params = FmParams::zeros(n, rank)?;
        params.a = repr.a;
        params.b = repr.b;
        for (i, row) in repr.v.iter().enumerate() {
            ensure_len(rank, row.len())?;
            params.v_row_mut(i).copy_from_slice(row);
        }
        if !params.is_finite() {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(params)
    }
}

impl From<FmParams> for FmParamsRepr {
    fn from(p: FmParams) -> Self {
        let v = p.v.chunks(p.rank).map(<[f64]>::to_vec).collect();
        FmParamsRepr { a: p.a, b: p.b, v }
    }
}

impl FmParams {
    pub fn zeros(n_bits: usize, rank: usize) -> Result<Self> {
        if n_bits == 0 {
            return Err(Error::InvalidArgument("bit count must be positive".into()));
        }
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be positive".into()));
        }
        Ok(Self {
            a: 0.0,
            b: vec![0.0; n_bits],
            v: vec![0.0; n_bits * rank],
            rank,
        })
    }

    pub fn n_bits(&self) -> usize {
        self.b.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn set_a(&mut self, a: f64) {
        self.a = a;
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    /// Factor matrix, row-major `N x K`.
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn v_row(&self, i: usize) -> &[f64] {
        &self.v[i * self.rank..(i + 1) * self.rank]
    }

    pub fn v_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.v[i * self.rank..(i + 1) * self.rank]
    }

    /// Interaction weight `<v_i, v_j>`.
    pub fn pair_weight(&self, i: usize, j: usize) -> f64 {
        dot(self.v_row(i), self.v_row(j))
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite()
            && self.b.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }

    /// Evaluates the model on a dense bit-vector.
    pub fn predict(&self, x: &[bool]) -> Result<f64> {
        ensure_len(self.n_bits(), x.len())?;
        let active: Vec<usize> = x
            .iter()
            .enumerate()
            .filter_map(|(i, &bit)| bit.then_some(i))
            .collect();
        Ok(self.predict_active(&active))
    }

    /// Evaluates the model given the indices of the set bits.
    ///
    /// Uses the factorized form `1/2 sum_k [(sum_i v_ik)^2 - sum_i v_ik^2]`
    /// restricted to the active bits. Indices must be distinct and `< N`.
    pub fn predict_active(&self, active: &[usize]) -> f64 {
        let mut out = self.a;
        let mut pair = 0.0;
        for k in 0..self.rank {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for &i in active {
                let w = self.v[i * self.rank + k];
                sum += w;
                sum_sq += w * w;
            }
            pair += sum * sum - sum_sq;
        }
        for &i in active {
            out += self.b[i];
        }
        out + 0.5 * pair
    }

    /// Sum of squared adjacent-pair differences of `b` and `v`, without the
    /// regularization strength.
    pub fn fsr_penalty(&self, adjacency: &[(usize, usize)]) -> Result<f64> {
        self.check_adjacency(adjacency)?;
        Ok(adjacency
            .iter()
            .map(|&(p, q)| {
                let db = self.b[p] - self.b[q];
                let dv: f64 = self
                    .v_row(p)
                    .iter()
                    .zip(self.v_row(q))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                dv + db * db
            })
            .sum())
    }

    /// Squared norm of `b` and `v` (the bias is excluded).
    pub fn l2_penalty(&self) -> f64 {
        self.b.iter().map(|x| x * x).sum::<f64>() + self.v.iter().map(|x| x * x).sum::<f64>()
    }

    fn check_adjacency(&self, adjacency: &[(usize, usize)]) -> Result<()> {
        let n = self.n_bits();
        for &(p, q) in adjacency {
            for idx in [p, q] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        limit: n,
                    });
                }
            }
        }
        Ok(())
    }

    fn check_shape(&self, n_bits: usize, rank: usize) -> Result<()> {
        ensure_len(self.n_bits(), n_bits)?;
        ensure_len(self.rank, rank)
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Zero bias with `b` and `v` drawn i.i.d. from `N(0, init_scale^2)`.
pub fn init_params(n_bits: usize, rank: usize, init_scale: f64, seed: u64) -> Result<FmParams> {
    if !(init_scale > 0.0 && init_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init_scale must be positive, got {init_scale}"
        )));
    }
    let mut params = FmParams::zeros(n_bits, rank)?;
    let normal = Normal::new(0.0, init_scale).expect("positive finite scale");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in params.b.iter_mut() {
        *x = normal.sample(&mut rng);
    }
    for x in params.v.iter_mut() {
        *x = normal.sample(&mut rng);
    }
    Ok(params)
}

/// Binary training samples stored sparsely as the indices of their set bits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    n_bits: usize,
    rows: Vec<Vec<usize>>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(n_bits: usize) -> Self {
        Self {
            n_bits,
            rows: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push_bits(&mut self, x: &[bool], target: f64) -> Result<()> {
        ensure_len(self.n_bits, x.len())?;
        let active = x
            .iter()
            .enumerate()
            .filter_map(|(i, &bit)| bit.then_some(i))
            .collect();
        self.rows.push(active);
        self.targets.push(target);
        Ok(())
    }

    /// Adds a sample given its set-bit indices; duplicates are collapsed.
    pub fn push_active(&mut self, mut active: Vec<usize>, target: f64) -> Result<()> {
        active.sort_unstable();
        active.dedup();
        if let Some(&last) = active.last() {
            if last >= self.n_bits {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    limit: self.n_bits,
                });
            }
        }
        self.rows.push(active);
        self.targets.push(target);
        Ok(())
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Whether any sample sets bit `i`.
    pub fn touches(&self, i: usize) -> bool {
        self.rows.iter().any(|r| r.binary_search(&i).is_ok())
    }
}

/// Summed squared error of the model over the training set.
pub fn loss_mse(params: &FmParams, data: &TrainingSet) -> Result<f64> {
    check_data(params, data)?;
    Ok(data
        .rows
        .iter()
        .zip(&data.targets)
        .map(|(row, &h)| {
            let r = params.predict_active(row) - h;
            r * r
        })
        .sum())
}

/// Full regularized objective `L + lambda_sr * fsr + lambda_l2 * l2`.
pub fn total_loss(
    params: &FmParams,
    data: &TrainingSet,
    adjacency: &[(usize, usize)],
    lambda_sr: f64,
    lambda_l2: f64,
) -> Result<f64> {
    let mut loss = loss_mse(params, data)?;
    if lambda_sr != 0.0 {
        loss += lambda_sr * params.fsr_penalty(adjacency)?;
    }
    if lambda_l2 != 0.0 {
        loss += lambda_l2 * params.l2_penalty();
    }
    Ok(loss)
}

fn check_data(params: &FmParams, data: &TrainingSet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ensure_len(params.n_bits(), data.n_bits)
}

/// Gradient of the regularized loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FmGradients {
    pub da: f64,
    pub db: Vec<f64>,
    /// Row-major `N x K`, matching [`FmParams::v`].
    pub dv: Vec<f64>,
    rank: usize,
}

impl FmGradients {
    fn zeros_like(params: &FmParams) -> Self {
        Self {
            da: 0.0,
            db: vec![0.0; params.n_bits()],
            dv: vec![0.0; params.v.len()],
            rank: params.rank,
        }
    }

    pub fn n_bits(&self) -> usize {
        self.db.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dv_row(&self, i: usize) -> &[f64] {
        &self.dv[i * self.rank..(i + 1) * self.rank]
    }
}

pub fn gradients(
    params: &FmParams,
    data: &TrainingSet,
    adjacency: &[(usize, usize)],
    lambda_sr: f64,
    lambda_l2: f64,
) -> Result<FmGradients> {
    loss_and_gradients(params, data, adjacency, lambda_sr, lambda_l2).map(|(_, g)| g)
}

/// Computes the regularized loss and its gradient in one pass.
pub fn loss_and_gradients(
    params: &FmParams,
    data: &TrainingSet,
    adjacency: &[(usize, usize)],
    lambda_sr: f64,
    lambda_l2: f64,
) -> Result<(f64, FmGradients)> {
    check_data(params, data)?;
    params.check_adjacency(adjacency)?;
    let rank = params.rank;
    let mut grads = FmGradients::zeros_like(params);
    let mut loss = 0.0;
    let mut factor_sum = vec![0.0; rank];

    for (row, &h) in data.rows.iter().zip(&data.targets) {
        factor_sum.iter_mut().for_each(|s| *s = 0.0);
        let mut pred = params.a;
        let mut sum_sq = 0.0;
        for &i in row {
            pred += params.b[i];
            for (s, &w) in factor_sum.iter_mut().zip(params.v_row(i)) {
                *s += w;
                sum_sq += w * w;
            }
        }
        pred += 0.5 * (factor_sum.iter().map(|s| s * s).sum::<f64>() - sum_sq);
        let resid = pred - h;
        loss += resid * resid;
        let g = 2.0 * resid;
        grads.da += g;
        for &i in row {
            grads.db[i] += g;
            // d/dv_i of the pair term is sum_{j != i} v_j x_j
            let dv = &mut grads.dv[i * rank..(i + 1) * rank];
            for ((d, &s), &w) in dv.iter_mut().zip(&factor_sum).zip(params.v_row(i)) {
                *d += g * (s - w);
            }
        }
    }

    if lambda_sr != 0.0 {
        let mut fsr = 0.0;
        for &(p, q) in adjacency {
            let diff_b = params.b[p] - params.b[q];
            fsr += diff_b * diff_b;
            grads.db[p] += 2.0 * lambda_sr * diff_b;
            grads.db[q] -= 2.0 * lambda_sr * diff_b;
            for k in 0..rank {
                let diff = params.v[p * rank + k] - params.v[q * rank + k];
                fsr += diff * diff;
                grads.dv[p * rank + k] += 2.0 * lambda_sr * diff;
                grads.dv[q * rank + k] -= 2.0 * lambda_sr * diff;
            }
        }
        loss += lambda_sr * fsr;
    }

    if lambda_l2 != 0.0 {
        loss += lambda_l2 * params.l2_penalty();
        for (d, &x) in grads.db.iter_mut().zip(&params.b) {
            *d += 2.0 * lambda_l2 * x;
        }
        for (d, &x) in grads.dv.iter_mut().zip(&params.v) {
            *d += 2.0 * lambda_l2 * x;
        }
    }

    Ok((loss, grads))
}

pub const AMSGRAD_BETA1: f64 = 0.9;
pub const AMSGRAD_BETA2: f64 = 0.999;
pub const AMSGRAD_EPS: f64 = 1e-8;

/// Moment accumulators for AMSGRAD, laid out as `[a, b.., v..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmsgradState {
    first: Vec<f64>,
    second: Vec<f64>,
    second_max: Vec<f64>,
    step: u64,
    n_bits: usize,
    rank: usize,
}

impl AmsgradState {
    pub fn new(params: &FmParams) -> Self {
        let len = 1 + params.b.len() + params.v.len();
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            second_max: vec![0.0; len],
            step: 0,
            n_bits: params.n_bits(),
            rank: params.rank,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    pub fn second_moment_max(&self) -> &[f64] {
        &self.second_max
    }
}

/// One bias-corrected AMSGRAD update of `params` in place.
pub fn amsgrad_step(
    state: &mut AmsgradState,
    params: &mut FmParams,
    grads: &FmGradients,
    learning_rate: f64,
) -> Result<()> {
    params.check_shape(state.n_bits, state.rank)?;
    params.check_shape(grads.n_bits(), grads.rank)?;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - AMSGRAD_BETA1.powi(t);
    let bias2_sqrt = (1.0 - AMSGRAD_BETA2.powi(t)).sqrt();
    let step_size = learning_rate / bias1;

    let mut update = |slot: usize, theta: &mut f64, g: f64| {
        let m = &mut state.first[slot];
        let s = &mut state.second[slot];
        let s_max = &mut state.second_max[slot];
        *m = AMSGRAD_BETA1 * *m + (1.0 - AMSGRAD_BETA1) * g;
        *s = AMSGRAD_BETA2 * *s + (1.0 - AMSGRAD_BETA2) * g * g;
        if *s > *s_max {
            *s_max = *s;
        }
        let denom = s_max.sqrt() / bias2_sqrt + AMSGRAD_EPS;
        *theta -= step_size * *m / denom;
    };

    update(0, &mut params.a, grads.da);
    let nb = params.b.len();
    for (i, (theta, &g)) in params.b.iter_mut().zip(&grads.db).enumerate() {
        update(1 + i, theta, g);
    }
    for (i, (theta, &g)) in params.v.iter_mut().zip(&grads.dv).enumerate() {
        update(1 + nb + i, theta, g);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub n_updates: usize,
    pub lambda_sr: f64,
    pub lambda_l2: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            n_updates: 1000,
            lambda_sr: 0.0,
            lambda_l2: 0.0,
            init_scale: 0.1,
            seed: 0,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, value: f64| {
            Err(Error::InvalidArgument(format!("{what} out of range: {value}")))
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", self.learning_rate);
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale", self.init_scale);
        }
        if !(self.lambda_sr >= 0.0 && self.lambda_sr.is_finite()) {
            return bad("lambda_sr", self.lambda_sr);
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return bad("lambda_l2", self.lambda_l2);
        }
        if self.n_updates == 0 {
            return Err(Error::InvalidArgument("n_updates must be positive".into()));
        }
        Ok(())
    }
}

/// Runs `config.n_updates` full-batch AMSGRAD iterations starting from
/// `params`. Returns the trained parameters and the regularized loss
/// evaluated before each update.
pub fn train(
    params: FmParams,
    data: &TrainingSet,
    config: &TrainConfig,
    adjacency: &[(usize, usize)],
) -> Result<(FmParams, Vec<f64>)> {
    config.validate()?;
    let mut params = params;
    let mut state = AmsgradState::new(&params);
    let mut history = Vec::with_capacity(config.n_updates);
    for _ in 0..config.n_updates {
        let (loss, grads) =
            loss_and_gradients(&params, data, adjacency, config.lambda_sr, config.lambda_l2)?;
        history.push(loss);
        amsgrad_step(&mut state, &mut params, &grads, config.learning_rate)?;
    }
    Ok((params, history))
}
