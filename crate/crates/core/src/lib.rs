//! Factorization machine annealing for continuous black-box optimization.
//!
//! Continuous variables are discretized on uniform grids and one-hot encoded
//! into binary variables. A factorization machine learns a QUBO surrogate of
//! the objective from the evaluated points; a sampler proposes new points from
//! the surrogate; the objective is evaluated there and the loop repeats.
//!
//! The smoothing regularizer ([`fm::FmParams::fsr_penalty`]) ties the
//! parameters of neighboring grid levels together so that levels never seen
//! in the data still receive gradient and the surrogate surface stays smooth.

pub mod anneal;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod fm;
pub mod objectives;
pub mod qubo;

pub use anneal::{
    boltzmann_sample, brute_force_min, enumerate_feasible, simulated_anneal, AnnealSchedule,
    SampleSet,
};
pub use encoding::{AlphaPolicy, Block, GridSpace};
pub use engine::{
    fmqa_step, init_dataset, r_squared, r_squared_standard, run_trial, run_trials,
    success_count, Dataset, LoopConfig, SamplerConfig, StepRecord, TrialResult,
};
pub use error::{Error, Result};
pub use fm::{
    gradients, init_params, loss_mse, train, AmsgradState, FmGradients, FmParams, TrainConfig,
    TrainingSet,
};
pub use objectives::bubble::{
    AcousticDrive, BubbleTrajectory, MarmottantParams,
};
pub use objectives::{Objective, H1, H2, H3};
pub use qubo::{qubo_energy, QuboMatrix};
