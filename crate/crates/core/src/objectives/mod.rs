//! Black-box objectives evaluated on grid points.

pub mod bubble;
pub mod ode;

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::encoding::{Block, GridSpace};
use crate::error::{Error, Result};
use bubble::{
    integrate_with, AcousticDrive, BubbleTrajectory, IntegratorOptions, MarmottantParams,
};

/// A true Hamiltonian over a one-hot grid. `evaluate` must be a pure function
/// of the indices and finite everywhere on the grid.
pub trait Objective: Sync {
    fn space(&self) -> &GridSpace;

    /// Indices are assumed valid for [`Objective::space`].
    fn evaluate(&self, indices: &[usize]) -> f64;

    /// Known global minimum value, if any.
    fn known_minimum(&self) -> Option<f64> {
        None
    }
}

pub fn h1_eval(y1: f64, y2: f64) -> f64 {
    y1 * y1 + 2.0 * y2 * y2
}

pub fn h2_eval(y: [f64; 4]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `y1^2 + 2 y2^2` on 101 levels of `[-5.12, 5.12]` per variable.
#[derive(Debug, Clone)]
pub struct H1 {
    space: GridSpace,
}

impl H1 {
    pub fn new() -> Self {
        Self::with_space(GridSpace::uniform(2, -5.12, 5.12, 101).expect("valid grid"))
            .expect("two blocks")
    }

    pub fn with_space(space: GridSpace) -> Result<Self> {
        if space.n_blocks() != 2 {
            return Err(Error::InvalidArgument(format!(
                "H1 needs 2 blocks, got {}",
                space.n_blocks()
            )));
        }
        Ok(Self { space })
    }
}

impl Default for H1 {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for H1 {
    fn space(&self) -> &GridSpace {
        &self.space
    }

    fn evaluate(&self, indices: &[usize]) -> f64 {
        let y = self.space.values(indices).expect("valid indices");
        h1_eval(y[0], y[1])
    }

    fn known_minimum(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Euclidean norm of four variables on 101 levels of `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct H2 {
    space: GridSpace,
}

impl H2 {
    pub fn new() -> Self {
        Self::with_space(GridSpace::uniform(4, -1.0, 1.0, 101).expect("valid grid"))
            .expect("four blocks")
    }

    pub fn with_space(space: GridSpace) -> Result<Self> {
        if space.n_blocks() != 4 {
            return Err(Error::InvalidArgument(format!(
                "H2 needs 4 blocks, got {}",
                space.n_blocks()
            )));
        }
        Ok(Self { space })
    }
}

impl Default for H2 {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for H2 {
    fn space(&self) -> &GridSpace {
        &self.space
    }

    fn evaluate(&self, indices: &[usize]) -> f64 {
        let y = self.space.values(indices).expect("valid indices");
        h2_eval([y[0], y[1], y[2], y[3]])
    }

    fn known_minimum(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Energy returned when a candidate's bubble simulation fails.
pub const H3_FAILURE_ENERGY: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct H3Config {
    /// Parameters of the reference bubble; the fitted ones (chi, kappa_s,
    /// sigma0) are replaced per candidate, the rest stay fixed.
    pub true_params: MarmottantParams,
    pub drive: AcousticDrive,
    /// s
    pub t_end: f64,
    pub n_out: usize,
    pub integrator: IntegratorOptions,
    pub chi: Block,
    pub kappa_s: Block,
    pub sigma0: Block,
    /// Radius unit for the deviation, in metres.
    pub radius_unit: f64,
    /// Time unit for the integration weight, in seconds. The default is the
    /// output spacing, which makes H3 a plain sum over samples.
    pub time_unit: f64,
}

impl Default for H3Config {
    fn default() -> Self {
        Self {
            true_params: MarmottantParams::default(),
            drive: AcousticDrive::default(),
            t_end: 10e-6,
            n_out: 201,
            integrator: IntegratorOptions::default(),
            chi: Block::new(1.0, 4.0, 65),
            kappa_s: Block::new(0.0, 12.0e-9, 65),
            sigma0: Block::new(0.01, 0.03, 65),
            radius_unit: 1e-6,
            time_unit: 0.05e-6,
        }
    }
}

/// Time-integrated squared radius deviation from a reference trajectory,
/// over a grid of (chi, kappa_S, sigma0).
pub struct H3 {
    config: H3Config,
    space: GridSpace,
    reference: BubbleTrajectory,
    cache: Mutex<HashMap<[usize; 3], f64>>,
}

impl std::fmt::Debug for H3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("H3")
            .field("config", &self.config)
            .field("space", &self.space)
            .finish_non_exhaustive()
    }
}

impl H3 {
    /// Builds the objective, generating the reference from `config.true_params`.
    pub fn new(config: H3Config) -> Result<Self> {
        let reference = integrate_with(
            &config.true_params,
            &config.drive,
            config.t_end,
            config.n_out,
            &config.integrator,
        )?;
        Self::with_reference(config, reference)
    }

    /// Uses an externally supplied reference; its sampling overrides
    /// `t_end` and `n_out`.
    pub fn with_reference(mut config: H3Config, reference: BubbleTrajectory) -> Result<Self> {
        if reference.times[0].abs() > 1e-15 {
            return Err(Error::InvalidArgument(
                "reference trajectory must start at t = 0".into(),
            ));
        }
        config.t_end = reference.t_end();
        config.n_out = reference.len();
        let space = GridSpace::new(vec![config.chi, config.kappa_s, config.sigma0])?;
        Ok(Self {
            config,
            space,
            reference,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &H3Config {
        &self.config
    }

    pub fn reference(&self) -> &BubbleTrajectory {
        &self.reference
    }

    pub fn candidate_params(&self, indices: &[usize]) -> Result<MarmottantParams> {
        let v = self.space.values(indices)?;
        Ok(MarmottantParams {
            chi: v[0],
            kappa_s: v[1],
            sigma0: v[2],
            ..self.config.true_params
        })
    }

    pub fn simulate(&self, indices: &[usize]) -> Result<BubbleTrajectory> {
        integrate_with(
            &self.candidate_params(indices)?,
            &self.config.drive,
            self.config.t_end,
            self.config.n_out,
            &self.config.integrator,
        )
    }

    /// Trapezoid-weighted `sum (R - R*)^2 dt` in the configured units.
    pub fn deviation(&self, trajectory: &BubbleTrajectory) -> Result<f64> {
        if trajectory.len() != self.reference.len() {
            return Err(Error::DimensionMismatch {
                expected: self.reference.len(),
                actual: trajectory.len(),
            });
        }
        let n = trajectory.len();
        let dt = (self.reference.times[1] - self.reference.times[0]) / self.config.time_unit;
        Ok(trajectory
            .radii
            .iter()
            .zip(&self.reference.radii)
            .enumerate()
            .map(|(k, (r, r_ref))| {
                let d = (r - r_ref) / self.config.radius_unit;
                let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                w * d * d * dt
            })
            .sum())
    }

    /// Like [`Objective::evaluate`] but surfaces integration failures.
    pub fn try_evaluate(&self, indices: &[usize]) -> Result<f64> {
        self.deviation(&self.simulate(indices)?)
    }
}

impl Objective for H3 {
    fn space(&self) -> &GridSpace {
        &self.space
    }

    fn evaluate(&self, indices: &[usize]) -> f64 {
        let key = [indices[0], indices[1], indices[2]];
        if let Some(&v) = self.cache.lock().expect("cache lock").get(&key) {
            return v;
        }
        let value = match self.try_evaluate(indices) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("H3 evaluation at {indices:?} failed ({e}); using sentinel energy");
                H3_FAILURE_ENERGY
            }
        };
        self.cache.lock().expect("cache lock").insert(key, value);
        value
    }

    fn known_minimum(&self) -> Option<f64> {
        Some(0.0)
    }
}
