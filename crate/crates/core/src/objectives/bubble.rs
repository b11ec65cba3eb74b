//! Marmottant model of a lipid-coated microbubble driven by an acoustic pulse.
//!
//! The radius obeys the Rayleigh-Plesset type equation
//!
//! ```text
//! rho (R R'' + 3/2 R'^2) = (P0 + 2 sigma0 / R0) (R0 / R)^(3 kappa) (1 - 3 kappa R' / c)
//!                          - P0 - P_A(t) - 4 mu R' / R - 2 sigma(R) / R - 4 kappa_S R' / R^2
//! ```
//!
//! with the two-regime shell tension `sigma(R) = chi (R^2 / R_b^2 - 1)` above
//! the buckling radius `R_b = R0 (1 + sigma0 / chi)^(-1/2)` and zero below it.
//! The system is integrated in scaled variables `r = R / R0` and time in
//! microseconds.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ode::{integrate_adaptive, integrate_rk4, OdeSystem, Tolerance};
use crate::error::{Error, Result};

/// SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarmottantParams {
    pub rho_l: f64,
    pub kappa: f64,
    pub c_l: f64,
    pub mu: f64,
    pub kappa_s: f64,
    pub p0: f64,
    pub r0: f64,
    pub sigma0: f64,
    pub chi: f64,
}

impl Default for MarmottantParams {
    /// The reference bubble: water, 3.2 um radius, chi = 2.5 N/m,
    /// kappa_S = 6e-9 kg/s, sigma0 = 0.02 N/m.
    fn default() -> Self {
        Self {
            rho_l: 1e3,
            kappa: 1.07,
            c_l: 1500.0,
            mu: 1e-3,
            kappa_s: 6.0e-9,
            p0: 1e5,
            r0: 3.2e-6,
            sigma0: 0.02,
            chi: 2.5,
        }
    }
}

impl MarmottantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho_l", self.rho_l),
            ("kappa", self.kappa),
            ("c_l", self.c_l),
            ("p0", self.p0),
            ("r0", self.r0),
            ("chi", self.chi),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")));
            }
        }
        let non_negative = [("mu", self.mu), ("kappa_s", self.kappa_s), ("sigma0", self.sigma0)];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn buckling_radius(&self) -> f64 {
        self.r0 / (1.0 + self.sigma0 / self.chi).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticDrive {
    /// Pa
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// s
    pub envelope_center: f64,
    /// s
    pub envelope_width: f64,
}

impl Default for AcousticDrive {
    fn default() -> Self {
        Self {
            amplitude: 25e3,
            frequency: 1.5e6,
            envelope_center: 5e-6,
            envelope_width: 1.5e-6,
        }
    }
}

impl AcousticDrive {
    pub fn silent() -> Self {
        Self {
            amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument("amplitude must be non-negative".into()));
        }
        if !(self.frequency > 0.0 && self.envelope_width > 0.0 && self.envelope_center.is_finite()) {
            return Err(Error::InvalidArgument(
                "frequency and envelope width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian-tapered sine burst, in Pa.
pub fn acoustic_pressure(t: f64, drive: &AcousticDrive) -> f64 {
    let dt = t - drive.envelope_center;
    drive.amplitude
        * (-dt * dt / (2.0 * drive.envelope_width * drive.envelope_width)).exp()
        * (2.0 * PI * drive.frequency * t).sin()
}

/// Shell tension `sigma(R)` in N/m.
pub fn effective_surface_tension(radius: f64, p: &MarmottantParams) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    Ok(shell_tension(radius, p))
}

fn shell_tension(radius: f64, p: &MarmottantParams) -> f64 {
    let rb = p.buckling_radius();
    if radius < rb {
        0.0
    } else {
        p.chi * (radius * radius / (rb * rb) - 1.0)
    }
}

/// Uniformly sampled radius history (seconds, metres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleTrajectory {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
}

impl BubbleTrajectory {
    pub fn new(times: Vec<f64>, radii: Vec<f64>) -> Result<Self> {
        if times.len() != radii.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                actual: radii.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument("trajectory needs two samples".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("times must increase".into()));
        }
        for (k, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !(step > 0.0) || (step - dt).abs() > 1e-6 * dt {
                return Err(Error::InvalidArgument(format!(
                    "times must be uniform and increasing (sample {})",
                    k + 1
                )));
            }
        }
        if radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidArgument("radii must be positive".into()));
        }
        Ok(Self { times, radii })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `t_us,R_um` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_us,R_um\n");
        for (t, r) in self.times.iter().zip(&self.radii) {
            writeln!(out, "{},{}", t * 1e6, r * 1e6).expect("writing to a String");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut radii = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (k == 0 && line.starts_with('t')) || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64> {
                fields
                    .next()
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: k + 1,
                        message: format!("missing or malformed {name}"),
                    })
            };
            let t = next("t_us")?;
            let r = next("R_um")?;
            times.push(t * 1e-6);
            radii.push(r * 1e-6);
        }
        Self::new(times, radii)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegratorKind {
    Adaptive,
    /// Fixed-step RK4 with the given number of substeps per output interval.
    Rk4 { substeps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub kind: IntegratorKind,
    /// Initial radius as a multiple of R0.
    pub initial_radius: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            kind: IntegratorKind::Adaptive,
            initial_radius: 1.0,
        }
    }
}

const TIME_SCALE: f64 = 1e-6;
const COLLAPSE_RATIO: f64 = 1e-3;

struct Marmottant<'a> {
    p: &'a MarmottantParams,
    drive: &'a AcousticDrive,
}

impl OdeSystem<2> for Marmottant<'_> {
    /// State: `r = R / R0` and `dr/dtau` with `tau = t / 1 us`.
    fn derivative(&self, tau: f64, y: &[f64; 2]) -> [f64; 2] {
        let p = self.p;
        let radius = y[0] * p.r0;
        let velocity = y[1] * p.r0 / TIME_SCALE;
        let t = tau * TIME_SCALE;
        let gas = (p.p0 + 2.0 * p.sigma0 / p.r0)
            * y[0].powf(-3.0 * p.kappa)
            * (1.0 - 3.0 * p.kappa * velocity / p.c_l);
        let pressure = gas
            - p.p0
            - acoustic_pressure(t, self.drive)
            - 4.0 * p.mu * velocity / radius
            - 2.0 * shell_tension(radius, p) / radius
            - 4.0 * p.kappa_s * velocity / (radius * radius);
        let accel = (pressure / p.rho_l - 1.5 * velocity * velocity) / radius;
        [y[1], accel * TIME_SCALE * TIME_SCALE / p.r0]
    }

    fn check_state(&self, y: &[f64; 2]) -> Option<String> {
        (y[0] < COLLAPSE_RATIO).then(|| format!("radius collapsed to {:.3e} R0", y[0]))
    }
}

/// Samples `n_out` equally spaced radii on `[0, t_end]` starting from rest at
/// `options.initial_radius * R0`.
pub fn integrate_with(
    p: &MarmottantParams,
    drive: &AcousticDrive,
    t_end: f64,
    n_out: usize,
    options: &IntegratorOptions,
) -> Result<BubbleTrajectory> {
    p.validate()?;
    drive.validate()?;
    if !(t_end > 0.0) || n_out < 2 {
        return Err(Error::InvalidArgument(
            "need t_end > 0 and at least 2 output points".into(),
        ));
    }
    let times: Vec<f64> = (0..n_out)
        .map(|k| t_end * k as f64 / (n_out - 1) as f64)
        .collect();
    let taus: Vec<f64> = times.iter().map(|t| t / TIME_SCALE).collect();
    let sys = Marmottant { p, drive };
    let y0 = [options.initial_radius, 0.0];
    let states = match options.kind {
        IntegratorKind::Adaptive => integrate_adaptive(
            &sys,
            y0,
            &taus,
            Tolerance {
                rtol: options.rtol,
                atol: options.atol,
            },
        ),
        IntegratorKind::Rk4 { substeps } => integrate_rk4(&sys, y0, &taus, substeps),
    }
    .map_err(|e| match e {
        Error::Integration { time, reason } => Error::Integration {
            time: time * TIME_SCALE,
            reason,
        },
        other => other,
    })?;
    let radii = states.iter().map(|s| s[0] * p.r0).collect();
    BubbleTrajectory::new(times, radii)
}

/// Adaptive integration from equilibrium with the default tolerances.
pub fn integrate_marmottant(
    p: &MarmottantParams,
    drive: &AcousticDrive,
    t_end: f64,
    n_out: usize,
) -> Result<BubbleTrajectory> {
    integrate_with(p, drive, t_end, n_out, &IntegratorOptions::default())
}

/// The ground-truth trajectory `R*(t)` regenerated from the true parameters.
pub fn make_reference(
    p_true: &MarmottantParams,
    drive: &AcousticDrive,
    t_end: f64,
    n_out: usize,
) -> Result<BubbleTrajectory> {
    integrate_marmottant(p_true, drive, t_end, n_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pressure_shape() {
        let drive = AcousticDrive::default();
        // 7.5 cycles at the centre: sine is at a zero crossing
        assert!(acoustic_pressure(drive.envelope_center, &drive).abs() < 1e-9 * drive.amplitude);
        for k in 0..2000 {
            let t = k as f64 * 5e-9;
            assert!(acoustic_pressure(t, &drive).abs() <= drive.amplitude);
        }
        let far = drive.envelope_center + 6.5 * drive.envelope_width;
        assert!(acoustic_pressure(far, &drive).abs() < 1e-7 * drive.amplitude);
    }

    #[test]
    fn surface_tension_regimes() {
        let p = MarmottantParams::default();
        let rb = p.buckling_radius();
        assert_eq!(effective_surface_tension(rb, &p).unwrap(), 0.0);
        assert_eq!(effective_surface_tension(rb / 2.0, &p).unwrap(), 0.0);
        let at_r0 = effective_surface_tension(p.r0, &p).unwrap();
        assert!((at_r0 - p.sigma0).abs() < 1e-15, "{at_r0}");
        assert!(effective_surface_tension(0.0, &p).is_err());
    }

    #[test]
    fn surface_tension_is_monotone() {
        let p = MarmottantParams::default();
        let mut prev = 0.0;
        for k in 1..400 {
            let s = effective_surface_tension(p.r0 * k as f64 / 200.0, &p).unwrap();
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn trajectory_validation() {
        assert!(BubbleTrajectory::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(BubbleTrajectory::new(vec![0.0, 1.0, 3.0], vec![1.0; 3]).is_err());
        assert!(BubbleTrajectory::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(BubbleTrajectory::new(vec![0.0, 1.0], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let traj = BubbleTrajectory::new(vec![0.0, 5e-8, 1e-7], vec![3.2e-6, 3.3e-6, 3.1e-6]).unwrap();
        let back = BubbleTrajectory::from_csv(&traj.to_csv()).unwrap();
        for (a, b) in traj.radii.iter().zip(&back.radii) {
            assert!((a - b).abs() < 1e-18);
        }
        assert!(matches!(
            BubbleTrajectory::from_csv("t_us,R_um\n0,3.2\n0.05\n"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn silent_drive_stays_at_equilibrium() {
        let p = MarmottantParams::default();
        let traj = integrate_marmottant(&p, &AcousticDrive::silent(), 10e-6, 201).unwrap();
        let worst = traj
            .radii
            .iter()
            .map(|r| (r / p.r0 - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "drift {worst}");
    }

    #[test]
    fn driven_bubble_oscillates_boundedly() {
        let p = MarmottantParams::default();
        let traj = integrate_marmottant(&p, &AcousticDrive::default(), 10e-6, 201).unwrap();
        assert_eq!(traj.len(), 201);
        let excursion = traj
            .radii
            .iter()
            .map(|r| (r - p.r0).abs() / p.r0)
            .fold(0.0, f64::max);
        assert!(excursion > 0.0 && excursion < 1.0, "excursion {excursion}");
    }

    #[test]
    fn rk4_agrees_with_adaptive() {
        let p = MarmottantParams::default();
        let drive = AcousticDrive::default();
        let adaptive = integrate_marmottant(&p, &drive, 10e-6, 201).unwrap();
        let options = IntegratorOptions {
            kind: IntegratorKind::Rk4 { substeps: 200 },
            ..IntegratorOptions::default()
        };
        let fixed = integrate_with(&p, &drive, 10e-6, 201, &options).unwrap();
        for (a, b) in adaptive.radii.iter().zip(&fixed.radii) {
            assert!((a - b).abs() / a < 1e-6, "{a} vs {b}");
        }
    }
}
