//! Explicit Runge-Kutta integrators for small fixed-size systems.
//!
//! The adaptive driver uses the Dormand-Prince 5(4) pair with local
//! extrapolation (the 5th order solution is propagated) and a standard
//! step-size controller. Steps are clipped so every requested output time is
//! hit exactly.

use crate::error::{Error, Result};

pub trait OdeSystem<const D: usize> {
    fn derivative(&self, t: f64, y: &[f64; D]) -> [f64; D];

    /// Returns a reason to abort if the state has left the physical domain.
    fn check_state(&self, _y: &[f64; D]) -> Option<String> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
        }
    }
}

impl Tolerance {
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
        }
    }
}

const MAX_STEPS: usize = 10_000_000;

// Dormand-Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

fn check<S: OdeSystem<D>, const D: usize>(sys: &S, t: f64, y: &[f64; D]) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            time: t,
            reason: "non-finite state".into(),
        });
    }
    if let Some(reason) = sys.check_state(y) {
        return Err(Error::Integration { time: t, reason });
    }
    Ok(())
}

fn validate_outputs(t_out: &[f64]) -> Result<()> {
    if t_out.is_empty() || t_out.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "output times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Integrates from `(t_out[0], y0)` with adaptive Dormand-Prince steps,
/// returning the state at every output time.
pub fn integrate_adaptive<S: OdeSystem<D>, const D: usize>(
    sys: &S,
    y0: [f64; D],
    t_out: &[f64],
    tol: Tolerance,
) -> Result<Vec<[f64; D]>> {
    validate_outputs(t_out)?;
    let mut out = Vec::with_capacity(t_out.len());
    out.push(y0);
    let mut t = t_out[0];
    let mut y = y0;
    check(sys, t, &y)?;
    let span = t_out[t_out.len() - 1] - t;
    let h_min = span * 1e-14;
    let mut h = (span / 1000.0).max(h_min);
    let mut k1 = sys.derivative(t, &y);
    let mut steps = 0;

    for &target in &t_out[1..] {
        while t < target {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integration {
                    time: t,
                    reason: "step budget exhausted".into(),
                });
            }
            let last = target - t <= h;
            let step = if last { target - t } else { h };

            let k2 = sys.derivative(t + C2 * step, &axpy(&y, step, &[(A21, &k1)]));
            let k3 = sys.derivative(t + C3 * step, &axpy(&y, step, &[(A31, &k1), (A32, &k2)]));
            let k4 = sys.derivative(
                t + C4 * step,
                &axpy(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            );
            let k5 = sys.derivative(
                t + C5 * step,
                &axpy(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = sys.derivative(
                t + step,
                &axpy(
                    &y,
                    step,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            );
            let y_new = axpy(
                &y,
                step,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let k7 = sys.derivative(t + step, &y_new);

            let mut err: f64 = 0.0;
            for i in 0..D {
                let e = step
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                err = 1e10;
            }

            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                k1 = k7;
                check(sys, t, &y)?;
                // a clipped final step says nothing about the natural step size
                if !last {
                    h = step * factor;
                } else if factor < 1.0 {
                    h = h.min(step * factor);
                }
            } else {
                h = step * factor.min(1.0);
            }
            if h < h_min {
                return Err(Error::Integration {
                    time: t,
                    reason: format!("step size underflow (h = {h:.3e})"),
                });
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Classical fixed-step RK4 with `substeps` steps per output interval.
pub fn integrate_rk4<S: OdeSystem<D>, const D: usize>(
    sys: &S,
    y0: [f64; D],
    t_out: &[f64],
    substeps: usize,
) -> Result<Vec<[f64; D]>> {
    validate_outputs(t_out)?;
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be positive".into()));
    }
    let mut out = Vec::with_capacity(t_out.len());
    out.push(y0);
    let mut y = y0;
    check(sys, t_out[0], &y)?;
    for w in t_out.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            let t = w[0] + s as f64 * h;
            let k1 = sys.derivative(t, &y);
            let k2 = sys.derivative(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k1)]));
            let k3 = sys.derivative(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k2)]));
            let k4 = sys.derivative(t + h, &axpy(&y, h, &[(1.0, &k3)]));
            y = axpy(
                &y,
                h,
                &[(1.0 / 6.0, &k1), (2.0 / 6.0, &k2), (2.0 / 6.0, &k3), (1.0 / 6.0, &k4)],
            );
            check(sys, t + h, &y)?;
        }
        out.push(y);
    }
    Ok(out)
}
