use serde::{Deserialize, Serialize};

use super::DistributionError;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Classical RK4 with step-doubling error control on `t ∈ [0, t_end]`.
    AdaptiveRk4,
    /// `steps` explicit Euler steps of size `dt`.
    FixedEuler,
    /// `steps` classical RK4 steps of size `dt`.
    FixedRk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSolverConfig {
    pub mode: SolverMode,
    /// Step size for fixed modes; initial step for the adaptive mode.
    pub dt: f64,
    pub steps: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_min: f64,
    pub t_end: f64,
}

impl OdeSolverConfig {
    /// Two Euler steps of 0.5, the cheap point-cloud setting.
    pub fn fixed_euler() -> Self {
        OdeSolverConfig {
            mode: SolverMode::FixedEuler,
            dt: 0.5,
            steps: 2,
            rel_tol: 0.0,
            abs_tol: 0.0,
            dt_min: 0.0,
            t_end: 1.0,
        }
    }

    pub fn adaptive_rk4() -> Self {
        OdeSolverConfig {
            mode: SolverMode::AdaptiveRk4,
            dt: 0.1,
            steps: 0,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            dt_min: 1e-8,
            t_end: 1.0,
        }
    }

    pub fn fixed_rk4(dt: f64, steps: usize) -> Self {
        OdeSolverConfig {
            mode: SolverMode::FixedRk4,
            dt,
            steps,
            ..Self::fixed_euler()
        }
    }

    pub fn with_fixed_steps(mut self, dt: f64, steps: usize) -> Self {
        self.dt = dt;
        self.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        let bad = |m: &str| Err(DistributionError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        match self.mode {
            SolverMode::FixedEuler | SolverMode::FixedRk4 if self.steps == 0 => {
                bad("fixed-step modes need at least one step")
            }
            SolverMode::AdaptiveRk4
                if !(self.rel_tol > 0.0 || self.abs_tol > 0.0)
                    || !(self.t_end > 0.0 && self.t_end.is_finite()) =>
            {
                bad("adaptive mode needs a positive tolerance and horizon")
            }
            _ => Ok(()),
        }
    }
}

/// Upper bound on accepted plus rejected adaptive steps.
const MAX_ADAPTIVE_STEPS: usize = 100_000;

fn axpy<T: Real>(y: &[T], h: T, k: &[T]) -> Vec<T> {
    y.iter().zip(k).map(|(&a, &b)| a + h * b).collect()
}

fn field_checked<T, F>(f: &mut F, y: &[T]) -> Result<Vec<T>, DistributionError>
where
    T: Real,
    F: FnMut(&[T]) -> Result<Vec<T>, DistributionError>,
{
    let k = f(y)?;
    if k.len() != y.len() {
        return Err(DistributionError::DimensionMismatch {
            expected: y.len(),
            found: k.len(),
        });
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(DistributionError::NonFinite);
    }
    Ok(k)
}

/// One classical fourth-order Runge–Kutta step of size `h`.
pub fn rk4_step<T, F>(f: &mut F, y: &[T], h: T) -> Result<Vec<T>, DistributionError>
where
    T: Real,
    F: FnMut(&[T]) -> Result<Vec<T>, DistributionError>,
{
    let half = h / T::lit(2.0);
    let k1 = field_checked(f, y)?;
    let k2 = field_checked(f, &axpy(y, half, &k1))?;
    let k3 = field_checked(f, &axpy(y, half, &k2))?;
    let k4 = field_checked(f, &axpy(y, h, &k3))?;
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    Ok(y.iter()
        .enumerate()
        .map(|(i, &yi)| yi + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect())
}

/// Integrates the autonomous field `f` from `theta0`.
///
/// The adaptive mode compares one full step with two half steps and keeps
/// the Richardson-extrapolated result. Step decisions use plain values, so
/// differentiating through the solver follows the accepted step sequence.
pub fn integrate<T, F>(
    mut f: F,
    theta0: &[T],
    config: &OdeSolverConfig,
) -> Result<Vec<T>, DistributionError>
where
    T: Real,
    F: FnMut(&[T]) -> Result<Vec<T>, DistributionError>,
{
    config.validate()?;
    let mut y = theta0.to_vec();
    match config.mode {
        SolverMode::FixedEuler => {
            let h = T::lit(config.dt);
            for _ in 0..config.steps {
                let k = field_checked(&mut f, &y)?;
                y = axpy(&y, h, &k);
            }
        }
        SolverMode::FixedRk4 => {
            let h = T::lit(config.dt);
            for _ in 0..config.steps {
                y = rk4_step(&mut f, &y, h)?;
            }
        }
        SolverMode::AdaptiveRk4 => {
            let mut t = 0.0;
            let mut h = config.dt.min(config.t_end);
            let mut iterations = 0;
            while t < config.t_end * (1.0 - 1e-14) {
                iterations += 1;
                if iterations > MAX_ADAPTIVE_STEPS {
                    return Err(DistributionError::TooManySteps(MAX_ADAPTIVE_STEPS));
                }
                if h < config.dt_min {
                    return Err(DistributionError::StepUnderflow { t, h });
                }
                let step = h.min(config.t_end - t);
                let full = rk4_step(&mut f, &y, T::lit(step))?;
                let mid = rk4_step(&mut f, &y, T::lit(step / 2.0))?;
                let fine = rk4_step(&mut f, &mid, T::lit(step / 2.0))?;
                let mut err: f64 = 0.0;
                for (a, b) in fine.iter().zip(&full) {
                    let scale = config.abs_tol
                        + config.rel_tol * a.value().abs().max(b.value().abs());
                    err = err.max((a.value() - b.value()).abs() / scale);
                }
                if !err.is_finite() {
                    return Err(DistributionError::NonFinite);
                }
                if err <= 1.0 {
                    let fifteen = T::lit(15.0);
                    y = fine
                        .iter()
                        .zip(&full)
                        .map(|(&a, &b)| a + (a - b) / fifteen)
                        .collect();
                    t += step;
                }
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = step * factor;
            }
        }
    }
    Ok(y)
}
