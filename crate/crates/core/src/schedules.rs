//! Step-size schedules and tail averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Lambdas;
use crate::numerics::Vector;

pub const DEFAULT_T0: usize = 10;

fn default_t0() -> usize {
    DEFAULT_T0
}

/// Effective step size `α_t`. Theory-driven kinds divide by the module's
/// `λ` so that `α^i λ^i = α^c λ^c = α^b λ^b` holds every round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Fixed {
        alpha: f64,
    },
    /// `ln(t) / (λ t)` for a known horizon `t`.
    TheoryConstant {
        horizon: f64,
    },
    /// `4 / ((τ + t0 + 1) λ)`.
    Diminishing {
        #[serde(default = "default_t0")]
        t0: usize,
    },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Fixed { alpha: 0.01 }
    }
}

/// Step sizes used by one synchronized round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSteps {
    pub local: f64,
    pub central: f64,
    pub objective: f64,
    pub density: f64,
}

impl RoundSteps {
    pub fn uniform(alpha: f64) -> Self {
        RoundSteps {
            local: alpha,
            central: alpha,
            objective: alpha,
            density: alpha,
        }
    }
}

pub fn theory_constant_step(horizon: f64, lambda: f64) -> Result<f64> {
    if !(horizon >= 2.0) {
        return Err(Error::InvalidHorizon(horizon));
    }
    Ok(horizon.ln() / (lambda * horizon))
}

/// Unchecked closed form, usable for any real horizon `t > 1`.
pub fn theory_constant_raw(horizon: f64, lambda: f64) -> f64 {
    horizon.ln() / (lambda * horizon)
}

pub fn diminishing_step(tau: usize, t0: usize, lambda: f64) -> f64 {
    4.0 / ((tau as f64 + t0 as f64 + 1.0) * lambda)
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Fixed { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::InvalidConfig(format!("fixed step size must be positive, got {alpha}")),
            ),
            StepSchedule::TheoryConstant { horizon } if !(horizon >= 2.0) => {
                Err(Error::InvalidHorizon(horizon))
            }
            StepSchedule::Diminishing { t0 } if t0 < 1 => Err(Error::InvalidConfig(
                "diminishing schedule needs t0 >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `α_τ` for a module with strong-monotonicity constant `lambda`.
    pub fn step_size(&self, tau: usize, lambda: f64) -> Result<f64> {
        match *self {
            StepSchedule::Fixed { alpha } => Ok(alpha),
            StepSchedule::TheoryConstant { horizon } => theory_constant_step(horizon, lambda),
            StepSchedule::Diminishing { t0 } => {
                if t0 < 1 {
                    return Err(Error::InvalidConfig(
                        "diminishing schedule needs t0 >= 1".into(),
                    ));
                }
                Ok(diminishing_step(tau, t0, lambda))
            }
        }
    }

    pub fn round_steps(&self, tau: usize, lambdas: &Lambdas) -> Result<RoundSteps> {
        Ok(RoundSteps {
            local: self.step_size(tau, lambdas.local)?,
            central: self.step_size(tau, lambdas.central)?,
            objective: self.step_size(tau, lambdas.objective)?,
            density: self.step_size(tau, lambdas.density)?,
        })
    }
}

/// Weights `(τ + t0) / Σ_τ' (τ' + t0)` for `τ = 0..len`. The last weight is
/// `1 − Σ(others)`.
pub fn tail_weights(len: usize, t0: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::EmptyTrajectory);
    }
    if t0 < 1 {
        return Err(Error::InvalidConfig("tail averaging needs t0 >= 1".into()));
    }
    let total: f64 = (0..len).map(|tau| (tau + t0) as f64).sum();
    let mut w: Vec<f64> = (0..len).map(|tau| (tau + t0) as f64 / total).collect();
    let rest: f64 = w[..len - 1].iter().sum();
    w[len - 1] = 1.0 - rest;
    Ok(w)
}

pub fn tail_average(trajectory: &[Vector], t0: usize) -> Result<Vector> {
    let w = tail_weights(trajectory.len(), t0)?;
    let mut out = vec![0.0; trajectory[0].len()];
    for (x, &wi) in trajectory.iter().zip(&w) {
        crate::numerics::axpy(&mut out, wi, x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let fixed = StepSchedule::Fixed { alpha: 0.01 };
        assert_eq!(fixed.step_size(0, 3.0).unwrap(), 0.01);
        assert_eq!(fixed.step_size(999, 0.1).unwrap(), 0.01);
        let e = std::f64::consts::E;
        assert!((theory_constant_raw(e, 1.0) - 1.0 / e).abs() < 1e-15);
        let dim = StepSchedule::Diminishing { t0: 3 };
        assert_eq!(dim.step_size(0, 2.0).unwrap(), 0.5);
    }

    #[test]
    fn short_horizon_rejected() {
        let s = StepSchedule::TheoryConstant { horizon: 1.0 };
        assert!(matches!(s.step_size(0, 1.0), Err(Error::InvalidHorizon(_))));
        assert!(s.validate().is_err());
    }

    #[test]
    fn tail_average_examples() {
        let w = tail_weights(3, 1).unwrap();
        assert!((w[0] - 1.0 / 6.0).abs() < 1e-15 && (w[1] - 2.0 / 6.0).abs() < 1e-15);
        let avg = tail_average(&[vec![0.0], vec![3.0], vec![6.0]], 1).unwrap();
        assert!((avg[0] - 4.0).abs() < 1e-14);
        assert_eq!(tail_average(&[vec![2.5, -1.0]], 4).unwrap(), vec![2.5, -1.0]);
        assert!(matches!(tail_average(&[], 1), Err(Error::EmptyTrajectory)));
    }

    #[test]
    fn schedule_json_shape() {
        let s: StepSchedule = serde_json::from_str(r#"{"kind":"diminishing"}"#).unwrap();
        assert_eq!(s, StepSchedule::Diminishing { t0: DEFAULT_T0 });
        let s: StepSchedule = serde_json::from_str(r#"{"kind":"fixed","alpha":0.02}"#).unwrap();
        assert_eq!(s, StepSchedule::Fixed { alpha: 0.02 });
    }
}
