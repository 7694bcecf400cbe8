//! Sigmoid and the damped cosine cycle factors used by the Cos#1 / Cos#2
//! friction coefficients.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Cycle period in optimizer steps.
    pub steps: u64,
    /// Exponential damping applied within a period.
    pub decay: f64,
    /// Substituted whenever a factor would vanish.
    pub zero_floor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            decay: 0.01,
            zero_floor: 9e-4,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("schedule.steps must be >= 1".into()));
        }
        if !(self.decay > 0.0) {
            return Err(Error::Config("schedule.decay must be > 0".into()));
        }
        if !(self.zero_floor > 0.0) {
            return Err(Error::Config("schedule.zero_floor must be > 0".into()));
        }
        Ok(())
    }

    /// `|cos(π·t/steps)|`
    fn cos_factor(&self, t: u64) -> f64 {
        (PI * t as f64 / self.steps as f64).cos().abs()
    }

    /// `e^(−decay·(t mod steps + 1))`
    fn damping(&self, t: u64) -> f64 {
        (-self.decay * ((t % self.steps) as f64 + 1.0)).exp()
    }

    fn floored(&self, cos_factor: f64, value: f64) -> f64 {
        if cos_factor == 0.0 || value < self.zero_floor {
            self.zero_floor
        } else {
            value
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cyclic learning-rate multiplier `(2 − |cos(π·t/steps)|)·e^(−decay·(t mod steps + 1))`.
///
/// `t` is the 1-based optimizer step. Always in `(0, 2]`.
pub fn cyclic_lr(t: u64, cfg: &ScheduleConfig) -> f64 {
    let c = cfg.cos_factor(t);
    cfg.floored(2.0 - c, (2.0 - c) * cfg.damping(t))
}

/// Additive companion factor `|cos(π·t/steps)|·e^(−decay·(t mod steps + 1))`.
///
/// Vanishes at odd multiples of `steps/2`, where it is replaced by the
/// configured floor. Always in `(0, 1]`.
pub fn cyclic_lra(t: u64, cfg: &ScheduleConfig) -> f64 {
    let c = cfg.cos_factor(t);
    cfg.floored(c, c * cfg.damping(t))
}
