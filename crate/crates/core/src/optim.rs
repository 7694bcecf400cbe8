//! Per-tensor optimizer step rules.
//!
//! Every Adam-family rule shares the bias-corrected moments
//!
//! ```text
//! m  = ρ₁·m + (1 − ρ₁)·g          m̂ = m / (1 − ρ₁ᵗ)
//! u  = ρ₂·u + (1 − ρ₂)·g²         û = u / (1 − ρ₂ᵗ)
//! θ' = θ − λ·ξ ⊙ m̂ / √(û + ε)
//! ```
//!
//! and differs only in the friction coefficient `ξ` (identically 1 for
//! Adam and AMSGrad; AMSGrad additionally swaps `û` for the bias-corrected
//! running maximum `ū / (1 − ρ₂ᵗ)` of the raw second moment):
//!
//! | variant  | ξ                                                          |
//! |----------|------------------------------------------------------------|
//! | diffgrad | `Sig(|g_prev − g|)`                                         |
//! | dgrad    | `Sig(4·Δ̂)`                                                  |
//! | cos1     | `Sig(4·lr_t·Δ̂)`                                             |
//! | cos2     | `Sig(2·lr_t·Δ̂) + Sig(4·lra_t) − 0.5`                        |
//!
//! where `Δ = |g − u|` and `Δ̂ = Δ / max(Δ)` with the maximum taken over
//! the tensor being stepped (`Δ̂ = 0` when that maximum is zero).
//!
//! The step counter `t` is incremented at the start of every step, so the
//! first update runs with `t = 1` and the cyclic factors see the same `t`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{cyclic_lr, cyclic_lra, sigmoid, ScheduleConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sgd,
    SgdMomentum,
    Adam,
    Amsgrad,
    Diffgrad,
    Dgrad,
    Cos1,
    Cos2,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Sgd,
        Variant::SgdMomentum,
        Variant::Adam,
        Variant::Amsgrad,
        Variant::Diffgrad,
        Variant::Dgrad,
        Variant::Cos1,
        Variant::Cos2,
    ];

    pub const ADAM_FAMILY: [Variant; 6] = [
        Variant::Adam,
        Variant::Amsgrad,
        Variant::Diffgrad,
        Variant::Dgrad,
        Variant::Cos1,
        Variant::Cos2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sgd => "sgd",
            Variant::SgdMomentum => "sgd_momentum",
            Variant::Adam => "adam",
            Variant::Amsgrad => "amsgrad",
            Variant::Diffgrad => "diffgrad",
            Variant::Dgrad => "dgrad",
            Variant::Cos1 => "cos1",
            Variant::Cos2 => "cos2",
        }
    }

    pub fn is_adam_family(self) -> bool {
        !matches!(self, Variant::Sgd | Variant::SgdMomentum)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer variant `{s}`")))
    }
}

/// Which moving average the DGrad family compares the gradient against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionReference {
    /// The second moment `u` (moving average of squared gradients).
    #[default]
    SecondMoment,
    /// The first moment `m` (moving average of raw gradients).
    FirstMoment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub variant: Variant,
    pub lr: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub eps: f64,
    pub momentum: f64,
    /// `√(û + ε)` when true, `√û + ε` otherwise.
    pub eps_inside_sqrt: bool,
    pub friction_reference: FrictionReference,
    pub schedule: ScheduleConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Adam,
            lr: 0.001,
            rho1: 0.9,
            rho2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            eps_inside_sqrt: true,
            friction_reference: FrictionReference::SecondMoment,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn new(variant: Variant, lr: f64) -> Self {
        Self {
            variant,
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0 (got {})", self.lr)));
        }
        if !(0.0..1.0).contains(&self.rho1) {
            return Err(Error::Config(format!(
                "rho1 must be in [0, 1) (got {})",
                self.rho1
            )));
        }
        if !(0.0..1.0).contains(&self.rho2) {
            return Err(Error::Config(format!(
                "rho2 must be in [0, 1) (got {})",
                self.rho2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0 (got {})", self.eps)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1) (got {})",
                self.momentum
            )));
        }
        self.schedule.validate()
    }

    #[inline]
    fn denom(&self, v: f64) -> f64 {
        if self.eps_inside_sqrt {
            (v + self.eps).sqrt()
        } else {
            v.sqrt() + self.eps
        }
    }
}

/// Optimizer state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub t: u64,
    pub m: Tensor,
    pub u: Tensor,
    pub u_bar: Tensor,
    pub g_prev: Tensor,
    pub velocity: Tensor,
}

impl OptimState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            t: 0,
            m: Tensor::zeros(shape),
            u: Tensor::zeros(shape),
            u_bar: Tensor::zeros(shape),
            g_prev: Tensor::zeros(shape),
            velocity: Tensor::zeros(shape),
        }
    }

    pub fn for_tensor(param: &Tensor) -> Self {
        Self::new(param.shape())
    }

    pub fn shape(&self) -> &[usize] {
        self.m.shape()
    }

    /// Named tensors for checkpointing; the step counter is stored as a
    /// one-element tensor.
    pub fn to_named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.t"), Tensor::from_vec(vec![self.t as f64])),
            (format!("{prefix}.m"), self.m.clone()),
            (format!("{prefix}.u"), self.u.clone()),
            (format!("{prefix}.u_bar"), self.u_bar.clone()),
            (format!("{prefix}.g_prev"), self.g_prev.clone()),
            (format!("{prefix}.velocity"), self.velocity.clone()),
        ]
    }

    pub fn from_named(prefix: &str, lookup: impl Fn(&str) -> Option<Tensor>) -> Result<Self> {
        let get = |field: &str| {
            let key = format!("{prefix}.{field}");
            lookup(&key).ok_or_else(|| Error::Config(format!("checkpoint is missing `{key}`")))
        };
        let t = get("t")?;
        let t = match t.data() {
            [v] if *v >= 0.0 && v.fract() == 0.0 => *v as u64,
            _ => return Err(Error::Config(format!("`{prefix}.t` is not a step count"))),
        };
        let state = Self {
            t,
            m: get("m")?,
            u: get("u")?,
            u_bar: get("u_bar")?,
            g_prev: get("g_prev")?,
            velocity: get("velocity")?,
        };
        for other in [&state.u, &state.u_bar, &state.g_prev, &state.velocity] {
            state.m.ensure_same_shape(other)?;
        }
        Ok(state)
    }
}

/// Per-tensor summary of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub mean_abs_update: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    /// Cyclic factor `lr_t` for Cos#1/Cos#2, 1 otherwise.
    pub lr_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub t: u64,
    pub tensors: Vec<StepStats>,
}

fn check_inputs(theta: &Tensor, g: &Tensor, state: &OptimState) -> Result<()> {
    theta.ensure_same_shape(g)?;
    theta.ensure_same_shape(&state.m)?;
    g.ensure_finite("gradient")
}

/// Plain SGD, or heavy-ball momentum when the variant is `SgdMomentum`:
/// `v = μ·v + g`, `θ' = θ − λ·v`.
pub fn sgd_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    check_inputs(theta, g, state)?;
    state.t += 1;
    let use_momentum = cfg.variant == Variant::SgdMomentum;
    let mut abs_sum = 0.0;
    let params = theta.data_mut();
    let vel = state.velocity.data_mut();
    for i in 0..params.len() {
        let dir = if use_momentum {
            vel[i] = cfg.momentum * vel[i] + g.data()[i];
            vel[i]
        } else {
            g.data()[i]
        };
        let delta = cfg.lr * dir;
        params[i] -= delta;
        abs_sum += delta.abs();
    }
    Ok(StepStats {
        mean_abs_update: abs_sum / params.len() as f64,
        xi_min: 1.0,
        xi_max: 1.0,
        lr_factor: 1.0,
    })
}

/// `1 − ρᵗ`, via `expm1` to avoid cancellation while `ρᵗ` is close to 1.
pub fn bias_correction(rho: f64, t: u64) -> f64 {
    -(t as f64 * rho.ln()).exp_m1()
}

/// Updates `m`, `u` in place and returns the bias-corrected `(m̂, û)`.
/// `state.t` must already be incremented for the current step.
pub fn adam_moments(
    state: &mut OptimState,
    g: &Tensor,
    cfg: &OptimConfig,
) -> Result<(Tensor, Tensor)> {
    if state.t == 0 {
        return Err(Error::ZeroStep);
    }
    state.m.ensure_same_shape(g)?;
    let c1 = bias_correction(cfg.rho1, state.t);
    let c2 = bias_correction(cfg.rho2, state.t);
    let mut m_hat = Tensor::zeros_like(g);
    let mut u_hat = Tensor::zeros_like(g);
    let m = state.m.data_mut();
    let u = state.u.data_mut();
    for (i, &gi) in g.data().iter().enumerate() {
        m[i] = cfg.rho1 * m[i] + (1.0 - cfg.rho1) * gi;
        u[i] = cfg.rho2 * u[i] + (1.0 - cfg.rho2) * gi * gi;
        m_hat.data_mut()[i] = m[i] / c1;
        u_hat.data_mut()[i] = u[i] / c2;
    }
    Ok((m_hat, u_hat))
}

/// `θ −= λ·ξ ⊙ m̂ / denom(v)`; `xi = None` means ξ ≡ 1.
fn apply_adaptive(
    theta: &mut Tensor,
    m_hat: &Tensor,
    v: &Tensor,
    xi: Option<&Tensor>,
    lr_factor: f64,
    cfg: &OptimConfig,
) -> StepStats {
    let mut abs_sum = 0.0;
    let mut xi_min = f64::INFINITY;
    let mut xi_max = f64::NEG_INFINITY;
    let params = theta.data_mut();
    for i in 0..params.len() {
        let x = xi.map_or(1.0, |xi| xi.data()[i]);
        xi_min = xi_min.min(x);
        xi_max = xi_max.max(x);
        let delta = cfg.lr * x * m_hat.data()[i] / cfg.denom(v.data()[i]);
        params[i] -= delta;
        abs_sum += delta.abs();
    }
    StepStats {
        mean_abs_update: abs_sum / params.len() as f64,
        xi_min,
        xi_max,
        lr_factor,
    }
}

pub fn adam_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    check_inputs(theta, g, state)?;
    state.t += 1;
    let (m_hat, u_hat) = adam_moments(state, g, cfg)?;
    Ok(apply_adaptive(theta, &m_hat, &u_hat, None, 1.0, cfg))
}

/// Adam with the denominator driven by the running maximum `ū = max(ū, u)`
/// of the raw second moment, bias-corrected like `û` so that the first
/// step coincides with Adam's.
pub fn amsgrad_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    check_inputs(theta, g, state)?;
    state.t += 1;
    let (m_hat, _) = adam_moments(state, g, cfg)?;
    state.u_bar = state.u_bar.maximum(&state.u)?;
    let u_bar_hat = state.u_bar.scale(1.0 / bias_correction(cfg.rho2, state.t));
    Ok(apply_adaptive(theta, &m_hat, &u_bar_hat, None, 1.0, cfg))
}

pub fn diffgrad_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    check_inputs(theta, g, state)?;
    state.t += 1;
    let (m_hat, u_hat) = adam_moments(state, g, cfg)?;
    let xi = state.g_prev.sub(g)?.abs().sigmoid();
    state.g_prev = g.clone();
    Ok(apply_adaptive(theta, &m_hat, &u_hat, Some(&xi), 1.0, cfg))
}

/// `|g − ref| / max|g − ref|`, all zeros when the maximum is zero.
fn normalized_gap(g: &Tensor, state: &OptimState, cfg: &OptimConfig) -> Result<Tensor> {
    let reference = match cfg.friction_reference {
        FrictionReference::SecondMoment => &state.u,
        FrictionReference::FirstMoment => &state.m,
    };
    let gap = g.sub(reference)?.abs();
    let peak = gap.reduce_max()?;
    if peak == 0.0 {
        return Ok(Tensor::zeros_like(&gap));
    }
    Ok(gap.map(|d| d / peak))
}

fn dgrad_family_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    check_inputs(theta, g, state)?;
    state.t += 1;
    let (m_hat, u_hat) = adam_moments(state, g, cfg)?;
    let gap = normalized_gap(g, state, cfg)?;
    let t = state.t;
    let (xi, lr_factor) = match cfg.variant {
        Variant::Cos1 => {
            let lr_t = cyclic_lr(t, &cfg.schedule);
            (gap.map(|d| sigmoid(4.0 * lr_t * d)), lr_t)
        }
        Variant::Cos2 => {
            let lr_t = cyclic_lr(t, &cfg.schedule);
            let additive = sigmoid(4.0 * cyclic_lra(t, &cfg.schedule));
            (gap.map(|d| sigmoid(2.0 * lr_t * d) + additive - 0.5), lr_t)
        }
        _ => (gap.map(|d| sigmoid(4.0 * d)), 1.0),
    };
    Ok(apply_adaptive(
        theta,
        &m_hat,
        &u_hat,
        Some(&xi),
        lr_factor,
        cfg,
    ))
}

pub fn dgrad_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    dgrad_family_step(
        theta,
        g,
        state,
        &OptimConfig {
            variant: Variant::Dgrad,
            ..*cfg
        },
    )
}

pub fn cos1_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    dgrad_family_step(
        theta,
        g,
        state,
        &OptimConfig {
            variant: Variant::Cos1,
            ..*cfg
        },
    )
}

pub fn cos2_step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    dgrad_family_step(
        theta,
        g,
        state,
        &OptimConfig {
            variant: Variant::Cos2,
            ..*cfg
        },
    )
}

/// Dispatches on `cfg.variant`.
pub fn step(
    theta: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<StepStats> {
    match cfg.variant {
        Variant::Sgd | Variant::SgdMomentum => sgd_step(theta, g, state, cfg),
        Variant::Adam => adam_step(theta, g, state, cfg),
        Variant::Amsgrad => amsgrad_step(theta, g, state, cfg),
        Variant::Diffgrad => diffgrad_step(theta, g, state, cfg),
        Variant::Dgrad | Variant::Cos1 | Variant::Cos2 => dgrad_family_step(theta, g, state, cfg),
    }
}

/// One [`OptimState`] per parameter tensor, stepped together.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub cfg: OptimConfig,
    states: Vec<OptimState>,
    trace: Option<Vec<StepTrace>>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, params: &[Tensor]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            states: params.iter().map(OptimState::for_tensor).collect(),
            trace: None,
        })
    }

    pub fn with_tracing(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn states(&self) -> &[OptimState] {
        &self.states
    }

    pub fn from_states(cfg: OptimConfig, states: Vec<OptimState>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            states,
            trace: None,
        })
    }

    pub fn trace(&self) -> Option<&[StepTrace]> {
        self.trace.as_deref()
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Steps every tensor. Inputs are validated up front so a bad
    /// gradient leaves both parameters and state untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<Vec<StepStats>> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::ShapeMismatch {
                left: vec![params.len(), grads.len()],
                right: vec![self.states.len()],
            });
        }
        for (i, ((p, g), s)) in params.iter().zip(grads).zip(&self.states).enumerate() {
            p.ensure_same_shape(g)?;
            p.ensure_same_shape(&s.m)?;
            g.ensure_finite(&format!("grad[{i}]"))?;
        }
        let stats = params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.states)
            .map(|((p, g), s)| step(p, g, s, &self.cfg))
            .collect::<Result<Vec<_>>>()?;
        if let Some(trace) = &mut self.trace {
            trace.push(StepTrace {
                t: self.states.first().map_or(0, |s| s.t),
                tensors: stats.clone(),
            });
        }
        Ok(stats)
    }
}
