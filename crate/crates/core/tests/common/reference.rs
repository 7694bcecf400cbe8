//! Step rules written directly from their defining formulas, one
//! component at a time, without sharing code with the library.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Sgd,
    SgdMomentum,
    Adam,
    Amsgrad,
    Diffgrad,
    Dgrad,
    Cos1,
    Cos2,
}

pub const RULES: [Rule; 8] = [
    Rule::Sgd,
    Rule::SgdMomentum,
    Rule::Adam,
    Rule::Amsgrad,
    Rule::Diffgrad,
    Rule::Dgrad,
    Rule::Cos1,
    Rule::Cos2,
];

impl Rule {
    /// The library's name for the same rule.
    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::SgdMomentum => "sgd_momentum",
            Rule::Adam => "adam",
            Rule::Amsgrad => "amsgrad",
            Rule::Diffgrad => "diffgrad",
            Rule::Dgrad => "dgrad",
            Rule::Cos1 => "cos1",
            Rule::Cos2 => "cos2",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub lr: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub eps: f64,
    pub mu: f64,
    pub period: u64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 0.001,
            rho1: 0.9,
            rho2: 0.999,
            eps: 1e-8,
            mu: 0.9,
            period: 30,
            decay: 0.01,
            floor: 9e-4,
        }
    }
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// lr_t = (2 − |cos(πt/steps)|)·exp(−decay·(mod(t, steps) + 1))
pub fn lr_t(t: u64, h: &Hyper) -> f64 {
    let c = (PI * t as f64 / h.period as f64).cos().abs();
    let v = (2.0 - c) * (-h.decay * ((t % h.period) as f64 + 1.0)).exp();
    if v < h.floor {
        h.floor
    } else {
        v
    }
}

/// lra_t = |cos(πt/steps)|·exp(−decay·(mod(t, steps) + 1)), floored
pub fn lra_t(t: u64, h: &Hyper) -> f64 {
    let c = (PI * t as f64 / h.period as f64).cos().abs();
    let v = c * (-h.decay * ((t % h.period) as f64 + 1.0)).exp();
    if c == 0.0 || v < h.floor {
        h.floor
    } else {
        v
    }
}

#[derive(Debug, Clone)]
pub struct RefOptimizer {
    pub rule: Rule,
    pub h: Hyper,
    pub t: u64,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub g_prev: Vec<f64>,
    pub v: Vec<f64>,
    /// ξ used by the latest step (all ones for rules without friction).
    pub xi: Vec<f64>,
}

impl RefOptimizer {
    pub fn new(rule: Rule, h: Hyper, dim: usize) -> Self {
        RefOptimizer {
            rule,
            h,
            t: 0,
            m: vec![0.0; dim],
            u: vec![0.0; dim],
            u_bar: vec![0.0; dim],
            g_prev: vec![0.0; dim],
            v: vec![0.0; dim],
            xi: vec![1.0; dim],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) {
        let h = self.h;
        let n = theta.len();
        self.t += 1;
        let t = self.t;

        if self.rule == Rule::Sgd {
            for i in 0..n {
                theta[i] = theta[i] - h.lr * g[i];
            }
            return;
        }
        if self.rule == Rule::SgdMomentum {
            for i in 0..n {
                self.v[i] = h.mu * self.v[i] + g[i];
                theta[i] = theta[i] - h.lr * self.v[i];
            }
            return;
        }

        let mut m_hat = vec![0.0; n];
        let mut u_hat = vec![0.0; n];
        for i in 0..n {
            self.m[i] = h.rho1 * self.m[i] + (1.0 - h.rho1) * g[i];
            self.u[i] = h.rho2 * self.u[i] + (1.0 - h.rho2) * g[i] * g[i];
            m_hat[i] = self.m[i] / (1.0 - h.rho1.powi(t as i32));
            u_hat[i] = self.u[i] / (1.0 - h.rho2.powi(t as i32));
        }

        if self.rule == Rule::Amsgrad {
            for i in 0..n {
                if self.u[i] > self.u_bar[i] {
                    self.u_bar[i] = self.u[i];
                }
                u_hat[i] = self.u_bar[i] / (1.0 - h.rho2.powi(t as i32));
            }
        }

        let mut xi = vec![1.0; n];
        match self.rule {
            Rule::Diffgrad => {
                for i in 0..n {
                    xi[i] = sig((self.g_prev[i] - g[i]).abs());
                    self.g_prev[i] = g[i];
                }
            }
            Rule::Dgrad | Rule::Cos1 | Rule::Cos2 => {
                let delta: Vec<f64> = (0..n).map(|i| (g[i] - self.u[i]).abs()).collect();
                let mut biggest = 0.0;
                for &d in &delta {
                    if d > biggest {
                        biggest = d;
                    }
                }
                for i in 0..n {
                    let d_hat = if biggest > 0.0 {
                        delta[i] / biggest
                    } else {
                        0.0
                    };
                    xi[i] = match self.rule {
                        Rule::Dgrad => sig(4.0 * d_hat),
                        Rule::Cos1 => sig(4.0 * lr_t(t, &h) * d_hat),
                        _ => sig(2.0 * lr_t(t, &h) * d_hat) + sig(4.0 * lra_t(t, &h)) - 0.5,
                    };
                }
            }
            _ => {}
        }

        for i in 0..n {
            theta[i] = theta[i] - h.lr * xi[i] * m_hat[i] / (u_hat[i] + h.eps).sqrt();
        }
        self.xi = xi;
    }
}
