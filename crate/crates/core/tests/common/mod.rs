//! Shared test helpers: a slow, literal reference for the step rules and
//! random-instance generators.

#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;

use rand::Rng;

/// Random gradient sequence with occasional exact zeros and repeats, so
/// the zero-gap and zero-difference branches get exercised.
pub fn gradient_sequence(
    rng: &mut impl Rng,
    steps: usize,
    dim: usize,
    scale: f64,
) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(steps);
    for k in 0..steps {
        let g = match rng.gen_range(0..20) {
            0 => vec![0.0; dim],
            1 if k > 0 => out[k - 1].clone(),
            _ => (0..dim).map(|_| rng.gen_range(-scale..scale)).collect(),
        };
        out.push(g);
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

use gradkit::{OptimConfig, Optimizer, ScheduleConfig, StepStats, Tensor, Variant};
use reference::{Hyper, Rule};

pub fn lib_config(rule: Rule, h: &Hyper) -> OptimConfig {
    OptimConfig {
        variant: rule.name().parse::<Variant>().unwrap(),
        lr: h.lr,
        rho1: h.rho1,
        rho2: h.rho2,
        eps: h.eps,
        momentum: h.mu,
        schedule: ScheduleConfig {
            steps: h.period,
            decay: h.decay,
            zero_floor: h.floor,
        },
        ..Default::default()
    }
}

/// Library trajectory: θ after every step, and the step statistics.
pub fn lib_trajectory(
    rule: Rule,
    h: &Hyper,
    theta0: &[f64],
    grads: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<StepStats>) {
    let mut params = vec![Tensor::from_vec(theta0.to_vec())];
    let mut opt = Optimizer::new(lib_config(rule, h), &params).unwrap();
    let mut thetas = Vec::with_capacity(grads.len());
    let mut stats = Vec::with_capacity(grads.len());
    for g in grads {
        stats.push(
            opt.step(&mut params, &[Tensor::from_vec(g.clone())])
                .unwrap()[0],
        );
        thetas.push(params[0].data().to_vec());
    }
    (thetas, stats)
}

/// Reference trajectory: θ and ξ after every step.
pub fn ref_trajectory(
    rule: Rule,
    h: &Hyper,
    theta0: &[f64],
    grads: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut theta = theta0.to_vec();
    let mut opt = reference::RefOptimizer::new(rule, *h, theta0.len());
    let mut thetas = Vec::with_capacity(grads.len());
    let mut xis = Vec::with_capacity(grads.len());
    for g in grads {
        opt.step(&mut theta, g);
        thetas.push(theta.clone());
        xis.push(opt.xi.clone());
    }
    (thetas, xis)
}
