//! Closed-form objectives for checking that the step rules actually
//! minimize something.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::{OptimConfig, Optimizer, Variant};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// `f(θ) = ½‖θ‖²`
    Quadratic,
    /// `f(x, y) = (1 − x)² + 100·(y − x²)²`
    Rosenbrock,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Rosenbrock => "rosenbrock",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ProblemKind::Quadratic),
            "rosenbrock" => Ok(ProblemKind::Rosenbrock),
            _ => Err(Error::Config(format!("unknown benchmark problem `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchProblem {
    pub kind: ProblemKind,
    pub start: Vec<f64>,
    pub min_value: f64,
    pub min_location: Vec<f64>,
}

impl BenchProblem {
    /// Start point `θᵢ = (−1)ⁱ·(i + 1)/2`.
    pub fn quadratic(dim: usize) -> Self {
        let start = (0..dim)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (i + 1) as f64 / 2.0)
            .collect();
        Self::quadratic_from(start)
    }

    pub fn quadratic_from(start: Vec<f64>) -> Self {
        let dim = start.len();
        Self {
            kind: ProblemKind::Quadratic,
            start,
            min_value: 0.0,
            min_location: vec![0.0; dim],
        }
    }

    /// The classic start `(−1.2, 1)`.
    pub fn rosenbrock() -> Self {
        Self::rosenbrock_from([-1.2, 1.0])
    }

    pub fn rosenbrock_from(start: [f64; 2]) -> Self {
        Self {
            kind: ProblemKind::Rosenbrock,
            start: start.to_vec(),
            min_value: 0.0,
            min_location: vec![1.0, 1.0],
        }
    }

    pub fn default_tol(&self) -> f64 {
        match self.kind {
            ProblemKind::Quadratic => 1e-6,
            ProblemKind::Rosenbrock => 1e-2,
        }
    }

    /// Learning rates that converge for every variant. Plain SGD needs a
    /// much smaller step on Rosenbrock's curved valley than on the
    /// quadratic.
    pub fn default_lr(&self, variant: Variant) -> f64 {
        match (self.kind, variant) {
            (ProblemKind::Quadratic, Variant::Sgd | Variant::SgdMomentum) => 0.1,
            (ProblemKind::Rosenbrock, Variant::Sgd | Variant::SgdMomentum) => 0.001,
            (_, _) => 0.01,
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Quadratic => 0.5 * theta.iter().map(|v| v * v).sum::<f64>(),
            ProblemKind::Rosenbrock => {
                let (x, y) = (theta[0], theta[1]);
                (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
            }
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        match self.kind {
            ProblemKind::Quadratic => theta.to_vec(),
            ProblemKind::Rosenbrock => {
                let (x, y) = (theta[0], theta[1]);
                vec![
                    -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                    200.0 * (y - x * x),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRecord {
    pub t: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub mean_abs_update: f64,
    pub lr_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial_value: f64,
    pub records: Vec<BenchRecord>,
    pub theta: Vec<f64>,
    /// Whether `f − f* < tol` was reached.
    pub converged: bool,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn final_value(&self) -> f64 {
        self.records.last().map_or(self.initial_value, |r| r.value)
    }
}

/// Full-gradient descent from `problem.start` until `f − f* < tol` or
/// `max_steps` steps.
pub fn bench_run(
    problem: &BenchProblem,
    cfg: &OptimConfig,
    max_steps: usize,
    tol: f64,
) -> Result<Trajectory> {
    if max_steps == 0 {
        return Err(Error::Config("max_steps must be >= 1".into()));
    }
    let mut params = vec![Tensor::from_vec(problem.start.clone())];
    let mut optimizer = Optimizer::new(*cfg, &params)?;
    let initial_value = problem.value(&problem.start);
    if !initial_value.is_finite() {
        return Err(Error::NonFiniteObjective { step: 0 });
    }
    let mut records = Vec::new();
    let mut converged = initial_value - problem.min_value < tol;
    while !converged && records.len() < max_steps {
        let grad = problem.gradient(params[0].data());
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let t = records.len() + 1;
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteObjective { step: t });
        }
        let stats = optimizer.step(&mut params, &[Tensor::from_vec(grad)])?[0];
        let value = problem.value(params[0].data());
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective { step: t });
        }
        records.push(BenchRecord {
            t,
            value,
            grad_norm,
            xi_min: stats.xi_min,
            xi_max: stats.xi_max,
            mean_abs_update: stats.mean_abs_update,
            lr_factor: stats.lr_factor,
        });
        converged = value - problem.min_value < tol;
    }
    Ok(Trajectory {
        initial_value,
        records,
        theta: params.remove(0).into_data(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_contracts_quadratic() {
        let problem = BenchProblem::quadratic(10);
        let traj = bench_run(&problem, &OptimConfig::new(Variant::Sgd, 0.1), 50, 0.0).unwrap();
        assert_eq!(traj.steps(), 50);
        // same arithmetic, iterated independently
        let mut theta = problem.start.clone();
        for rec in &traj.records {
            theta.iter_mut().for_each(|v| *v -= 0.1 * *v);
            assert_eq!(rec.value, problem.value(&theta));
            let closed = traj.initial_value * 0.81f64.powi(rec.t as i32);
            assert!((rec.value - closed).abs() <= 1e-12 * closed);
        }
    }

    #[test]
    fn rosenbrock_minimum_is_stationary() {
        let problem = BenchProblem::rosenbrock_from([1.0, 1.0]);
        assert_eq!(problem.gradient(&[1.0, 1.0]), vec![0.0, 0.0]);
        for v in Variant::ALL {
            // tol 0 so the loop cannot stop early on the already-minimal value
            let traj = bench_run(&problem, &OptimConfig::new(v, 0.01), 20, 0.0).unwrap();
            assert_eq!(traj.theta, vec![1.0, 1.0], "{v}");
        }
    }

    #[test]
    fn rosenbrock_gradient_matches_differences() {
        let problem = BenchProblem::rosenbrock();
        let p = [-0.7, 1.3];
        let g = problem.gradient(&p);
        let h = 1e-6;
        for i in 0..2 {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd = (problem.value(&a) - problem.value(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn divergence_is_reported() {
        let problem = BenchProblem::rosenbrock();
        let err = bench_run(&problem, &OptimConfig::new(Variant::Sgd, 1.0), 100, 0.0).unwrap_err();
        assert!(
            matches!(err, Error::NonFiniteObjective { step } if step > 0),
            "{err:?}"
        );
    }

    #[test]
    fn stops_at_tolerance() {
        let problem = BenchProblem::quadratic(3);
        let traj = bench_run(&problem, &OptimConfig::new(Variant::Sgd, 0.5), 1000, 1e-6).unwrap();
        assert!(traj.converged);
        assert!(traj.final_value() < 1e-6);
        assert!(traj.records[traj.steps() - 2].value >= 1e-6);
        assert!(bench_run(&problem, &OptimConfig::default(), 0, 1.0).is_err());
    }
}
