//! Regenerates `tests/data/bench_calibration.log` from the reference step
//! rules:
//!
//! ```text
//! cargo test --release --test calibration -- --ignored
//! ```
//!
//! The acceptance budgets are the reference step counts plus 10%, rounded
//! up to a multiple of 10.

mod common;

use std::fmt::Write as _;

use common::reference::{Hyper, RefOptimizer, RULES};
use gradkit::bench::BenchProblem;
use gradkit::Variant;

const MAX_STEPS: usize = 1_000_000;

/// Steps for the reference rules to bring `f − f*` under the problem's
/// default tolerance, or `None` if they never do.
pub fn reference_steps(problem: &BenchProblem, variant: Variant) -> Option<usize> {
    let rule = RULES
        .into_iter()
        .find(|r| r.name() == variant.name())
        .unwrap();
    let h = Hyper {
        lr: problem.default_lr(variant),
        ..Hyper::default()
    };
    let mut opt = RefOptimizer::new(rule, h, problem.dim());
    let mut theta = problem.start.clone();
    let tol = problem.default_tol();
    for step in 1..=MAX_STEPS {
        let g = problem.gradient(&theta);
        opt.step(&mut theta, &g);
        let f = problem.value(&theta);
        if !f.is_finite() {
            return None;
        }
        if f - problem.min_value < tol {
            return Some(step);
        }
    }
    None
}

pub fn budget(steps: usize) -> usize {
    (steps * 11).div_ceil(100) * 10
}

#[test]
#[ignore = "writes the committed calibration log"]
fn calibrate_bench_budgets() {
    let mut log = String::from(
        "# reference step counts to f - f* < tol, budget = ceil(1.1 * steps / 10) * 10\n",
    );
    writeln!(
        log,
        "{:<10} {:<13} {:>6} {:>8} {:>8} {:>8}",
        "problem", "optimizer", "lr", "tol", "steps", "budget"
    )
    .unwrap();
    for problem in [BenchProblem::quadratic(10), BenchProblem::rosenbrock()] {
        for v in Variant::ALL {
            let steps = reference_steps(&problem, v).expect("reference converges");
            writeln!(
                log,
                "{:<10} {:<13} {:>6} {:>8e} {:>8} {:>8}",
                problem.kind.to_string(),
                v.name(),
                problem.default_lr(v),
                problem.default_tol(),
                steps,
                budget(steps)
            )
            .unwrap();
        }
    }
    print!("{log}");
    std::fs::write(
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/data/bench_calibration.log"
        ),
        log,
    )
    .unwrap();
}
