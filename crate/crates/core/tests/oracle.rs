mod common;

use common::reference::{lr_t, lra_t, Hyper, RULES};
use common::{gradient_sequence, lib_trajectory, max_abs_diff, ref_trajectory};
use gradkit::schedule::{cyclic_lr, cyclic_lra};
use gradkit::ScheduleConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn compare(seed: u64, dim: usize, steps: usize, h: &Hyper) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grads = gradient_sequence(&mut rng, steps, dim, 5.0);
    let theta0: Vec<f64> = (0..dim).map(|i| 0.5 - i as f64 * 0.25).collect();
    for rule in RULES {
        let (lib, stats) = lib_trajectory(rule, h, &theta0, &grads);
        let (reference, xis) = ref_trajectory(rule, h, &theta0, &grads);
        for (k, (a, b)) in lib.iter().zip(&reference).enumerate() {
            let d = max_abs_diff(a, b);
            prop_assert!(d < TOL, "{} step {}: |Δθ| = {:e}", rule.name(), k + 1, d);
            let lo = xis[k].iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xis[k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((stats[k].xi_min - lo).abs() < TOL && (stats[k].xi_max - hi).abs() < TOL);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scalar_trajectories_match_reference(seed in any::<u64>()) {
        compare(seed, 1, 1000, &Hyper::default())?;
    }

    #[test]
    fn vector_trajectories_match_reference(seed in any::<u64>(), dim in 2usize..6) {
        compare(seed, dim, 300, &Hyper::default())?;
    }

    #[test]
    fn trajectories_match_under_other_hyperparameters(
        seed in any::<u64>(),
        lr in 1e-4f64..0.5,
        rho1 in 0.0f64..0.99,
        rho2 in 0.5f64..0.9999,
        period in 1u64..50,
    ) {
        let h = Hyper { lr, rho1, rho2, period, ..Hyper::default() };
        compare(seed, 3, 200, &h)?;
    }

    #[test]
    fn schedule_matches_reference(t in 0u64..5000, period in 1u64..100) {
        let h = Hyper { period, ..Hyper::default() };
        let cfg = ScheduleConfig { steps: period, ..Default::default() };
        prop_assert_eq!(cyclic_lr(t, &cfg), lr_t(t, &h));
        prop_assert_eq!(cyclic_lra(t, &cfg), lra_t(t, &h));
    }
}
