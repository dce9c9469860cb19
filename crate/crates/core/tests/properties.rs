use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

use lookdown_core::dual::simulate_r;
use lookdown_core::kernel::{binomial_inverse, mean_zero_residual, second_moment};
use lookdown_core::lookdown::{BirthEvent, LookdownState};
use lookdown_core::measure::{Component, LambdaMeasure};
use lookdown_core::rates::{capital_phi, lambda_rate, merger_rate, mu_threshold, phi, phi_increment, total_rate};
use lookdown_core::rng::substream;
use lookdown_core::sde::{jump_map, SdeConfig, SdeEngine};
use lookdown_core::stats::SummaryStats;

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Composite Simpson rule on `[0, 1]` for smooth integrands.
fn simpson(f: impl Fn(f64) -> f64, m: usize) -> f64 {
    let h = 1.0 / m as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..m {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn beta_measure() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.3f64..4.0, 0.3f64..4.0, 0.1f64..3.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merger_rates_are_consistent((a, b, m) in beta_measure(), k in 2u64..25) {
        let lam = LambdaMeasure::beta(a, b, m);
        for l in 2..=k {
            let lhs = lambda_rate(&lam, k, l);
            let rhs = lambda_rate(&lam, k + 1, l) + lambda_rate(&lam, k + 1, l + 1);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs, "k={} l={}: {} vs {}", k, l, lhs, rhs);
        }
    }

    #[test]
    fn total_rate_quadrature_matches_sum((a, b, m) in beta_measure(), n in 2u64..30) {
        let lam = LambdaMeasure::beta(a, b, m);
        let sum: f64 = (2..=n).map(|l| merger_rate(&lam, n, l)).sum();
        let quad = total_rate(&lam, n);
        prop_assert!((sum - quad).abs() <= 1e-8 * sum, "{} vs {}", sum, quad);
        let direct: f64 = (2..=n).map(|l| choose(n, l) * lambda_rate(&lam, n, l)).sum();
        prop_assert!((sum - direct).abs() <= 1e-10 * sum);
    }

    #[test]
    fn phi_increments((a, b, m) in beta_measure(), n in 2u64..200) {
        let lam = LambdaMeasure::beta(a, b, m);
        let d = phi(&lam, n + 1) - phi(&lam, n);
        let inc = phi_increment(&lam, n);
        prop_assert!((d - inc).abs() <= 1e-7 * inc.abs().max(1.0), "{} vs {}", d, inc);
    }

    #[test]
    fn point_mass_closed_forms(p in 0.01f64..0.99, m in 0.1f64..3.0, n in 2u64..60) {
        let lam = LambdaMeasure::point_mass(p, m);
        let q = 1.0 - p;
        let bracket = n as f64 * p - 1.0 + q.powi(n as i32);
        let phi_want = m * bracket / (p * p);
        prop_assert!((phi(&lam, n) - phi_want).abs() <= 1e-9 * phi_want);
        let cap_want = phi_want / q;
        prop_assert!((capital_phi(&lam, n) - cap_want).abs() <= 1e-9 * cap_want);
        let mu = mu_threshold(&lam).unwrap();
        prop_assert!((mu - m / (p * q)).abs() <= 1e-12 * mu);
    }

    #[test]
    fn beta_moments_match_rising_factorials((a, b, m) in beta_measure(), r in 0u32..6) {
        let lam = LambdaMeasure::beta(a, b, m);
        let want = m * (0..r).map(|i| (a + i as f64) / (a + b + i as f64)).product::<f64>();
        prop_assert!((lam.moment(r as f64) - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn uniform_moments_match_simpson(r in 1.0f64..3.0) {
        // Smooth enough for Simpson once r >= 1.
        let want = simpson(|p| p.powf(r), 4000);
        prop_assert!((LambdaMeasure::uniform(1.0).moment(r) - want).abs() <= 1e-9);
    }

    #[test]
    fn exact_kernel_identities(n in 2u64..=12, frac in 0.0f64..1.0, p in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let nr = 1 + ((n - 1) as f64 * frac) as u64;
        let nr = nr.min(n - 1);
        let r = nr as f64 / n as f64;
        prop_assert!(mean_zero_residual(n, r, p, v).unwrap().abs() <= 1e-12);
        let s = second_moment(n, r, p).unwrap();
        prop_assert!((s - p * p * r * (1.0 - r)).abs() <= 1e-12);
    }

    #[test]
    fn float_kernel_identities(n in 17u64..=60, frac in 0.0f64..1.0, p in 0.05f64..0.95, v in 0.0f64..=1.0) {
        let nr = (1 + ((n - 1) as f64 * frac) as u64).min(n - 1);
        let r = nr as f64 / n as f64;
        prop_assert!(mean_zero_residual(n, r, p, v).unwrap().abs() <= 1e-9);
        let s = second_moment(n, r, p).unwrap();
        prop_assert!((s - p * p * r * (1.0 - r)).abs() <= 1e-9);
    }

    #[test]
    fn binomial_inverse_is_the_quantile(n in 1u64..60, p in 0.01f64..0.99, v in 0.0f64..1.0) {
        let d = Binomial::new(p, n).unwrap();
        prop_assume!((0..=n).all(|k| (d.cdf(k) - v).abs() > 1e-9));
        let want = (0..=n).find(|&k| d.cdf(k) >= v).unwrap_or(n);
        prop_assert_eq!(binomial_inverse(v, n, p).unwrap(), want);
    }
}

proptest! {
    #[test]
    fn jump_map_stays_in_unit_interval_and_is_mean_zero(x in 0.0f64..=1.0, p in 0.0f64..=1.0, u in 0.0f64..=1.0) {
        let y = jump_map(x, p, u);
        prop_assert!((0.0..=1.0).contains(&y));
        // Averaging over u: up with probability x, down otherwise.
        let mean = x * jump_map(x, p, 0.0) + (1.0 - x) * jump_map(x, p, 1.0);
        prop_assert!((mean - x).abs() <= 1e-15);
    }

    #[test]
    fn birth_matches_naive_insertion(
        types in proptest::collection::vec(0u8..=1, 3..40),
        picks in proptest::collection::btree_set(1usize..60, 2..6),
    ) {
        let l = types.len();
        let participants: Vec<usize> = picks.into_iter().collect();
        let mut state = LookdownState::from_types(types.clone(), l).unwrap();
        state.apply_birth(&BirthEvent::new(participants.clone(), 0.5).unwrap()).unwrap();

        let inside: Vec<usize> = participants.iter().copied().filter(|&i| i <= l).collect();
        let mut want = types.clone();
        if inside.len() >= 2 {
            let first = inside[0];
            let parent = types[first - 1];
            let mut queue = types[first..].iter();
            for level in first + 1..=l {
                want[level - 1] = if inside.contains(&level) { parent } else { *queue.next().unwrap() };
            }
        }
        prop_assert_eq!(state.types(), &want[..]);
    }

    #[test]
    fn death_removes_and_refills(types in proptest::collection::vec(0u8..=1, 2..40), at in 0usize..40, refill in 0u8..=1) {
        let l = types.len();
        let level = at % l + 1;
        let mut state = LookdownState::from_types(types.clone(), l).unwrap();
        state.apply_death(level, refill).unwrap();
        let mut want = types.clone();
        if types[level - 1] == 1 {
            want.remove(level - 1);
            want.push(refill);
        }
        prop_assert_eq!(state.types(), &want[..]);
    }

    #[test]
    fn sde_paths_stay_in_unit_interval(seed in 0u64..1000, alpha in 0.0f64..2.0, x0 in 0.0f64..=1.0) {
        let lam = LambdaMeasure::new(0.2, vec![Component::Uniform { mass: 1.0 }]).unwrap();
        let eng = SdeEngine::new(&lam, alpha, SdeConfig::default()).unwrap();
        let grid = [0.0, 0.1, 0.2, 0.3];
        let a = eng.run(x0, 0.3, &grid, &mut substream(seed, 0)).unwrap();
        let b = eng.run(x0, 0.3, &grid, &mut substream(seed, 0)).unwrap();
        prop_assert_eq!(&a.path, &b.path);
        prop_assert_eq!(a.path.points.len(), grid.len());
        for &(_, x) in &a.path.points {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}

#[test]
fn kingman_pair_dual_matches_closed_form() {
    // Two blocks merge at rate 1: E[x^{R_t}] = x + (x² - x) e^{-t}.
    let lam = LambdaMeasure::kingman(1.0);
    let (t, x): (f64, f64) = (0.7, 0.4);
    let values: Vec<f64> = (0..20_000)
        .map(|r| {
            let path = simulate_r(&lam, 0.0, 2, t, &[t], &mut substream(99, r)).unwrap();
            x.powf(path.last().unwrap())
        })
        .collect();
    let s = SummaryStats::from_values(&values);
    let want = x + (x * x - x) * (-t).exp();
    assert!((s.mean - want).abs() <= 4.0 * s.se, "{} ± {} vs {}", s.mean, s.se, want);
}

#[test]
fn kingman_sde_second_moment_matches_closed_form() {
    let lam = LambdaMeasure::kingman(1.0);
    let eng = SdeEngine::new(&lam, 0.0, SdeConfig::default()).unwrap();
    let (t, x): (f64, f64) = (0.5, 0.4);
    let values: Vec<f64> = (0..20_000)
        .map(|r| {
            let run = eng.run(x, t, &[t], &mut substream(5, r)).unwrap();
            run.x * run.x
        })
        .collect();
    let s = SummaryStats::from_values(&values);
    let want = x + (x * x - x) * (-t).exp();
    // 2e-3 allows for the Euler step bias.
    assert!((s.mean - want).abs() <= 4.0 * s.se + 2e-3, "{} ± {} vs {}", s.mean, s.se, want);
}
