use proptest::prelude::*;
use vkmeans::dp::*;
use vkmeans::engine::{Engine, EngineConfig};

proptest! {
    #[test]
    fn sum_scale_is_2b_times_count_scale(eps in 0.01f64..10.0, delta in 1e-9f64..0.1, bound in 0.01f64..100.0) {
        let rb = RoundBudget { epsilon: eps, delta, composition: Composition::Simple };
        let s = NoiseScales::from_round_budget(&rb, bound, SigmaAssignment::BySensitivity).unwrap();
        prop_assert!((s.sigma_sum / s.sigma_count - 2.0 * bound).abs() < 1e-9 * bound);
        let swapped = NoiseScales::from_round_budget(&rb, bound, SigmaAssignment::AsPrinted).unwrap();
        prop_assert!((swapped.sigma_count / swapped.sigma_sum - 2.0 * bound).abs() < 1e-9 * bound);
    }

    #[test]
    fn budgets_are_conserved(eps in 0.05f64..20.0, delta in 1e-9f64..0.5, rounds in 1u32..200) {
        let simple = per_round_budget(&PrivacyBudget::new(eps, delta, rounds, Composition::Simple).unwrap()).unwrap();
        prop_assert!((simple.epsilon * rounds as f64 - eps).abs() < 1e-9 * eps);
        let b = PrivacyBudget::new(eps, delta, rounds, Composition::Advanced).unwrap();
        let adv = per_round_budget(&b).unwrap();
        prop_assert!((advanced_total(adv.epsilon, rounds, b.delta_slack()) - eps).abs() < 1e-9 * eps);
        prop_assert!(adv.delta * rounds as f64 + b.delta_slack() <= delta * (1.0 + 1e-12));
        let auto = per_round_budget(&PrivacyBudget::new(eps, delta, rounds, Composition::Auto).unwrap()).unwrap();
        prop_assert_eq!(auto.epsilon, simple.epsilon.max(adv.epsilon));
    }

    #[test]
    fn sigma_shrinks_with_budget(s in 0.1f64..10.0, eps in 0.1f64..5.0, delta in 1e-8f64..0.01) {
        let a = gaussian_sigma(s, eps, delta).unwrap();
        prop_assert!(gaussian_sigma(s, 2.0 * eps, delta).unwrap() < a);
        prop_assert!(gaussian_sigma(s, eps, delta / 10.0).unwrap() > a);
    }
}

#[test]
fn closed_form_sigma() {
    let expected = (2.0 * (1.25f64 / 1e-5).ln()).sqrt();
    assert!((gaussian_sigma(1.0, 1.0, 1e-5).unwrap() - expected).abs() < 1e-12);
    assert!(gaussian_sigma(1.0, 0.0, 1e-5).is_err());
    assert!(gaussian_sigma(1.0, 1.0, 1.0).is_err());
}

#[test]
fn noise_lands_only_on_requested_slots() {
    let e = Engine::new(EngineConfig::new(16, 0).unwrap()).unwrap();
    let t = e.encrypt(&[5.0; 16]).unwrap();
    let s = vec![e.encrypt(&[1.0; 16]).unwrap()];
    let scales = NoiseScales { sigma_sum: 1.0, sigma_count: 1.0, bound: 0.5 };
    let (s2, t2) = perturb_aggregates_seeded(&e, &s, &t, &scales, &[0, 1, 2], 3).unwrap();
    let t2 = e.decrypt(&t2);
    assert!(t2[..3].iter().all(|v| *v != 5.0));
    assert!(t2[3..].iter().all(|v| *v == 5.0));
    assert!(e.decrypt(&s2[0])[3..].iter().all(|v| *v == 1.0));
    let again = perturb_aggregates_seeded(&e, &s, &e.encrypt(&[5.0; 16]).unwrap(), &scales, &[0, 1, 2], 3).unwrap();
    assert_eq!(e.decrypt(&again.1), t2);
}

/// Sample correlation between two noisy slots over many seeds stays inside
/// a 1% two-sided band around zero.
#[test]
fn noise_is_uncorrelated_across_slots() {
    let e = Engine::new(EngineConfig::new(4, 0).unwrap()).unwrap();
    let zero = e.encrypt(&[0.0; 4]).unwrap();
    let scales = NoiseScales { sigma_sum: 2.0, sigma_count: 1.0, bound: 1.0 };
    let trials = 4000;
    let mut pairs = Vec::with_capacity(trials);
    for seed in 0..trials as u64 {
        let (s, t) = perturb_aggregates_seeded(&e, std::slice::from_ref(&zero), &zero, &scales, &[0, 1], seed).unwrap();
        pairs.push((e.decrypt(&t)[0], e.decrypt(&s[0])[1]));
    }
    let n = trials as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let cov: f64 = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let vx: f64 = pairs.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>() / n;
    let vy: f64 = pairs.iter().map(|(_, y)| (y - my).powi(2)).sum::<f64>() / n;
    let r = cov / (vx * vy).sqrt();
    assert!(r.abs() < 2.576 / n.sqrt(), "correlation {r}");
}
