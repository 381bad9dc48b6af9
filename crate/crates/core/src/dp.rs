//! Differential-privacy bookkeeping for the released cluster aggregates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, SlotVector};
use crate::error::{Error, Result};

/// Sensitivity of a cluster count.
pub const SENSITIVITY_COUNT: f64 = 1.0;

/// Sensitivity of one coordinate of a cluster sum over `[-B, B]`.
pub fn sensitivity_sum(bound: f64) -> f64 {
    2.0 * bound
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    Simple,
    Advanced,
    #[default]
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon_total: f64,
    pub delta_total: f64,
    pub rounds: u32,
    pub composition: Composition,
}

impl PrivacyBudget {
    pub fn new(epsilon_total: f64, delta_total: f64, rounds: u32, composition: Composition) -> Result<Self> {
        let b = PrivacyBudget {
            epsilon_total,
            delta_total,
            rounds,
            composition,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_total > 0.0 && self.epsilon_total.is_finite()) {
            return Err(Error::Privacy(format!(
                "epsilon {} must be positive",
                self.epsilon_total
            )));
        }
        if !(self.delta_total > 0.0 && self.delta_total < 1.0) {
            return Err(Error::Privacy(format!(
                "delta {} must lie in (0, 1)",
                self.delta_total
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Privacy("at least one round is required".into()));
        }
        Ok(())
    }

    /// Slack term reserved for advanced composition.
    pub fn delta_slack(&self) -> f64 {
        self.delta_total / (self.rounds as f64 + 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// The rule the split came from (never `Auto`).
    pub composition: Composition,
}

fn simple_split(b: &PrivacyBudget) -> RoundBudget {
    let r = b.rounds as f64;
    RoundBudget {
        epsilon: b.epsilon_total / r,
        delta: b.delta_total / (r + 1.0),
        composition: Composition::Simple,
    }
}

fn advanced_split(b: &PrivacyBudget) -> RoundBudget {
    let r = b.rounds as f64;
    let slack = b.delta_slack();
    RoundBudget {
        epsilon: b.epsilon_total / (2.0 * (2.0 * r * (1.0 / slack).ln()).sqrt()),
        delta: b.delta_total * r / ((r + 1.0) * r),
        composition: Composition::Advanced,
    }
}

/// Total epsilon spent by `rounds` runs of an `epsilon_r` mechanism under
/// the advanced composition bound with the given slack.
pub fn advanced_total(epsilon_r: f64, rounds: u32, slack: f64) -> f64 {
    2.0 * epsilon_r * (2.0 * rounds as f64 * (1.0 / slack).ln()).sqrt()
}

/// Even per-round split of the budget.
pub fn per_round_budget(b: &PrivacyBudget) -> Result<RoundBudget> {
    b.validate()?;
    let out = match b.composition {
        Composition::Simple => simple_split(b),
        Composition::Advanced => advanced_split(b),
        Composition::Auto => {
            let s = simple_split(b);
            let a = advanced_split(b);
            if a.epsilon > s.epsilon {
                a
            } else {
                s
            }
        }
    };
    if !(out.epsilon > 0.0 && out.delta > 0.0) {
        return Err(Error::Privacy(format!(
            "infeasible split: epsilon {} delta {}",
            out.epsilon, out.delta
        )));
    }
    Ok(out)
}

/// Gaussian-mechanism scale `sqrt(2 ln(1.25 / delta)) * s / epsilon`.
pub fn gaussian_sigma(sensitivity: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(sensitivity >= 0.0) || !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Privacy(format!(
            "invalid gaussian parameters s={sensitivity} eps={epsilon} delta={delta}"
        )));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / epsilon)
}

/// Which aggregate gets the `2B` factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaAssignment {
    /// Scale follows sensitivity: sums get `2B`, counts get 1.
    #[default]
    BySensitivity,
    /// Sums get 1, counts get `2B`, reproducing the formulas as printed.
    AsPrinted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub sigma_sum: f64,
    pub sigma_count: f64,
    pub bound: f64,
}

impl NoiseScales {
    pub fn zero(bound: f64) -> Self {
        NoiseScales {
            sigma_sum: 0.0,
            sigma_count: 0.0,
            bound,
        }
    }

    pub fn from_round_budget(rb: &RoundBudget, bound: f64, assignment: SigmaAssignment) -> Result<Self> {
        let (s_sum, s_count) = match assignment {
            SigmaAssignment::BySensitivity => (sensitivity_sum(bound), SENSITIVITY_COUNT),
            SigmaAssignment::AsPrinted => (SENSITIVITY_COUNT, sensitivity_sum(bound)),
        };
        Ok(NoiseScales {
            sigma_sum: gaussian_sigma(s_sum, rb.epsilon, rb.delta)?,
            sigma_count: gaussian_sigma(s_count, rb.epsilon, rb.delta)?,
            bound,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_sum == 0.0 && self.sigma_count == 0.0
    }
}

fn noisy(
    e: &Engine,
    v: &SlotVector,
    sigma: f64,
    slots: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<SlotVector> {
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|err| Error::Privacy(err.to_string()))?;
    let mut noise = vec![0.0; e.slot_count()];
    for &s in slots {
        noise[s] = normal.sample(rng);
    }
    e.add(v, &e.encode(&noise)?)
}

/// Adds plaintext Gaussian noise to the meaningful `slots` of each sum and of
/// the count. Draw order: count first, then sums by dimension.
pub fn perturb_aggregates(
    e: &Engine,
    s_dims: &[SlotVector],
    t: &SlotVector,
    scales: &NoiseScales,
    slots: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<SlotVector>, SlotVector)> {
    if let Some(&bad) = slots.iter().find(|s| **s >= e.slot_count()) {
        return Err(Error::Config(format!("noise slot {bad} out of range")));
    }
    let t_out = noisy(e, t, scales.sigma_count, slots, rng)?;
    let s_out = s_dims
        .iter()
        .map(|s| noisy(e, s, scales.sigma_sum, slots, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((s_out, t_out))
}

pub fn perturb_aggregates_seeded(
    e: &Engine,
    s_dims: &[SlotVector],
    t: &SlotVector,
    scales: &NoiseScales,
    slots: &[usize],
    seed: u64,
) -> Result<(Vec<SlotVector>, SlotVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_aggregates(e, s_dims, t, scales, slots, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;

    #[test]
    fn simple_split_examples() {
        let b = PrivacyBudget::new(1.0, 1e-4, 10, Composition::Simple).unwrap();
        let rb = per_round_budget(&b).unwrap();
        assert!((rb.epsilon - 0.1).abs() < 1e-15);
        assert!((rb.delta - 1e-4 / 11.0).abs() < 1e-18);
        let one = PrivacyBudget::new(0.7, 1e-4, 1, Composition::Simple).unwrap();
        assert_eq!(per_round_budget(&one).unwrap().epsilon, 0.7);
    }

    #[test]
    fn advanced_split_recovers_total() {
        for (eps, delta, r) in [(1.0, 1e-4, 10), (4.0, 1e-6, 50), (0.5, 1e-3, 3)] {
            let b = PrivacyBudget::new(eps, delta, r, Composition::Advanced).unwrap();
            let rb = per_round_budget(&b).unwrap();
            assert!((advanced_total(rb.epsilon, r, b.delta_slack()) - eps).abs() < 1e-9);
        }
    }

    #[test]
    fn auto_picks_larger_epsilon() {
        let b = PrivacyBudget::new(1.0, 1e-4, 10, Composition::Auto).unwrap();
        assert_eq!(per_round_budget(&b).unwrap().composition, Composition::Simple);
        let many = PrivacyBudget::new(1.0, 1e-4, 2000, Composition::Auto).unwrap();
        assert_eq!(per_round_budget(&many).unwrap().composition, Composition::Advanced);
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 1e-5, 1, Composition::Simple).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0, 1, Composition::Simple).is_err());
        assert!(PrivacyBudget::new(1.0, 1e-5, 0, Composition::Simple).is_err());
    }

    #[test]
    fn sigma_examples() {
        let s = gaussian_sigma(1.0, 1.0, 1e-5).unwrap();
        assert!((s - 4.8448).abs() < 1e-3);
        assert_eq!(gaussian_sigma(0.0, 1.0, 1e-5).unwrap(), 0.0);
        let b = 0.75;
        let one = gaussian_sigma(b, 0.3, 1e-6).unwrap();
        let two = gaussian_sigma(2.0 * b, 0.3, 1e-6).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
        assert!(gaussian_sigma(1.0, 0.0, 1e-5).is_err());
        assert!(gaussian_sigma(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn scales_follow_sensitivity() {
        let rb = RoundBudget {
            epsilon: 0.1,
            delta: 1e-5,
            composition: Composition::Simple,
        };
        let s = NoiseScales::from_round_budget(&rb, 0.5, SigmaAssignment::BySensitivity).unwrap();
        assert!((s.sigma_sum / s.sigma_count - 1.0).abs() < 1e-12);
        let s = NoiseScales::from_round_budget(&rb, 3.0, SigmaAssignment::BySensitivity).unwrap();
        assert!((s.sigma_sum / s.sigma_count - 6.0).abs() < 1e-12);
        let p = NoiseScales::from_round_budget(&rb, 3.0, SigmaAssignment::AsPrinted).unwrap();
        assert!((p.sigma_count / p.sigma_sum - 6.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_touches_only_meaningful_slots() {
        let e = Engine::new(EngineConfig::new(16, 2).unwrap()).unwrap();
        let t = e.encrypt(&[1.0; 16]).unwrap();
        let s = vec![e.encrypt(&[2.0; 16]).unwrap()];
        let scales = NoiseScales {
            sigma_sum: 1.0,
            sigma_count: 1.0,
            bound: 1.0,
        };
        let (s2, t2) = perturb_aggregates_seeded(&e, &s, &t, &scales, &[0, 1], 9).unwrap();
        assert!(t2.slots()[2..].iter().all(|v| *v == 1.0));
        assert!(s2[0].slots()[2..].iter().all(|v| *v == 2.0));
        assert_ne!(t2.slots()[0], 1.0);
        let (s3, t3) = perturb_aggregates_seeded(&e, &s, &t, &scales, &[0, 1], 9).unwrap();
        assert_eq!(t2, t3);
        assert_eq!(s2, s3);
        let (s4, t4) =
            perturb_aggregates_seeded(&e, &s, &t, &NoiseScales::zero(1.0), &[0, 1], 9).unwrap();
        assert_eq!(t4, t);
        assert_eq!(s4, s);
    }
}
