//! Simulated CKKS-style slot engine.
//!
//! A [`SlotVector`] stands in for one ciphertext (or encoded plaintext): a
//! fixed-length vector of reals plus the number of multiplicative levels it
//! has consumed. The [`Engine`] applies slot-wise arithmetic and rotations,
//! enforces the depth budget, and counts rotations and multiplications so
//! circuits can be audited.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chebyshev;
use crate::error::{Error, Result};

/// Upper bound (exclusive) on the relative perturbation per multiplication.
pub const MAX_PERTURBATION: f64 = 1.0 / 1024.0;

/// Slack allowed beyond [-1, 1] before `eval_chebyshev` reports a domain error.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;

/// Bytes per slot per level, calibrated so the two-party n = 1,000, k = 2,
/// d = 2, ten-round transcript totals 17.9 MB (see `protocol::calibrate_size_model`).
pub const DEFAULT_BYTES_PER_SLOT_PER_LEVEL: f64 = 5.057_915_581_597_222;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeModel {
    pub bytes_per_slot_per_level: f64,
    pub base_overhead_bytes: f64,
}

impl Default for SizeModel {
    fn default() -> Self {
        SizeModel {
            bytes_per_slot_per_level: DEFAULT_BYTES_PER_SLOT_PER_LEVEL,
            base_overhead_bytes: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub slot_count: usize,
    pub depth_budget: u32,
    pub approx_perturbation: f64,
    pub size_model: SizeModel,
    /// Seed of the perturbation stream; unused when the perturbation is 0.
    pub perturbation_seed: u64,
}

impl EngineConfig {
    pub fn new(slot_count: usize, depth_budget: u32) -> Result<Self> {
        let cfg = EngineConfig {
            slot_count,
            depth_budget,
            approx_perturbation: 0.0,
            size_model: SizeModel::default(),
            perturbation_seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_count == 0 || !self.slot_count.is_power_of_two() {
            return Err(Error::Config(format!(
                "slot_count {} is not a power of two",
                self.slot_count
            )));
        }
        if !(0.0..MAX_PERTURBATION).contains(&self.approx_perturbation) {
            return Err(Error::Config(format!(
                "approx_perturbation {} must lie in [0, 2^-10)",
                self.approx_perturbation
            )));
        }
        let sm = &self.size_model;
        if !(sm.bytes_per_slot_per_level > 0.0) || !(sm.base_overhead_bytes >= 0.0) {
            return Err(Error::Config("size model constants out of range".into()));
        }
        Ok(())
    }

    pub fn ciphertext_size_bytes(&self, levels_remaining: u32) -> u64 {
        ciphertext_size_bytes(levels_remaining, self)
    }
}

/// Byte size of one ciphertext with `levels_remaining` levels left: two ring
/// polynomials of dimension `2 * slot_count`, one limb per level plus the base.
pub fn ciphertext_size_bytes(levels_remaining: u32, cfg: &EngineConfig) -> u64 {
    let sm = &cfg.size_model;
    let body = 2.0
        * cfg.slot_count as f64
        * 2.0
        * (levels_remaining as f64 + 1.0)
        * sm.bytes_per_slot_per_level;
    (sm.base_overhead_bytes + body).ceil() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Ciphertext,
    Plaintext,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotVector {
    slots: Vec<f64>,
    depth: u32,
    kind: Kind,
}

impl SlotVector {
    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn depth_consumed(&self) -> u32 {
        self.depth
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn is_ciphertext(&self) -> bool {
        self.kind == Kind::Ciphertext
    }
}

/// Operation counters, read with [`Engine::stats`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStats {
    pub rotations: u64,
    pub multiplications: u64,
}

#[derive(Debug)]
pub struct Engine {
    cfg: EngineConfig,
    rotations: AtomicU64,
    multiplications: AtomicU64,
    noise: Option<Mutex<ChaCha8Rng>>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let noise = (cfg.approx_perturbation > 0.0)
            .then(|| Mutex::new(ChaCha8Rng::seed_from_u64(cfg.perturbation_seed)));
        Ok(Engine {
            cfg,
            rotations: AtomicU64::new(0),
            multiplications: AtomicU64::new(0),
            noise,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn slot_count(&self) -> usize {
        self.cfg.slot_count
    }

    pub fn depth_budget(&self) -> u32 {
        self.cfg.depth_budget
    }

    pub fn levels_remaining(&self, v: &SlotVector) -> u32 {
        self.cfg.depth_budget.saturating_sub(v.depth)
    }

    pub fn stats(&self) -> OpStats {
        OpStats {
            rotations: self.rotations.load(Ordering::Relaxed),
            multiplications: self.multiplications.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.rotations.store(0, Ordering::Relaxed);
        self.multiplications.store(0, Ordering::Relaxed);
    }

    fn padded(&self, values: &[f64]) -> Result<Vec<f64>> {
        let n = self.cfg.slot_count;
        if values.len() > n {
            return Err(Error::TooManyValues {
                count: values.len(),
                slot_count: n,
            });
        }
        let mut slots = vec![0.0; n];
        slots[..values.len()].copy_from_slice(values);
        Ok(slots)
    }

    pub fn encrypt(&self, values: &[f64]) -> Result<SlotVector> {
        Ok(SlotVector {
            slots: self.padded(values)?,
            depth: 0,
            kind: Kind::Ciphertext,
        })
    }

    /// Encodes values as a plaintext operand.
    pub fn encode(&self, values: &[f64]) -> Result<SlotVector> {
        Ok(SlotVector {
            slots: self.padded(values)?,
            depth: 0,
            kind: Kind::Plaintext,
        })
    }

    /// Plaintext with every slot equal to `c`.
    pub fn constant(&self, c: f64) -> SlotVector {
        SlotVector {
            slots: vec![c; self.cfg.slot_count],
            depth: 0,
            kind: Kind::Plaintext,
        }
    }

    pub fn decrypt(&self, v: &SlotVector) -> Vec<f64> {
        v.slots.clone()
    }

    fn check_len(&self, a: &SlotVector, b: &SlotVector) -> Result<()> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        Ok(())
    }

    fn joined_kind(a: &SlotVector, b: &SlotVector) -> Kind {
        if a.is_ciphertext() || b.is_ciphertext() {
            Kind::Ciphertext
        } else {
            Kind::Plaintext
        }
    }

    fn zip_with(
        &self,
        a: &SlotVector,
        b: &SlotVector,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<SlotVector> {
        self.check_len(a, b)?;
        Ok(SlotVector {
            slots: a.slots.iter().zip(&b.slots).map(|(x, y)| f(*x, *y)).collect(),
            depth: a.depth.max(b.depth),
            kind: Self::joined_kind(a, b),
        })
    }

    pub fn add(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.zip_with(a, b, |x, y| x + y)
    }

    pub fn sub(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.zip_with(a, b, |x, y| x - y)
    }

    /// In-place accumulation `acc += v`.
    pub fn add_assign(&self, acc: &mut SlotVector, v: &SlotVector) -> Result<()> {
        self.check_len(acc, v)?;
        for (x, y) in acc.slots.iter_mut().zip(&v.slots) {
            *x += *y;
        }
        acc.depth = acc.depth.max(v.depth);
        acc.kind = Self::joined_kind(acc, v);
        Ok(())
    }

    /// Adds a public constant to every slot; no level is consumed.
    pub fn add_scalar(&self, v: &SlotVector, c: f64) -> SlotVector {
        SlotVector {
            slots: v.slots.iter().map(|x| x + c).collect(),
            depth: v.depth,
            kind: v.kind,
        }
    }

    pub fn neg(&self, v: &SlotVector) -> SlotVector {
        SlotVector {
            slots: v.slots.iter().map(|x| -x).collect(),
            depth: v.depth,
            kind: v.kind,
        }
    }

    fn charge(&self, op: &'static str, base: u32, levels: u32) -> Result<u32> {
        let required = base + levels;
        if required > self.cfg.depth_budget {
            return Err(Error::DepthBudget {
                op,
                required,
                budget: self.cfg.depth_budget,
            });
        }
        Ok(required)
    }

    fn perturb(&self, slots: &mut [f64], levels: u32) {
        if let Some(noise) = &self.noise {
            let p = self.cfg.approx_perturbation;
            let mut rng = noise.lock().expect("perturbation stream poisoned");
            for s in slots.iter_mut() {
                for _ in 0..levels {
                    *s *= 1.0 + rng.random_range(-p..=p);
                }
            }
        }
    }

    pub fn mul(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.check_len(a, b)?;
        let kind = Self::joined_kind(a, b);
        if kind == Kind::Plaintext {
            return self.zip_with(a, b, |x, y| x * y);
        }
        let depth = self.charge("mul", a.depth.max(b.depth), 1)?;
        self.multiplications.fetch_add(1, Ordering::Relaxed);
        let mut slots: Vec<f64> = a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect();
        self.perturb(&mut slots, 1);
        Ok(SlotVector { slots, depth, kind })
    }

    pub fn square(&self, v: &SlotVector) -> Result<SlotVector> {
        self.mul(v, v)
    }

    /// Multiplies by a public constant; charged like any plaintext product.
    pub fn mul_scalar(&self, v: &SlotVector, c: f64) -> Result<SlotVector> {
        self.mul(v, &self.constant(c))
    }

    /// Cyclic left shift by `r` slots; negative `r` shifts right.
    pub fn rotate(&self, v: &SlotVector, r: i64) -> SlotVector {
        let n = v.slots.len();
        if n == 0 {
            return v.clone();
        }
        let shift = r.rem_euclid(n as i64) as usize;
        if shift != 0 && v.is_ciphertext() {
            self.rotations.fetch_add(1, Ordering::Relaxed);
        }
        let mut slots = Vec::with_capacity(n);
        slots.extend_from_slice(&v.slots[shift..]);
        slots.extend_from_slice(&v.slots[..shift]);
        SlotVector {
            slots,
            depth: v.depth,
            kind: v.kind,
        }
    }

    /// Depth charged by [`Engine::eval_chebyshev`] for a series of `degree`.
    pub fn chebyshev_depth(degree: usize) -> u32 {
        (usize::BITS - degree.leading_zeros()) + 1
    }

    pub fn eval_chebyshev(&self, v: &SlotVector, coeffs: &[f64]) -> Result<SlotVector> {
        self.eval_chebyshev_scaled(v, coeffs, 1.0)
    }

    /// Evaluates the series at `input_scale * x` slot-wise. The affine map
    /// into [-1, 1] is the extra level in the cost model.
    pub fn eval_chebyshev_scaled(
        &self,
        v: &SlotVector,
        coeffs: &[f64],
        input_scale: f64,
    ) -> Result<SlotVector> {
        let degree = coeffs.len().saturating_sub(1);
        if degree < 1 {
            return Err(Error::Config("chebyshev series needs degree >= 1".into()));
        }
        for (slot, x) in v.slots.iter().enumerate() {
            let y = x * input_scale;
            if !(y.abs() <= 1.0 + DOMAIN_TOLERANCE) {
                return Err(Error::Domain { slot, value: y });
            }
        }
        let levels = Self::chebyshev_depth(degree);
        let depth = if v.is_ciphertext() {
            self.charge("eval_chebyshev", v.depth, levels)?
        } else {
            0
        };
        let mut slots: Vec<f64> = v
            .slots
            .iter()
            .map(|x| chebyshev::clenshaw(coeffs, (x * input_scale).clamp(-1.0, 1.0)))
            .collect();
        if v.is_ciphertext() {
            self.multiplications.fetch_add(degree as u64, Ordering::Relaxed);
            self.perturb(&mut slots, levels);
        }
        Ok(SlotVector {
            slots,
            depth,
            kind: v.kind,
        })
    }
}
