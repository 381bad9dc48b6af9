//! Packed argmin under encryption.
//!
//! Distances to the `k` centroids arrive twice per block: once row-encoded
//! (entry `(r, c)` is `d_c`) and once column-encoded (entry `(r, c)` is `d_r`).
//! A single slot-wise comparison then yields every pairwise comparison, the
//! column sums give ranks, and the indicator polynomial `phi` turns rank 1
//! into 1 and ranks `2..k` into 0.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chebyshev;
use crate::engine::{Engine, SlotVector};
use crate::error::{Error, Result};
use crate::packed::{Axis, MaskKey, PackedOps};

pub const DEFAULT_SIGN_DEGREE: usize = 127;
pub const DEFAULT_TIE_MARGIN: f64 = 0.01;

/// Threshold below which a decrypted indicator entry counts as zero.
pub const NULL_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignApproxConfig {
    /// Odd degree of the Chebyshev interpolant of `sign`.
    pub degree: usize,
    /// Maps raw differences into [-1, 1].
    pub input_scale: f64,
    /// Scaled differences below this are unreliable by contract.
    pub tie_margin: f64,
    /// Extra `y -> (3y - y^3) / 2` sharpening steps, two levels each.
    #[serde(default)]
    pub refinements: u32,
}

impl Default for SignApproxConfig {
    fn default() -> Self {
        SignApproxConfig {
            degree: DEFAULT_SIGN_DEGREE,
            input_scale: 1.0,
            tie_margin: DEFAULT_TIE_MARGIN,
            refinements: 0,
        }
    }
}

impl SignApproxConfig {
    /// Scale `1 / (d (2B)^2)`: the largest squared-distance difference in
    /// `[-B, B]^d` maps to 1.
    pub fn for_domain(dims: usize, bound: f64) -> Self {
        SignApproxConfig {
            input_scale: 1.0 / max_squared_distance(dims, bound),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "sign degree {} must be odd",
                self.degree
            )));
        }
        if !(self.tie_margin > 0.0 && self.tie_margin < 1.0) {
            return Err(Error::Config(format!(
                "tie margin {} must lie in (0, 1)",
                self.tie_margin
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config("input scale must be positive".into()));
        }
        Ok(())
    }

    /// Levels consumed by one comparison.
    pub fn depth(&self) -> u32 {
        Engine::chebyshev_depth(self.degree) + 2 * self.refinements
    }

    /// Smallest raw difference the comparison resolves by contract.
    pub fn min_gap(&self) -> f64 {
        self.tie_margin / self.input_scale
    }

    pub fn coefficients(&self) -> Arc<[f64]> {
        chebyshev::sign_coefficients(self.degree)
    }

    /// Scalar counterpart of [`cmp`].
    pub fn compare_scalar(&self, a: f64, b: f64) -> f64 {
        let mut y = chebyshev::clenshaw(&self.coefficients(), (a - b) * self.input_scale);
        for _ in 0..self.refinements {
            y = 1.5 * y - 0.5 * y * y * y;
        }
        0.5 * y + 0.5
    }
}

pub fn max_squared_distance(dims: usize, bound: f64) -> f64 {
    dims as f64 * (2.0 * bound) * (2.0 * bound)
}

pub fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

/// Slot-wise approximation of `[a > b]`: 1 where `a > b`, 0 where `a < b`,
/// 0.5 on ties.
pub fn cmp(e: &Engine, a: &SlotVector, b: &SlotVector, cfg: &SignApproxConfig) -> Result<SlotVector> {
    cfg.validate()?;
    let diff = e.sub(a, b)?;
    let coeffs = cfg.coefficients();
    if cfg.refinements == 0 {
        // The affine map 0.5 * sign + 0.5 folds into the coefficients.
        let mut folded: Vec<f64> = coeffs.iter().map(|c| 0.5 * c).collect();
        folded[0] += 0.5;
        return e.eval_chebyshev_scaled(&diff, &folded, cfg.input_scale);
    }
    let mut y = e.eval_chebyshev_scaled(&diff, &coeffs, cfg.input_scale)?;
    for step in 0..cfg.refinements {
        let last = step + 1 == cfg.refinements;
        let (lin, cube) = if last { (0.75, -0.25) } else { (1.5, -0.5) };
        let y2 = e.square(&y)?;
        let scaled = e.mul_scalar(&y, cube)?;
        let cubic = e.mul(&scaled, &y2)?;
        let linear = e.mul_scalar(&y, lin)?;
        y = e.add(&cubic, &linear)?;
        if last {
            y = e.add_scalar(&y, 0.5);
        }
    }
    Ok(y)
}

/// Ranks per block in row 0: column sums of `cmp(v_row, v_col)` plus 0.5.
/// Tied elements share the mean of their positions.
pub fn rank(
    ops: &PackedOps,
    v_row: &SlotVector,
    v_col: &SlotVector,
    cfg: &SignApproxConfig,
) -> Result<SlotVector> {
    let e = ops.engine();
    let c = cmp(e, v_row, v_col, cfg)?;
    let sums = ops.sum(&c, Axis::Row)?;
    let layout = *ops.layout();
    let half = ops.cached_mask(MaskKey::Named("half-row0", 0, 0), || {
        layout.grid(|_, r, _| if r == 0 { 0.5 } else { 0.0 })
    })?;
    e.add(&sums, &half)
}

/// `1 / prod_{j=2..k} (1 - j)`.
pub fn phi_normalizer(k: usize) -> f64 {
    (2..=k).map(|j| 1.0 - j as f64).product::<f64>().recip()
}

/// Scalar `phi(x) = prod_{j=2..k} (x - j) / prod_{j=2..k} (1 - j)`.
pub fn phi_scalar(x: f64, k: usize) -> f64 {
    (2..=k).map(|j| x - j as f64).product::<f64>() * phi_normalizer(k)
}

/// `prod_{j=2..k} (r - j)` as a balanced product tree.
fn phi_product(e: &Engine, r: &SlotVector, k: usize) -> Result<SlotVector> {
    let mut level: Vec<SlotVector> = (2..=k).map(|j| e.add_scalar(r, -(j as f64))).collect();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(e.mul(&a, &b)?),
                None => next.push(a),
            }
        }
        level = next;
    }
    Ok(level.pop().expect("k >= 2 gives at least one factor"))
}

/// Indicator polynomial on ranks: 1 at rank 1, 0 at integer ranks `2..k`.
/// Tree depth `ceil(log2(k - 1))`, then one plaintext scaling.
pub fn indicator_phi(ops: &PackedOps, r: &SlotVector) -> Result<SlotVector> {
    let e = ops.engine();
    let k = ops.layout().k();
    let prod = phi_product(e, r, k)?;
    e.mul_scalar(&prod, phi_normalizer(k))
}

/// One-hot argmin per block in row 0, columns `< k`. Everything else,
/// including blocks at or past `active_blocks`, is zeroed by the final mask,
/// which also carries the normalizer of `phi`.
pub fn argmin_packed_active(
    ops: &PackedOps,
    distances_row: &SlotVector,
    distances_col: &SlotVector,
    cfg: &SignApproxConfig,
    active_blocks: usize,
) -> Result<SlotVector> {
    let e = ops.engine();
    let layout = *ops.layout();
    let k = layout.k();
    let ranks = rank(ops, distances_row, distances_col, cfg)?;
    let prod = phi_product(e, &ranks, k)?;
    let norm = phi_normalizer(k);
    let mask = ops.cached_mask(
        MaskKey::Named("argmin", active_blocks as u64, norm.to_bits()),
        || {
            layout.grid(|b, r, c| {
                if r == 0 && c < k && b < active_blocks {
                    norm
                } else {
                    0.0
                }
            })
        },
    )?;
    e.mul(&prod, &mask)
}

pub fn argmin_packed(
    ops: &PackedOps,
    distances_row: &SlotVector,
    distances_col: &SlotVector,
    cfg: &SignApproxConfig,
) -> Result<SlotVector> {
    let blocks = ops.layout().blocks_per_ct();
    argmin_packed_active(ops, distances_row, distances_col, cfg, blocks)
}

/// Two-cluster assignment on compact encodings: about 1 where the second
/// centroid is strictly closer.
pub fn argmin_two(
    e: &Engine,
    dist1: &SlotVector,
    dist2: &SlotVector,
    cfg: &SignApproxConfig,
) -> Result<SlotVector> {
    cmp(e, dist1, dist2, cfg)
}

/// Levels consumed by [`argmin_packed`] on fresh inputs.
pub fn argmin_depth(k: usize, cfg: &SignApproxConfig) -> u32 {
    cfg.depth() + 1 + ceil_log2(k - 1) + 1
}

/// Row 0, first `k` entries of every block.
pub fn indicator_rows(ops: &PackedOps, slots: &[f64]) -> Vec<Vec<f64>> {
    let layout = ops.layout();
    (0..layout.blocks_per_ct())
        .map(|b| (0..layout.k()).map(|c| slots[layout.slot(b, 0, c)]).collect())
        .collect()
}

/// Index of the entry at or above [`NULL_THRESHOLD`], if exactly one is.
pub fn decode_one_hot(row: &[f64]) -> Option<usize> {
    let mut hits = row.iter().enumerate().filter(|(_, v)| **v >= NULL_THRESHOLD);
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Some(i),
        _ => None,
    }
}
