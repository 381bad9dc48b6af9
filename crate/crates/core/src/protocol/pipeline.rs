//! Computing-party circuit: encoding, distances, argmin and aggregation.

use rayon::prelude::*;

use crate::argmin::{self, SignApproxConfig};
use crate::engine::{Engine, SlotVector};
use crate::error::{Error, Result};
use crate::packed::{MaskKey, PackedLayout, PackedOps, PaddingMode};

use super::DataPartition;

/// Batches evaluated concurrently before folding into the running sums.
const CHUNK: usize = 16;

/// Padding distance in the padded layout, as a multiple of the largest real
/// squared distance. The comparison scale is widened to match.
pub const PAD_DISTANCE_FACTOR: f64 = 1.25;
pub const PADDED_SCALE_FACTOR: f64 = 1.5;

/// One group of points that share a packed ciphertext: block `b` holds
/// point `points[b]`, taken from compact group `group` at in-block position
/// `(row, col)` after a left rotation by `offset`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub group: usize,
    pub offset: usize,
    pub row: usize,
    pub col: usize,
    pub points: Vec<usize>,
}

/// Assigns every point to exactly one block of one batch.
pub fn batch_plan(n: usize, layout: &PackedLayout) -> Vec<Batch> {
    let slots = layout.slot_count();
    let used = layout.slots_used();
    let m = layout.block_dim();
    let mut out = Vec::new();
    for group in 0..n.div_ceil(slots) {
        let in_group = (n - group * slots).min(slots);
        for (offset, avail) in [(0, in_group.min(used)), (used, in_group.saturating_sub(used))] {
            if avail == 0 {
                continue;
            }
            for row in 0..m {
                for col in 0..m {
                    let points: Vec<usize> = (0..layout.blocks_per_ct())
                        .map(|b| layout.slot(b, row, col))
                        .take_while(|s| *s < avail)
                        .map(|s| group * slots + offset + s)
                        .collect();
                    if !points.is_empty() {
                        out.push(Batch {
                            group,
                            offset,
                            row,
                            col,
                            points,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Compact encoding of one feature column, `slot_count` points per vector.
pub fn compact_column(e: &Engine, values: &[f64], encrypted: bool) -> Result<Vec<SlotVector>> {
    values
        .chunks(e.slot_count())
        .map(|chunk| if encrypted { e.encrypt(chunk) } else { e.encode(chunk) })
        .collect()
}

/// Fully replicated blocks of one column for one batch.
pub fn batch_blocks(
    ops: &PackedOps,
    batch: &Batch,
    compact: &[SlotVector],
    values: &[f64],
) -> Result<SlotVector> {
    let e = ops.engine();
    let layout = ops.layout();
    let src = &compact[batch.group];
    if !src.is_ciphertext() {
        let grid = layout.grid(|b, _, _| batch.points.get(b).map_or(0.0, |p| values[*p]));
        return e.encode(&grid);
    }
    let base = batch.group * layout.slot_count() + batch.offset;
    let positions: Vec<usize> = batch.points.iter().map(|p| p - base).collect();
    let rotated;
    let src = if batch.offset > 0 {
        rotated = e.rotate(src, batch.offset as i64);
        &rotated
    } else {
        src
    };
    ops.batch_extract_replicate(src, &positions)
}

/// Encrypted features of a key-holding party.
pub struct EncodedPartition {
    /// `[feature][group]` compact ciphertexts.
    pub compact: Vec<Vec<SlotVector>>,
    pub batches: Vec<Batch>,
    /// `[batch][feature]` cached replicated blocks.
    pub blocks: Vec<Vec<SlotVector>>,
}

/// Encrypts a partition compactly and caches its replicated blocks.
pub fn encode_points(ops: &PackedOps, part: &DataPartition) -> Result<EncodedPartition> {
    let e = ops.engine();
    let compact = part
        .features
        .iter()
        .map(|col| compact_column(e, col, true))
        .collect::<Result<Vec<_>>>()?;
    let batches = batch_plan(part.n(), ops.layout());
    let blocks = batches
        .par_iter()
        .map(|b| {
            compact
                .iter()
                .zip(&part.features)
                .map(|(c, v)| batch_blocks(ops, b, c, v))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedPartition {
        compact,
        batches,
        blocks,
    })
}

/// Plaintext centroid grids, one row- and one column-encoded per feature.
pub struct CentroidGrids {
    pub row: Vec<SlotVector>,
    pub col: Vec<SlotVector>,
}

pub fn centroid_grids(ops: &PackedOps, centers: &[Vec<f64>]) -> Result<CentroidGrids> {
    let e = ops.engine();
    let layout = ops.layout();
    let k = layout.k();
    let d = centers.first().map_or(0, |c| c.len());
    let mut row = Vec::with_capacity(d);
    let mut col = Vec::with_capacity(d);
    for g in 0..d {
        row.push(e.encode(&layout.grid(|_, _, c| if c < k { centers[c][g] } else { 0.0 }))?);
        col.push(e.encode(&layout.grid(|_, r, _| if r < k { centers[r][g] } else { 0.0 }))?);
    }
    Ok(CentroidGrids { row, col })
}

fn accumulate(e: &Engine, acc: &mut Option<SlotVector>, v: SlotVector) -> Result<()> {
    match acc {
        Some(a) => e.add_assign(a, &v),
        None => {
            *acc = Some(v);
            Ok(())
        }
    }
}

/// Row- and column-encoded squared distances of every block's point to
/// every centroid. Features are summed in index order whether they are
/// encrypted blocks or plaintext grids.
pub fn distance_step(
    ops: &PackedOps,
    blocks: &[SlotVector],
    grids: &CentroidGrids,
    pad: Option<&(SlotVector, SlotVector)>,
) -> Result<(SlotVector, SlotVector)> {
    let e = ops.engine();
    let mut row = None;
    let mut col = None;
    for (g, x) in blocks.iter().enumerate() {
        accumulate(e, &mut row, e.square(&e.sub(x, &grids.row[g])?)?)?;
        accumulate(e, &mut col, e.square(&e.sub(x, &grids.col[g])?)?)?;
    }
    let (mut row, mut col) = row.zip(col).ok_or_else(|| Error::Data("no features".into()))?;
    if let Some((pr, pc)) = pad {
        e.add_assign(&mut row, pr)?;
        e.add_assign(&mut col, pc)?;
    }
    Ok((row, col))
}

/// Pad grids for the padded layout: distance `pad` at positions `>= k`.
pub fn pad_grids(ops: &PackedOps, pad: f64) -> Result<(SlotVector, SlotVector)> {
    let e = ops.engine();
    let layout = ops.layout();
    let k = layout.k();
    Ok((
        e.encode(&layout.grid(|_, _, c| if c >= k { pad } else { 0.0 }))?,
        e.encode(&layout.grid(|_, r, _| if r >= k { pad } else { 0.0 }))?,
    ))
}

/// Products of one batch's indicator with its value blocks, and the
/// indicator itself as the count contribution.
fn batch_products(
    e: &Engine,
    a: &SlotVector,
    blocks: &[SlotVector],
) -> Result<(Vec<SlotVector>, SlotVector)> {
    let s = blocks.iter().map(|x| e.mul(a, x)).collect::<Result<Vec<_>>>()?;
    Ok((s, a.clone()))
}

/// Keeps slots `0..k` after the cross-block reduction.
fn release(ops: &PackedOps, v: &SlotVector) -> Result<SlotVector> {
    let k = ops.layout().k();
    let slots = ops.layout().slot_count();
    let mask = ops.cached_mask(MaskKey::Named("release", k as u64, 0), || {
        (0..slots).map(|s| if s < k { 1.0 } else { 0.0 }).collect()
    })?;
    ops.engine().mul(&ops.sum_blocks(v), &mask)
}

/// Per-cluster sums and counts from argmin indicators. Each indicator batch
/// pairs with its value blocks; results land in slots `0..k`.
pub fn aggregate_clusters(
    ops: &PackedOps,
    assignments: &[SlotVector],
    blocks: &[Vec<SlotVector>],
) -> Result<(Vec<SlotVector>, SlotVector)> {
    let e = ops.engine();
    let mut s_acc: Vec<Option<SlotVector>> = Vec::new();
    let mut t_acc = None;
    for (a, b) in assignments.iter().zip(blocks) {
        let (s, t) = batch_products(e, a, b)?;
        s_acc.resize(s.len(), None);
        for (acc, v) in s_acc.iter_mut().zip(s) {
            accumulate(e, acc, v)?;
        }
        accumulate(e, &mut t_acc, t)?;
    }
    let t = t_acc.ok_or_else(|| Error::Data("no assignments".into()))?;
    let s = s_acc
        .into_iter()
        .map(|v| release(ops, &v.expect("every batch carries all features")))
        .collect::<Result<Vec<_>>>()?;
    Ok((s, release(ops, &t)?))
}

pub(crate) struct FeatureColumn<'a> {
    pub values: &'a [f64],
    pub encrypted: bool,
}

enum Mode<'e> {
    Compact {
        valid: Vec<SlotVector>,
        totals: Vec<SlotVector>,
        split: SlotVector,
        first: SlotVector,
        count: SlotVector,
    },
    Packed {
        ops: PackedOps<'e>,
        batches: Vec<Batch>,
        blocks: Vec<Vec<SlotVector>>,
        pad: Option<(SlotVector, SlotVector)>,
    },
}

/// The computing party's per-round circuit over all features.
pub(crate) struct Pipeline<'e> {
    engine: &'e Engine,
    k: usize,
    sign: SignApproxConfig,
    compact: Vec<Vec<SlotVector>>,
    mode: Mode<'e>,
}

impl<'e> Pipeline<'e> {
    pub fn packed(
        engine: &'e Engine,
        layout: PackedLayout,
        sign: SignApproxConfig,
        columns: &[FeatureColumn],
        pad: Option<f64>,
    ) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.values.len());
        let compact = columns
            .iter()
            .map(|c| compact_column(engine, c.values, c.encrypted))
            .collect::<Result<Vec<_>>>()?;
        let ops = PackedOps::new(engine, layout)?;
        let batches = batch_plan(n, &layout);
        let blocks = batches
            .par_iter()
            .map(|b| {
                compact
                    .iter()
                    .zip(columns)
                    .map(|(c, col)| batch_blocks(&ops, b, c, col.values))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let pad = match (pad, layout.mode()) {
            (Some(p), PaddingMode::Padded) => Some(pad_grids(&ops, p)?),
            _ => None,
        };
        Ok(Pipeline {
            engine,
            k: layout.k(),
            sign,
            compact,
            mode: Mode::Packed {
                ops,
                batches,
                blocks,
                pad,
            },
        })
    }

    /// Two-cluster path on compact encodings.
    pub fn compact(engine: &'e Engine, sign: SignApproxConfig, columns: &[FeatureColumn]) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.values.len());
        let slots = engine.slot_count();
        let compact = columns
            .iter()
            .map(|c| compact_column(engine, c.values, c.encrypted))
            .collect::<Result<Vec<_>>>()?;
        let valid = (0..n.div_ceil(slots))
            .map(|g| engine.encode(&vec![1.0; (n - g * slots).min(slots)]))
            .collect::<Result<Vec<_>>>()?;
        let mut totals = Vec::with_capacity(compact.len());
        for col in &compact {
            let mut sum = col[0].clone();
            for v in &col[1..] {
                engine.add_assign(&mut sum, v)?;
            }
            totals.push(fold_all(engine, &sum));
        }
        Ok(Pipeline {
            engine,
            k: 2,
            sign,
            compact,
            mode: Mode::Compact {
                valid,
                totals,
                split: engine.encode(&[-1.0, 1.0])?,
                first: engine.encode(&[1.0])?,
                count: engine.encode(&[n as f64])?,
            },
        })
    }

    pub fn layout(&self) -> Option<PackedLayout> {
        match &self.mode {
            Mode::Packed { ops, .. } => Some(*ops.layout()),
            Mode::Compact { .. } => None,
        }
    }

    pub fn batch_count(&self) -> usize {
        match &self.mode {
            Mode::Packed { batches, .. } => batches.len(),
            Mode::Compact { valid, .. } => valid.len(),
        }
    }

    /// Released per-dimension sums and counts for the given centroids,
    /// cluster `j` in slot `j`.
    pub fn round(&self, centers: &[Vec<f64>]) -> Result<(Vec<SlotVector>, SlotVector)> {
        match &self.mode {
            Mode::Packed {
                ops,
                batches,
                blocks,
                pad,
            } => self.packed_round(ops, batches, blocks, pad.as_ref(), centers),
            Mode::Compact {
                valid,
                totals,
                split,
                first,
                count,
            } => self.compact_round(valid, totals, split, first, count, centers),
        }
    }

    fn packed_round(
        &self,
        ops: &PackedOps,
        batches: &[Batch],
        blocks: &[Vec<SlotVector>],
        pad: Option<&(SlotVector, SlotVector)>,
        centers: &[Vec<f64>],
    ) -> Result<(Vec<SlotVector>, SlotVector)> {
        let e = self.engine;
        let grids = centroid_grids(ops, centers)?;
        let mut s_acc: Vec<Option<SlotVector>> = vec![None; self.compact.len()];
        let mut t_acc = None;
        for start in (0..batches.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(batches.len());
            let parts = (start..end)
                .into_par_iter()
                .map(|i| {
                    let (row, col) = distance_step(ops, &blocks[i], &grids, pad)?;
                    let a = argmin::argmin_packed_active(
                        ops,
                        &row,
                        &col,
                        &self.sign,
                        batches[i].points.len(),
                    )?;
                    batch_products(e, &a, &blocks[i])
                })
                .collect::<Result<Vec<_>>>()?;
            for (s, t) in parts {
                for (acc, v) in s_acc.iter_mut().zip(s) {
                    accumulate(e, acc, v)?;
                }
                accumulate(e, &mut t_acc, t)?;
            }
        }
        let t = t_acc.ok_or_else(|| Error::Data("no points".into()))?;
        let s = s_acc
            .into_iter()
            .map(|v| release(ops, &v.expect("one sum per feature")))
            .collect::<Result<Vec<_>>>()?;
        Ok((s, release(ops, &t)?))
    }

    fn compact_round(
        &self,
        valid: &[SlotVector],
        totals: &[SlotVector],
        split: &SlotVector,
        first: &SlotVector,
        count: &SlotVector,
        centers: &[Vec<f64>],
    ) -> Result<(Vec<SlotVector>, SlotVector)> {
        let e = self.engine;
        let parts = (0..valid.len())
            .into_par_iter()
            .map(|g| {
                let mut d1 = None;
                let mut d2 = None;
                for (f, col) in self.compact.iter().enumerate() {
                    let x = &col[g];
                    accumulate(e, &mut d1, e.square(&e.add_scalar(x, -centers[0][f]))?)?;
                    accumulate(e, &mut d2, e.square(&e.add_scalar(x, -centers[1][f]))?)?;
                }
                let (d1, d2) = d1.zip(d2).ok_or_else(|| Error::Data("no features".into()))?;
                let a = argmin::argmin_two(e, &d1, &d2, &self.sign)?;
                let s = self
                    .compact
                    .iter()
                    .map(|col| e.mul(&a, &col[g]))
                    .collect::<Result<Vec<_>>>()?;
                Ok((s, e.mul(&a, &valid[g])?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s_acc: Vec<Option<SlotVector>> = vec![None; self.compact.len()];
        let mut t_acc = None;
        for (s, t) in parts {
            for (acc, v) in s_acc.iter_mut().zip(s) {
                accumulate(e, acc, v)?;
            }
            accumulate(e, &mut t_acc, t)?;
        }
        // Second-cluster totals sit in every slot after the fold; the first
        // cluster is the complement of the overall totals.
        let t2 = fold_all(e, &t_acc.expect("at least one group"));
        let t = e.add(&e.mul(&t2, split)?, count)?;
        let s = s_acc
            .into_iter()
            .zip(totals)
            .map(|(v, total)| {
                let s2 = fold_all(e, &v.expect("one sum per feature"));
                e.add(&e.mul(&s2, split)?, &e.mul(total, first)?)
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(self.k, 2);
        Ok((s, t))
    }
}

/// Every slot receives the sum over all slots.
pub fn fold_all(e: &Engine, v: &SlotVector) -> SlotVector {
    let mut acc = v.clone();
    let mut step = 1usize;
    while step < e.slot_count() {
        let r = e.rotate(&acc, step as i64);
        e.add_assign(&mut acc, &r).expect("same engine");
        step <<= 1;
    }
    acc
}
