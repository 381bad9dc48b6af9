//! Packed block matrices over slot vectors.
//!
//! A ciphertext holds `blocks_per_ct` square blocks of side `block_dim`,
//! stacked side by side: block `b`, row `r`, column `c` lives in slot
//! `r * W + b * M + c` with `M = block_dim` and `W = blocks_per_ct * M`.
//! Shifting by one slot moves along a row, shifting by `W` moves down a row,
//! so every row and column operation below acts on all blocks at once.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, SlotVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Row,
    Column,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PaddingMode {
    Padded,
    #[default]
    Unpadded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransposeDir {
    RowToColumn,
    ColumnToRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedLayout {
    k: usize,
    block_dim: usize,
    blocks_per_ct: usize,
    slot_count: usize,
    mode: PaddingMode,
}

impl PackedLayout {
    pub fn new(k: usize, slot_count: usize, mode: PaddingMode) -> Result<Self> {
        let block_dim = Self::block_dim_for(k, mode)?;
        let blocks = slot_count / (block_dim * block_dim);
        Self::with_blocks(k, slot_count, mode, blocks)
    }

    /// Layout using only the first `blocks` blocks of the ciphertext.
    pub fn with_blocks(
        k: usize,
        slot_count: usize,
        mode: PaddingMode,
        blocks: usize,
    ) -> Result<Self> {
        let block_dim = Self::block_dim_for(k, mode)?;
        let stride = block_dim * block_dim;
        if blocks == 0 || blocks * stride > slot_count {
            return Err(Error::Layout(format!(
                "{blocks} blocks of {stride} slots do not fit in {slot_count} slots"
            )));
        }
        Ok(PackedLayout {
            k,
            block_dim,
            blocks_per_ct: blocks,
            slot_count,
            mode,
        })
    }

    fn block_dim_for(k: usize, mode: PaddingMode) -> Result<usize> {
        if k < 2 {
            return Err(Error::Layout(format!("k = {k} must be at least 2")));
        }
        Ok(match mode {
            PaddingMode::Padded => k.next_power_of_two(),
            PaddingMode::Unpadded => k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn blocks_per_ct(&self) -> usize {
        self.blocks_per_ct
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn mode(&self) -> PaddingMode {
        self.mode
    }

    /// Slots per block.
    pub fn stride(&self) -> usize {
        self.block_dim * self.block_dim
    }

    /// Distance in slots between consecutive rows of a block.
    pub fn row_width(&self) -> usize {
        self.blocks_per_ct * self.block_dim
    }

    pub fn slots_used(&self) -> usize {
        self.blocks_per_ct * self.stride()
    }

    pub fn slot(&self, block: usize, row: usize, col: usize) -> usize {
        row * self.row_width() + block * self.block_dim + col
    }

    /// Inverse of [`PackedLayout::slot`]: `(block, row, col)`.
    pub fn locate(&self, slot: usize) -> Option<(usize, usize, usize)> {
        if slot >= self.slots_used() {
            return None;
        }
        let w = self.row_width();
        let rem = slot % w;
        Some((rem / self.block_dim, slot / w, rem % self.block_dim))
    }

    /// Slot values from a per-position function; unused slots are zero.
    pub fn grid(&self, f: impl Fn(usize, usize, usize) -> f64) -> Vec<f64> {
        let m = self.block_dim;
        let mut out = vec![0.0; self.slot_count];
        for r in 0..m {
            for b in 0..self.blocks_per_ct {
                for c in 0..m {
                    out[self.slot(b, r, c)] = f(b, r, c);
                }
            }
        }
        out
    }

    /// Splits slot values into row-major `block_dim x block_dim` blocks.
    pub fn blocks(&self, slots: &[f64]) -> Vec<Vec<f64>> {
        let m = self.block_dim;
        (0..self.blocks_per_ct)
            .map(|b| {
                let mut block = Vec::with_capacity(m * m);
                for r in 0..m {
                    for c in 0..m {
                        block.push(slots[self.slot(b, r, c)]);
                    }
                }
                block
            })
            .collect()
    }

    /// Row encoding: entry `(r, c)` of block `b` is `values[b][c]`. Positions
    /// at or beyond `k`, and blocks without values, take `pad` and 0.
    pub fn row_encoding(&self, values: &[Vec<f64>], pad: f64) -> Vec<f64> {
        self.grid(|b, _, c| match values.get(b) {
            Some(v) if c < self.k => v[c],
            Some(_) => pad,
            None => 0.0,
        })
    }

    /// Column encoding: entry `(r, c)` of block `b` is `values[b][r]`.
    pub fn column_encoding(&self, values: &[Vec<f64>], pad: f64) -> Vec<f64> {
        self.grid(|b, r, _| match values.get(b) {
            Some(v) if r < self.k => v[r],
            Some(_) => pad,
            None => 0.0,
        })
    }

    fn axis_stride(&self, axis: Axis) -> usize {
        match axis {
            Axis::Row => self.row_width(),
            Axis::Column => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum MaskKey {
    Row(usize),
    Column(usize),
    Slots(Vec<usize>),
    Named(&'static str, u64, u64),
}

/// Matrix operations bound to one engine and layout. Plaintext masks are
/// built on first use and reused afterwards.
pub struct PackedOps<'e> {
    engine: &'e Engine,
    layout: PackedLayout,
    masks: Mutex<HashMap<MaskKey, Arc<SlotVector>>>,
}

impl<'e> PackedOps<'e> {
    pub fn new(engine: &'e Engine, layout: PackedLayout) -> Result<Self> {
        if engine.slot_count() != layout.slot_count {
            return Err(Error::Layout(format!(
                "layout built for {} slots, engine has {}",
                layout.slot_count,
                engine.slot_count()
            )));
        }
        Ok(PackedOps {
            engine,
            layout,
            masks: Mutex::new(HashMap::new()),
        })
    }

    pub fn engine(&self) -> &'e Engine {
        self.engine
    }

    pub fn layout(&self) -> &PackedLayout {
        &self.layout
    }

    /// Returns the cached plaintext for `key`, building it on first use.
    pub fn cached_mask(
        &self,
        key: MaskKey,
        build: impl FnOnce() -> Vec<f64>,
    ) -> Result<Arc<SlotVector>> {
        let mut masks = self.masks.lock().expect("mask cache poisoned");
        if let Some(m) = masks.get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(self.engine.encode(&build())?);
        masks.insert(key, m.clone());
        Ok(m)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.layout.block_dim {
            return Err(Error::IndexOutOfRange {
                index,
                block_dim: self.layout.block_dim,
            });
        }
        Ok(())
    }

    fn axis_mask(&self, axis: Axis, index: usize) -> Result<Arc<SlotVector>> {
        self.check_index(index)?;
        let layout = self.layout;
        let key = match axis {
            Axis::Row => MaskKey::Row(index),
            Axis::Column => MaskKey::Column(index),
        };
        self.cached_mask(key, || {
            layout.grid(|_, r, c| {
                let hit = match axis {
                    Axis::Row => r == index,
                    Axis::Column => c == index,
                };
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
        })
    }

    /// Keeps row (or column) `index` of every block; one plaintext product.
    pub fn mask(&self, v: &SlotVector, axis: Axis, index: usize) -> Result<SlotVector> {
        let m = self.axis_mask(axis, index)?;
        self.engine.mul(v, &m)
    }

    /// After the call, every slot `s` holds `sum_{t < len} v[s + t * stride]`
    /// (indices cyclic). Doubles up to the largest power of two not above
    /// `len`, then adds the cached partial sums for the remaining bits.
    pub fn fold_segments(&self, v: &SlotVector, len: usize, stride: usize) -> SlotVector {
        let e = self.engine;
        if len <= 1 {
            return v.clone();
        }
        let m = usize::BITS - 1 - len.leading_zeros();
        let mut partial = vec![v.clone()];
        for l in 0..m as usize {
            let p = &partial[l];
            let shifted = e.rotate(p, (stride << l) as i64);
            partial.push(add_exact(e, p, &shifted));
        }
        let mut acc = partial[m as usize].clone();
        let mut offset = 1usize << m;
        let rest = len - offset;
        for h in (0..m as usize).rev() {
            if rest >> h & 1 == 1 {
                let shifted = e.rotate(&partial[h], (stride * offset) as i64);
                acc = add_exact(e, &acc, &shifted);
                offset += 1 << h;
            }
        }
        acc
    }

    /// Sums all rows (resp. columns) of each block into the first one and
    /// masks the rest away.
    pub fn sum(&self, v: &SlotVector, axis: Axis) -> Result<SlotVector> {
        let folded =
            self.fold_segments(v, self.layout.block_dim, self.layout.axis_stride(axis));
        self.mask(&folded, axis, 0)
    }

    /// Copies the first row (resp. column) of each block into all rows
    /// (resp. columns). Rotations only.
    pub fn repl(&self, v: &SlotVector, axis: Axis) -> Result<SlotVector> {
        self.repl_no_padding(v, 0, axis)
    }

    /// Replicates the single non-zero entry at `start_index` of each row
    /// segment (`Axis::Column`) or column segment (`Axis::Row`) across the
    /// whole segment, without relying on a power-of-two block dimension.
    pub fn repl_no_padding(
        &self,
        v: &SlotVector,
        start_index: usize,
        axis: Axis,
    ) -> Result<SlotVector> {
        self.check_index(start_index)?;
        if cfg!(debug_assertions) {
            self.check_single_source(v, start_index, axis)?;
        }
        Ok(replicate_segment(
            self.engine,
            v,
            start_index,
            self.layout.block_dim,
            self.layout.axis_stride(axis),
        ))
    }

    fn check_single_source(&self, v: &SlotVector, start: usize, axis: Axis) -> Result<()> {
        for (slot, x) in v.slots().iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            let ok = match self.layout.locate(slot) {
                Some((_, r, c)) => match axis {
                    Axis::Column => c == start,
                    Axis::Row => r == start,
                },
                None => false,
            };
            if !ok {
                return Err(Error::Layout(format!(
                    "replication source must be confined to index {start}; slot {slot} is non-zero"
                )));
            }
        }
        Ok(())
    }

    /// Moves the first row of each block into its first column, or back.
    /// Requires the padded layout.
    pub fn transpose_vec(&self, v: &SlotVector, dir: TransposeDir) -> Result<SlotVector> {
        if self.layout.mode != PaddingMode::Padded {
            return Err(Error::Layout(
                "transpose_vec needs the padded layout".into(),
            ));
        }
        let e = self.engine;
        let step = (self.layout.row_width() - 1) as i64;
        let sign = match dir {
            TransposeDir::RowToColumn => -1,
            TransposeDir::ColumnToRow => 1,
        };
        let mut acc = v.clone();
        let mut j = 1i64;
        while (j as usize) < self.layout.block_dim {
            let shifted = e.rotate(&acc, sign * step * j);
            acc = add_exact(e, &acc, &shifted);
            j <<= 1;
        }
        match dir {
            TransposeDir::RowToColumn => self.mask(&acc, Axis::Column, 0),
            TransposeDir::ColumnToRow => self.mask(&acc, Axis::Row, 0),
        }
    }

    /// Fills every block with the value found at its entry in `positions`
    /// (one source slot per block, all at the same in-block position). One
    /// plaintext product isolates the sources, then replication along the
    /// row and the column completes each block.
    pub fn batch_extract_replicate(
        &self,
        x: &SlotVector,
        positions: &[usize],
    ) -> Result<SlotVector> {
        let layout = self.layout;
        if positions.is_empty() || positions.len() > layout.blocks_per_ct {
            return Err(Error::Layout(format!(
                "{} positions for {} blocks",
                positions.len(),
                layout.blocks_per_ct
            )));
        }
        let mut local = None;
        for (b, &p) in positions.iter().enumerate() {
            let (block, r, c) = layout.locate(p).ok_or_else(|| {
                Error::Layout(format!("position {p} lies outside the packed region"))
            })?;
            if block != b || local.is_some_and(|rc| rc != (r, c)) {
                return Err(Error::Layout(format!(
                    "position {p} does not match block {b} at a shared in-block offset"
                )));
            }
            local = Some((r, c));
        }
        let (row, col) = local.expect("positions is non-empty");
        let mask = self.cached_mask(MaskKey::Slots(positions.to_vec()), || {
            let mut m = vec![0.0; layout.slot_count];
            for &p in positions {
                m[p] = 1.0;
            }
            m
        })?;
        let isolated = self.engine.mul(x, &mask)?;
        let across = self.repl_no_padding(&isolated, col, Axis::Column)?;
        self.repl_no_padding(&across, row, Axis::Row)
    }

    /// Sums entry `(r, c)` over all blocks into block 0. Other slots keep
    /// partial sums; callers mask what they release.
    pub fn sum_blocks(&self, v: &SlotVector) -> SlotVector {
        self.fold_segments(v, self.layout.blocks_per_ct, self.layout.block_dim)
    }
}

fn add_exact(e: &Engine, a: &SlotVector, b: &SlotVector) -> SlotVector {
    e.add(a, b).expect("operands come from the same engine")
}

/// Replication without padding on one segment of length `len` whose
/// consecutive entries are `stride` slots apart. The source sits at
/// `start`. Up to `2^floor(log2 len)` copies come from doubling toward the
/// free side; the remainder reuses the cached partial replications.
pub fn replicate_segment(
    e: &Engine,
    v: &SlotVector,
    start: usize,
    len: usize,
    stride: usize,
) -> SlotVector {
    if len <= 1 {
        return v.clone();
    }
    let shift = |x: &SlotVector, right: usize| e.rotate(x, -((right * stride) as i64));
    let shift_left = |x: &SlotVector, left: usize| e.rotate(x, (left * stride) as i64);
    let m = (usize::BITS - 1 - len.leading_zeros()) as usize;
    let mut size_left = len - (1 << m);
    let first_half = 2 * start < len;
    let adj_pos = if first_half { start } else { start - size_left };

    let mut r = v.clone();
    let mut partial = vec![r.clone()];
    for l in 0..m {
        let moved = if adj_pos >> l & 1 == 1 {
            shift_left(&r, 1 << l)
        } else {
            shift(&r, 1 << l)
        };
        r = add_exact(e, &r, &moved);
        partial.push(r.clone());
    }
    while size_left > 0 {
        let hp = (usize::BITS - 1 - size_left.leading_zeros()) as usize;
        let low = adj_pos & ((1 << hp) - 1);
        let moved = if first_half {
            shift(&partial[hp], len - size_left + low - start)
        } else {
            shift_left(&partial[hp], start - low - size_left + (1 << hp))
        };
        r = add_exact(e, &r, &moved);
        size_left -= 1 << hp;
    }
    r
}
