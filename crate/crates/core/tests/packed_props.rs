use proptest::prelude::*;
use vkmeans::engine::{Engine, EngineConfig};
use vkmeans::packed::{replicate_segment, Axis, PackedLayout, PackedOps, PaddingMode, TransposeDir};

fn engine(slots: usize) -> Engine {
    Engine::new(EngineConfig::new(slots, 4).unwrap()).unwrap()
}

/// Block `b` of `slots` as a `M x M` matrix, by direct indexing.
fn block(layout: &PackedLayout, slots: &[f64], b: usize) -> Vec<Vec<f64>> {
    let m = layout.block_dim();
    (0..m).map(|r| (0..m).map(|c| slots[layout.slot(b, r, c)]).collect()).collect()
}

fn layout_case() -> impl Strategy<Value = (usize, PaddingMode, usize)> {
    (2usize..9, prop_oneof![Just(PaddingMode::Unpadded), Just(PaddingMode::Padded)], 0usize..3)
        .prop_map(|(k, mode, extra)| {
            let m = match mode {
                PaddingMode::Padded => k.next_power_of_two(),
                PaddingMode::Unpadded => k,
            };
            let slots = (m * m * (2 + extra)).next_power_of_two();
            (k, mode, slots)
        })
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5i32..5, len).prop_map(|v| v.into_iter().map(f64::from).collect())
}

proptest! {
    #[test]
    fn sum_matches_loops(((k, mode, slots), seed) in (layout_case(), any::<u64>())) {
        let layout = PackedLayout::new(k, slots, mode).unwrap();
        let e = engine(slots);
        let ops = PackedOps::new(&e, layout).unwrap();
        let raw: Vec<f64> = (0..slots).map(|i| (((i as u64 * 2654435761) ^ seed) % 7) as f64).collect();
        let input = layout.grid(|b, r, c| raw[layout.slot(b, r, c)]);
        let x = e.encrypt(&input).unwrap();
        let m = layout.block_dim();
        for (axis, by_row) in [(Axis::Row, true), (Axis::Column, false)] {
            let out = e.decrypt(&ops.sum(&x, axis).unwrap());
            for b in 0..layout.blocks_per_ct() {
                let src = block(&layout, &input, b);
                let got = block(&layout, &out, b);
                for i in 0..m {
                    for j in 0..m {
                        let want = if by_row {
                            if i == 0 { (0..m).map(|r| src[r][j]).sum() } else { 0.0 }
                        } else if j == 0 {
                            (0..m).map(|c| src[i][c]).sum()
                        } else {
                            0.0
                        };
                        prop_assert_eq!(got[i][j], want);
                    }
                }
            }
        }
    }

    #[test]
    fn repl_then_sum_scales_the_first_row(((k, _, _), row) in (layout_case(), values(8))) {
        let layout = PackedLayout::new(k, 4 * k.next_power_of_two().pow(2), PaddingMode::Padded).unwrap();
        let e = engine(layout.slot_count());
        let ops = PackedOps::new(&e, layout).unwrap();
        let m = layout.block_dim();
        let input = layout.grid(|_, r, c| if r == 0 { row[c % row.len()] } else { 0.0 });
        let out = e.decrypt(&ops.sum(&ops.repl(&e.encrypt(&input).unwrap(), Axis::Row).unwrap(), Axis::Row).unwrap());
        for b in 0..layout.blocks_per_ct() {
            let got = block(&layout, &out, b);
            for c in 0..m {
                prop_assert_eq!(got[0][c], m as f64 * row[c % row.len()]);
            }
        }
    }

    #[test]
    fn transpose_round_trips(k in 2usize..9, row in values(8)) {
        let layout = PackedLayout::new(k, 4 * k.next_power_of_two().pow(2), PaddingMode::Padded).unwrap();
        let e = engine(layout.slot_count());
        let ops = PackedOps::new(&e, layout).unwrap();
        let input = layout.grid(|b, r, c| if r == 0 { row[(b + c) % row.len()] } else { 0.0 });
        let col = ops.transpose_vec(&e.encrypt(&input).unwrap(), TransposeDir::RowToColumn).unwrap();
        let col_slots = e.decrypt(&col);
        for b in 0..layout.blocks_per_ct() {
            let got = block(&layout, &col_slots, b);
            let src = block(&layout, &input, b);
            for i in 0..layout.block_dim() {
                prop_assert_eq!(got[i][0], src[0][i]);
            }
        }
        let back = ops.transpose_vec(&col, TransposeDir::ColumnToRow).unwrap();
        prop_assert_eq!(e.decrypt(&back), input);
    }

    #[test]
    fn replicate_segment_matches_brute_force(len in 2usize..40, start_frac in 0.0f64..1.0, value in 1i32..9) {
        let start = ((len as f64 * start_frac) as usize).min(len - 1);
        let slots = (2 * len).next_power_of_two();
        let e = engine(slots);
        let mut input = vec![0.0; slots];
        input[start] = f64::from(value);
        let out = e.decrypt(&replicate_segment(&e, &e.encrypt(&input).unwrap(), start, len, 1));
        for (i, v) in out.iter().take(len).enumerate() {
            prop_assert_eq!(*v, f64::from(value), "slot {} of len {} start {}", i, len, start);
        }
    }

    #[test]
    fn batch_extract_equals_independent_extractions(k in 2usize..7, blocks in 1usize..5, r in 0usize..7, c in 0usize..7, seed in any::<u64>()) {
        let (r, c) = (r % k, c % k);
        let slots = (k * k * blocks).next_power_of_two();
        let layout = PackedLayout::with_blocks(k, slots, PaddingMode::Unpadded, blocks).unwrap();
        let e = engine(slots);
        let ops = PackedOps::new(&e, layout).unwrap();
        let raw: Vec<f64> = (0..slots).map(|i| ((i as u64).wrapping_mul(seed | 1) % 11) as f64).collect();
        let x = e.encrypt(&raw).unwrap();
        let positions: Vec<usize> = (0..blocks).map(|b| layout.slot(b, r, c)).collect();
        let batch = e.decrypt(&ops.batch_extract_replicate(&x, &positions).unwrap());
        for (b, p) in positions.iter().enumerate() {
            let single = e.decrypt(&ops.batch_extract_replicate(&x, &positions[..=b]).unwrap());
            let want = block(&layout, &single, b);
            prop_assert_eq!(block(&layout, &batch, b), want.clone());
            prop_assert!(want.iter().flatten().all(|v| *v == raw[*p]));
        }
    }
}

#[test]
fn fourteen_clusters_use_196_slots_per_block() {
    let layout = PackedLayout::new(14, 1 << 14, PaddingMode::Unpadded).unwrap();
    assert_eq!(layout.block_dim() * layout.block_dim(), 196);
    assert_eq!(layout.blocks_per_ct(), (1 << 14) / 196);
}

#[test]
fn transpose_needs_padding() {
    let layout = PackedLayout::new(3, 64, PaddingMode::Unpadded).unwrap();
    let e = engine(64);
    let ops = PackedOps::new(&e, layout).unwrap();
    let x = e.encrypt(&[1.0]).unwrap();
    assert!(ops.transpose_vec(&x, TransposeDir::RowToColumn).is_err());
}
