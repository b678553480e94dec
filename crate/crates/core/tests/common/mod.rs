#![allow(dead_code)]

use std::collections::BTreeMap;

use conductor_core::color::Rgba;
use conductor_core::grouping::{Conjunct, Interval, LinearPredicate, RangePath};
use conductor_core::voldata::{
    AttributeDef, AttributeKind, AttributeSchema, AttributeValue, Dataset, GridDims, InstanceTable,
    RawVolume, SegmentationVolume,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Table with scalar attributes `a0..a{k}` and the given rows.
pub fn scalar_table(attrs: usize, rows: BTreeMap<u32, Vec<f64>>) -> InstanceTable {
    let schema = AttributeSchema::new(
        (0..attrs)
            .map(|i| AttributeDef {
                name: format!("a{i}"),
                kind: AttributeKind::Scalar,
            })
            .collect(),
    )
    .unwrap();
    let rows = rows
        .into_iter()
        .map(|(id, v)| (id, v.into_iter().map(AttributeValue::Scalar).collect()))
        .collect();
    InstanceTable::new(schema, rows).unwrap()
}

/// Predicate with fraction 1 and a gray color.
pub fn predicate(group: usize, conjuncts: Vec<(&str, f64, f64)>) -> LinearPredicate {
    LinearPredicate {
        conjuncts: conjuncts
            .into_iter()
            .map(|(a, lo, hi)| Conjunct {
                attribute: a.into(),
                interval: Interval::new(lo, hi),
            })
            .collect(),
        group,
        color: Rgba::new(0.5, 0.5, 0.5, 1.0),
        visible_fraction: 1.0,
        path: RangePath(vec![(0, group - 1)]),
        key: format!("g{group}"),
    }
}

/// Random 16-cube segmentation whose ids partly miss the table, with a random
/// visibility state.
pub struct FuzzScene {
    pub seg: SegmentationVolume,
    pub table: InstanceTable,
}

pub fn fuzz_scene(rng: &mut ChaCha8Rng, n: usize) -> FuzzScene {
    let dims = GridDims::cube(n).unwrap();
    let instances: u32 = rng.gen_range(1..=40);
    let max_id = instances + rng.gen_range(0..5);
    let ids = (0..dims.len())
        .map(|_| {
            if rng.gen_bool(0.3) {
                0
            } else {
                rng.gen_range(0..=max_id)
            }
        })
        .collect();
    let seg = SegmentationVolume::new(dims, ids).unwrap();
    let rows = (1..=instances)
        .map(|id| (id, vec![rng.gen_range(0.0..1.0)]))
        .collect();
    let mut table = scalar_table(1, rows);
    for slot in 0..table.len() {
        table.set_visible(slot, rng.gen_bool(0.7));
    }
    FuzzScene { seg, table }
}

/// Dataset from a segmentation: raw value 1 inside instances, 0 elsewhere.
pub fn dataset_from_seg(seg: SegmentationVolume, attrs: BTreeMap<u32, Vec<f64>>) -> Dataset {
    let raw = RawVolume::new(
        seg.dims,
        seg.ids()
            .iter()
            .map(|&i| if i > 0 { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap();
    Dataset::new(raw, seg, scalar_table(1, attrs)).unwrap()
}
