//! Group membership predicates.
//!
//! Users author a hierarchy of attribute-range predicates. Linearizing it
//! yields one conjunctive predicate per root-to-leaf path; an instance joins
//! the group of the first predicate it satisfies, or the background group 0.

mod cascade;
mod hierarchy;

use serde::{Deserialize, Serialize};

use crate::color::{hsv_to_rgb, Rgba};
use crate::error::{Error, Result};
use crate::voldata::{AttributeSchema, InstanceTable, ScalarAccessor};

pub use cascade::{cascade_down, cascade_up, CascadeOutcome, RangeSummary};
pub use hierarchy::{Hierarchy, HierarchyNode, Interval, RangeEntry, RangePath};

/// Fractional part of the golden ratio.
pub const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conjunct {
    pub attribute: String,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredicate {
    pub conjuncts: Vec<Conjunct>,
    /// 1-based group index.
    pub group: usize,
    pub color: Rgba,
    pub visible_fraction: f64,
    pub path: RangePath,
    pub key: String,
}

/// Flattens the hierarchy depth-first, ranges in author order. Leaves without
/// an explicit color get [`default_color`] of their group index.
pub fn linearize(hierarchy: &Hierarchy, schema: &AttributeSchema) -> Result<Vec<LinearPredicate>> {
    hierarchy.validate(schema)?;
    let mut out = Vec::new();
    walk(
        &hierarchy.roots,
        &RangePath::default(),
        &mut Vec::new(),
        &mut Vec::new(),
        &mut out,
    );
    Ok(out)
}

fn walk(
    nodes: &[HierarchyNode],
    prefix: &RangePath,
    conjuncts: &mut Vec<Conjunct>,
    keys: &mut Vec<String>,
    out: &mut Vec<LinearPredicate>,
) {
    for (n, node) in nodes.iter().enumerate() {
        for (r, entry) in node.ranges.iter().enumerate() {
            let path = prefix.child(n, r);
            conjuncts.push(Conjunct {
                attribute: node.attribute.clone(),
                interval: entry.interval,
            });
            keys.push(format!("{}{}", node.attribute, entry.interval));
            if entry.is_leaf() {
                let group = out.len() + 1;
                out.push(LinearPredicate {
                    conjuncts: conjuncts.clone(),
                    group,
                    color: entry.color.unwrap_or_else(|| default_color(group)),
                    visible_fraction: entry.fraction,
                    path: path.clone(),
                    key: keys.join("/"),
                });
            } else {
                walk(&entry.children, &path, conjuncts, keys, out);
            }
            conjuncts.pop();
            keys.pop();
        }
    }
}

/// Group index per instance slot; 0 is the background group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    groups: Vec<u32>,
    group_count: usize,
}

impl GroupAssignment {
    /// Every instance in the background group.
    pub fn background(instances: usize, group_count: usize) -> Self {
        GroupAssignment {
            groups: vec![0; instances],
            group_count,
        }
    }

    pub fn from_groups(groups: Vec<u32>, group_count: usize) -> Self {
        GroupAssignment {
            groups,
            group_count,
        }
    }

    /// Group per instance slot (slots follow ascending instance id).
    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn group_of_slot(&self, slot: usize) -> u32 {
        self.groups[slot]
    }

    pub fn group_of(&self, table: &InstanceTable, id: u32) -> Option<u32> {
        table.slot(id).map(|s| self.groups[s])
    }

    /// Number of non-background groups.
    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Member count per group index, background at index 0.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.group_count + 1];
        for &g in &self.groups {
            sizes[g as usize] += 1;
        }
        sizes
    }

    /// Slots belonging to group `k`, ascending.
    pub fn members(&self, k: u32) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter_map(|(s, &g)| (g == k).then_some(s))
            .collect()
    }
}

/// First-match group assignment.
pub fn assign_groups(preds: &[LinearPredicate], table: &InstanceTable) -> Result<GroupAssignment> {
    let compiled: Vec<Vec<(ScalarAccessor, Interval)>> = preds
        .iter()
        .map(|p| {
            p.conjuncts
                .iter()
                .map(|c| Ok((table.schema().scalar_accessor(&c.attribute)?, c.interval)))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let groups = (0..table.len())
        .map(|slot| {
            let row = table.row(slot);
            compiled
                .iter()
                .position(|conj| conj.iter().all(|(acc, iv)| iv.contains(acc.get(row))))
                .map_or(0, |i| i as u32 + 1)
        })
        .collect();
    Ok(GroupAssignment {
        groups,
        group_count: preds.len(),
    })
}

/// Hue of group `k` on the golden-ratio sequence.
pub fn default_hue(k: usize) -> f64 {
    (k as f64 * GOLDEN_RATIO_CONJUGATE).fract()
}

/// Default group color: golden-ratio hue, saturation 0.8, value 0.9, opaque.
pub fn default_color(k: usize) -> Rgba {
    let [r, g, b] = hsv_to_rgb(default_hue(k), 0.8, 0.9);
    Rgba([r, g, b, 1.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub attribute: String,
    /// Value range covered by the bins; `None` for an empty group.
    pub range: Option<(f64, f64)>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram of a scalar attribute over the members of group
/// `k`. A group whose members share one value puts all mass in the first
/// bin.
pub fn group_histogram(
    table: &InstanceTable,
    assignment: &GroupAssignment,
    k: u32,
    attribute: &str,
    bins: usize,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    let accessor = table.schema().scalar_accessor(attribute)?;
    let values: Vec<f64> = assignment
        .members(k)
        .into_iter()
        .map(|s| table.scalar(s, &accessor))
        .collect();
    if values.is_empty() {
        return Ok(Histogram {
            attribute: attribute.into(),
            range: None,
            counts: Vec::new(),
        });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = if hi > lo {
            (((v - lo) / (hi - lo)) * bins as f64) as usize
        } else {
            0
        };
        counts[b.min(bins - 1)] += 1;
    }
    Ok(Histogram {
        attribute: attribute.into(),
        range: Some((lo, hi)),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voldata::{AttributeDef, AttributeKind, AttributeValue};
    use std::collections::BTreeMap;

    pub(crate) fn schema() -> AttributeSchema {
        AttributeSchema::new(vec![
            AttributeDef {
                name: "volume".into(),
                kind: AttributeKind::Scalar,
            },
            AttributeDef {
                name: "orientation".into(),
                kind: AttributeKind::Scalar,
            },
        ])
        .unwrap()
    }

    fn table(values: &[(f64, f64)]) -> InstanceTable {
        let rows: BTreeMap<u32, Vec<AttributeValue>> = values
            .iter()
            .enumerate()
            .map(|(i, &(v, o))| {
                (
                    i as u32 + 1,
                    vec![AttributeValue::Scalar(v), AttributeValue::Scalar(o)],
                )
            })
            .collect();
        InstanceTable::new(schema(), rows).unwrap()
    }

    fn two_level() -> Hierarchy {
        Hierarchy::new(vec![HierarchyNode::new(
            "volume",
            &[(0.0, 10.0), (10.0, f64::INFINITY)],
        )
        .with_children(vec![HierarchyNode::new(
            "orientation",
            &[(0.0, 45.0), (45.0, 90.0)],
        )])])
    }

    #[test]
    fn linearize_two_level_order() {
        let preds = linearize(&two_level(), &schema()).unwrap();
        assert_eq!(preds.len(), 4);
        let bounds: Vec<(f64, f64)> = preds
            .iter()
            .map(|p| (p.conjuncts[0].interval.lo, p.conjuncts[1].interval.lo))
            .collect();
        assert_eq!(
            bounds,
            vec![(0.0, 0.0), (0.0, 45.0), (10.0, 0.0), (10.0, 45.0)]
        );
        assert_eq!(
            preds.iter().map(|p| p.group).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        assert_eq!(preds[1].key, "volume[0,10)/orientation[45,90)");
    }

    #[test]
    fn linearize_single_and_empty() {
        let h = Hierarchy::new(vec![HierarchyNode::new("volume", &[(0.0, 1.0)])]);
        let preds = linearize(&h, &schema()).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].conjuncts.len(), 1);
        assert!(linearize(&Hierarchy::default(), &schema())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn three_by_three_gives_nine() {
        let h = Hierarchy::new(vec![HierarchyNode::new(
            "volume",
            &[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)],
        )
        .with_children(vec![HierarchyNode::new(
            "orientation",
            &[(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)],
        )])]);
        assert_eq!(linearize(&h, &schema()).unwrap().len(), 9);
    }

    #[test]
    fn linearize_rejects_bad_hierarchies() {
        let unknown = Hierarchy::new(vec![HierarchyNode::new("length", &[(0.0, 1.0)])]);
        assert!(matches!(
            linearize(&unknown, &schema()),
            Err(Error::UnknownAttribute(_))
        ));
        let inverted = Hierarchy::new(vec![HierarchyNode::new("volume", &[(2.0, 1.0)])]);
        assert!(linearize(&inverted, &schema()).is_err());
        let overlapping = Hierarchy::new(vec![HierarchyNode::new(
            "volume",
            &[(0.0, 2.0), (1.0, 3.0)],
        )]);
        assert!(linearize(&overlapping, &schema()).is_err());
        let mut ragged = two_level();
        ragged.roots[0].ranges[1].children.clear();
        assert!(linearize(&ragged, &schema()).is_err());
    }

    #[test]
    fn first_match_wins() {
        let h = Hierarchy::new(vec![
            HierarchyNode::new("volume", &[(100.0, 200.0)]),
            HierarchyNode::new("volume", &[(0.0, 10.0)]),
            HierarchyNode::new("orientation", &[(0.0, 90.0)]),
        ]);
        let preds = linearize(&h, &schema()).unwrap();
        let t = table(&[(5.0, 30.0), (50.0, 120.0), (50.0, 10.0)]);
        let a = assign_groups(&preds, &t).unwrap();
        // instance 1 satisfies predicates 2 and 3
        assert_eq!(a.groups(), &[2, 0, 3]);
        assert_eq!(a.sizes(), vec![1, 0, 1, 1]);
    }

    #[test]
    fn golden_hues() {
        assert!((default_hue(1) - 0.618_034).abs() < 1e-6);
        assert!((default_hue(2) - 0.236_068).abs() < 1e-6);
        let c = default_color(1);
        assert_eq!(c.a(), 1.0);
        assert!(c.is_valid());
    }

    #[test]
    fn histogram_basics() {
        let t = table(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (9.0, 0.0)]);
        let a = GroupAssignment::from_groups(vec![1, 1, 1, 1, 0], 1);
        let h = group_histogram(&t, &a, 1, "volume", 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.range, Some((0.0, 3.0)));
        let empty = group_histogram(&t, &a, 2, "volume", 4).unwrap();
        assert!(empty.counts.is_empty());
        let one = GroupAssignment::from_groups(vec![1, 0, 0, 0, 0], 1);
        assert_eq!(
            group_histogram(&t, &one, 1, "volume", 3).unwrap().counts,
            vec![1, 0, 0]
        );
        assert!(group_histogram(&t, &a, 1, "volume", 0).is_err());
    }

    #[test]
    fn hierarchy_json_roundtrip_with_open_bounds() {
        let h = two_level();
        let text = serde_json::to_string(&h).unwrap();
        assert!(text.contains("\"hi\":null"));
        let back: Hierarchy = serde_json::from_str(&text).unwrap();
        assert_eq!(back, h);
        let single: Hierarchy = serde_json::from_str(
            r#"{"attribute":"volume","ranges":[{"lo":0,"hi":5,"fraction":0.5,"locked":true}]}"#,
        )
        .unwrap();
        assert_eq!(single.roots.len(), 1);
        assert!(single.roots[0].ranges[0].locked);
        assert_eq!(single.roots[0].ranges[0].fraction, 0.5);
    }
}
