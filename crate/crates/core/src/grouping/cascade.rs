//! Propagation of visible fractions through the hierarchy.
//!
//! Leaf fractions are authoritative. An internal range displays the average
//! of its leaves weighted by their member counts.

use serde::{Deserialize, Serialize};

use super::hierarchy::{Hierarchy, HierarchyNode, RangePath};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CascadeOutcome {
    Applied {
        /// Value written to every unlocked leaf beneath the target.
        leaf_value: f64,
        /// Fraction displayed at the target after recomputation.
        achieved: f64,
        clamped: bool,
    },
    /// Every leaf beneath the target is locked; nothing changed.
    AllLocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSummary {
    pub path: RangePath,
    pub key: String,
    pub fraction: f64,
    pub members: usize,
    pub empty: bool,
    pub locked: bool,
    /// Group index for leaves.
    pub group: Option<usize>,
}

fn leaf_size(sizes: &[usize], ordinal: usize) -> usize {
    sizes.get(ordinal + 1).copied().unwrap_or(0)
}

/// Sets the visible fraction of the range at `path`.
///
/// Without locked leaves beneath the target every leaf gets `fraction`.
/// Otherwise the unlocked leaves share one value chosen so the member
/// weighted average of the subtree equals `fraction`, clamped to `[0, 1]`.
/// A range counts as locked for this update when it or any range between it
/// and the target is locked. Ancestors are recomputed afterwards.
///
/// `group_sizes[k]` is the member count of group `k` (index 0 is the
/// background and is ignored).
pub fn cascade_down(
    hierarchy: &mut Hierarchy,
    path: &RangePath,
    fraction: f64,
    group_sizes: &[usize],
) -> Result<CascadeOutcome> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(
            "fraction",
            format!("{fraction} outside [0, 1]"),
        ));
    }
    if path.depth() == 0 || hierarchy.range(path).is_none() {
        return Err(Error::NoSuchPath(path.to_string()));
    }

    let mut unlocked = Vec::new();
    let mut any_locked = false;
    let (mut unlocked_members, mut locked_members, mut locked_weighted) = (0.0, 0.0, 0.0);
    for (ordinal, leaf) in hierarchy.leaf_paths().iter().enumerate() {
        if !leaf.starts_with(path) {
            continue;
        }
        let locked = (path.depth()..=leaf.depth()).any(|d| {
            let prefix = RangePath(leaf.0[..d].to_vec());
            hierarchy.range(&prefix).is_some_and(|r| r.locked)
        });
        let c = leaf_size(group_sizes, ordinal) as f64;
        if locked {
            any_locked = true;
            locked_members += c;
            locked_weighted += c * hierarchy.range(leaf).map_or(0.0, |r| r.fraction);
        } else {
            unlocked_members += c;
            unlocked.push(leaf.clone());
        }
    }
    if unlocked.is_empty() {
        return Ok(CascadeOutcome::AllLocked);
    }

    let (value, clamped) = if !any_locked || unlocked_members == 0.0 {
        (fraction, false)
    } else {
        let x =
            (fraction * (unlocked_members + locked_members) - locked_weighted) / unlocked_members;
        let c = x.clamp(0.0, 1.0);
        (c, c != x)
    };
    for leaf in &unlocked {
        if let Some(r) = hierarchy.range_mut(leaf) {
            r.fraction = value;
        }
    }
    let summaries = cascade_up(hierarchy, group_sizes);
    let achieved = summaries
        .iter()
        .find(|s| &s.path == path)
        .map_or(value, |s| s.fraction);
    Ok(CascadeOutcome::Applied {
        leaf_value: value,
        achieved,
        clamped,
    })
}

/// Recomputes every internal range's fraction as the member-weighted average
/// of its leaves and returns a summary of every range in pre-order. Subtrees
/// without members display 0 and are flagged empty.
pub fn cascade_up(hierarchy: &mut Hierarchy, group_sizes: &[usize]) -> Vec<RangeSummary> {
    let mut out = Vec::new();
    let mut ordinal = 0;
    let mut keys = Vec::new();
    up(
        &mut hierarchy.roots,
        &RangePath::default(),
        group_sizes,
        &mut ordinal,
        &mut keys,
        &mut out,
    );
    out
}

fn up(
    nodes: &mut [HierarchyNode],
    prefix: &RangePath,
    sizes: &[usize],
    ordinal: &mut usize,
    keys: &mut Vec<String>,
    out: &mut Vec<RangeSummary>,
) -> (f64, usize) {
    let mut total = (0.0, 0usize);
    for (n, node) in nodes.iter_mut().enumerate() {
        for (r, entry) in node.ranges.iter_mut().enumerate() {
            let path = prefix.child(n, r);
            keys.push(format!("{}{}", node.attribute, entry.interval));
            let slot = out.len();
            out.push(RangeSummary {
                path: path.clone(),
                key: keys.join("/"),
                fraction: 0.0,
                members: 0,
                empty: true,
                locked: entry.locked,
                group: None,
            });
            let (weighted, members) = if entry.is_leaf() {
                let c = leaf_size(sizes, *ordinal);
                *ordinal += 1;
                out[slot].group = Some(*ordinal);
                (c as f64 * entry.fraction, c)
            } else {
                let (w, c) = up(&mut entry.children, &path, sizes, ordinal, keys, out);
                entry.fraction = if c > 0 { w / c as f64 } else { 0.0 };
                (w, c)
            };
            keys.pop();
            let s = &mut out[slot];
            s.members = members;
            s.empty = members == 0;
            s.fraction = if members > 0 { entry.fraction } else { 0.0 };
            total.0 += weighted;
            total.1 += members;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::HierarchyNode;

    fn parent_with_two() -> Hierarchy {
        Hierarchy::new(vec![HierarchyNode::new("volume", &[(0.0, 1.0)])
            .with_children(vec![HierarchyNode::new(
                "orientation",
                &[(0.0, 1.0), (1.0, 2.0)],
            )])])
    }

    fn root() -> RangePath {
        RangePath(vec![(0, 0)])
    }

    fn child(r: usize) -> RangePath {
        RangePath(vec![(0, 0), (0, r)])
    }

    #[test]
    fn uniform_case() {
        let mut h = parent_with_two();
        let out = cascade_down(&mut h, &root(), 0.5, &[0, 2, 2]).unwrap();
        assert!(matches!(
            out,
            CascadeOutcome::Applied { clamped: false, .. }
        ));
        assert_eq!(h.range(&child(0)).unwrap().fraction, 0.5);
        assert_eq!(h.range(&child(1)).unwrap().fraction, 0.5);
    }

    #[test]
    fn locked_sibling_solves_weighted_average() {
        let mut h = parent_with_two();
        let b = h.range_mut(&child(1)).unwrap();
        b.locked = true;
        b.fraction = 0.0;
        let out = cascade_down(&mut h, &root(), 0.6, &[0, 3, 1]).unwrap();
        let a = h.range(&child(0)).unwrap().fraction;
        assert!((a - 0.8).abs() < 1e-12, "{a}");
        assert_eq!(h.range(&child(1)).unwrap().fraction, 0.0);
        let CascadeOutcome::Applied {
            achieved, clamped, ..
        } = out
        else {
            panic!()
        };
        assert!(!clamped);
        assert!((achieved - 0.6).abs() < 1e-12);
    }

    #[test]
    fn clamp_then_recompute() {
        let mut h = parent_with_two();
        let b = h.range_mut(&child(1)).unwrap();
        b.locked = true;
        b.fraction = 0.0;
        let out = cascade_down(&mut h, &root(), 1.0, &[0, 2, 2]).unwrap();
        assert_eq!(h.range(&child(0)).unwrap().fraction, 1.0);
        assert_eq!(
            out,
            CascadeOutcome::Applied {
                leaf_value: 1.0,
                achieved: 0.5,
                clamped: true
            }
        );
        assert_eq!(h.range(&root()).unwrap().fraction, 0.5);
    }

    #[test]
    fn all_locked_is_noop() {
        let mut h = parent_with_two();
        for r in 0..2 {
            h.range_mut(&child(r)).unwrap().locked = true;
        }
        let before = h.clone();
        assert_eq!(
            cascade_down(&mut h, &root(), 0.2, &[0, 1, 1]).unwrap(),
            CascadeOutcome::AllLocked
        );
        assert_eq!(h, before);
    }

    #[test]
    fn bad_inputs() {
        let mut h = parent_with_two();
        assert!(cascade_down(&mut h, &root(), 1.5, &[]).is_err());
        assert!(matches!(
            cascade_down(&mut h, &RangePath(vec![(3, 0)]), 0.5, &[]),
            Err(Error::NoSuchPath(_))
        ));
    }

    #[test]
    fn up_weighted_average_and_empty() {
        let mut h = parent_with_two();
        h.range_mut(&child(0)).unwrap().fraction = 1.0;
        h.range_mut(&child(1)).unwrap().fraction = 0.0;
        let s = cascade_up(&mut h, &[0, 3, 1]);
        assert_eq!(s[0].path, root());
        assert!((s[0].fraction - 0.75).abs() < 1e-12);
        assert_eq!(s[0].members, 4);
        assert_eq!(s[1].group, Some(1));
        assert_eq!(s[2].group, Some(2));

        let s = cascade_up(&mut h, &[0, 0, 0]);
        assert!(s.iter().all(|x| x.empty && x.fraction == 0.0));
    }

    #[test]
    fn leaf_target_sets_itself() {
        let mut h = parent_with_two();
        cascade_down(&mut h, &child(1), 0.3, &[0, 1, 1]).unwrap();
        assert_eq!(h.range(&child(1)).unwrap().fraction, 0.3);
        assert_eq!(h.range(&child(0)).unwrap().fraction, 1.0);
        assert!((h.range(&root()).unwrap().fraction - 0.65).abs() < 1e-12);
    }
}
