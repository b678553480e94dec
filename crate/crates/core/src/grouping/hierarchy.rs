use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::color::Rgba;
use crate::error::{Error, Result};
use crate::voldata::AttributeSchema;

/// Half-open interval `[lo, hi)`. Unbounded ends are stored as infinities and
/// serialized as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(
        serialize_with = "ser_bound",
        deserialize_with = "de_lo",
        default = "neg_inf"
    )]
    pub lo: f64,
    #[serde(
        serialize_with = "ser_bound",
        deserialize_with = "de_hi",
        default = "pos_inf"
    )]
    pub hi: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}

fn ser_bound<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_lo<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

fn de_hi<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v < self.hi
    }

    fn is_valid(&self) -> bool {
        !self.lo.is_nan() && !self.hi.is_nan() && self.lo < self.hi && self.lo != f64::INFINITY
    }

    fn overlaps(&self, other: &Interval) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

/// One value range of a hierarchy node together with the group controls of
/// the subtree beneath it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    #[serde(flatten)]
    pub interval: Interval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Rgba>,
    /// Visible fraction. Authoritative on leaves; on internal ranges it holds
    /// the member-weighted average of the leaves below.
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default)]
    pub locked: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<HierarchyNode>,
}

fn one() -> f64 {
    1.0
}

impl RangeEntry {
    pub fn new(lo: f64, hi: f64) -> Self {
        RangeEntry {
            interval: Interval::new(lo, hi),
            color: None,
            fraction: 1.0,
            locked: false,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A predicate on one scalar attribute: a list of disjoint ranges, each with
/// an optional list of child nodes that refine it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub attribute: String,
    pub ranges: Vec<RangeEntry>,
}

impl HierarchyNode {
    pub fn new(attribute: impl Into<String>, bounds: &[(f64, f64)]) -> Self {
        HierarchyNode {
            attribute: attribute.into(),
            ranges: bounds
                .iter()
                .map(|&(lo, hi)| RangeEntry::new(lo, hi))
                .collect(),
        }
    }

    /// Copies `children` beneath every range of this node.
    pub fn with_children(mut self, children: Vec<HierarchyNode>) -> Self {
        for r in &mut self.ranges {
            r.children = children.clone();
        }
        self
    }
}

/// Ordered root nodes. The JSON form is either a single node object or an
/// array of nodes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "HierarchyDoc", into = "Vec<HierarchyNode>")]
pub struct Hierarchy {
    pub roots: Vec<HierarchyNode>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HierarchyDoc {
    Many(Vec<HierarchyNode>),
    One(HierarchyNode),
}

impl From<HierarchyDoc> for Hierarchy {
    fn from(d: HierarchyDoc) -> Self {
        match d {
            HierarchyDoc::Many(roots) => Hierarchy { roots },
            HierarchyDoc::One(n) => Hierarchy { roots: vec![n] },
        }
    }
}

impl From<Hierarchy> for Vec<HierarchyNode> {
    fn from(h: Hierarchy) -> Self {
        h.roots
    }
}

/// Address of a range entry: `(node index, range index)` per level, starting
/// at the roots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct RangePath(pub Vec<(usize, usize)>);

impl RangePath {
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn starts_with(&self, prefix: &RangePath) -> bool {
        self.0.starts_with(&prefix.0)
    }

    pub fn child(&self, node: usize, range: usize) -> RangePath {
        let mut v = self.0.clone();
        v.push((node, range));
        RangePath(v)
    }
}

impl fmt::Display for RangePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(n, r)| format!("{n}:{r}")).collect();
        write!(f, "/{}", parts.join("/"))
    }
}

impl Hierarchy {
    pub fn new(roots: Vec<HierarchyNode>) -> Self {
        Hierarchy { roots }
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn range(&self, path: &RangePath) -> Option<&RangeEntry> {
        let mut nodes = &self.roots;
        let mut found = None;
        for &(n, r) in &path.0 {
            let entry = nodes.get(n)?.ranges.get(r)?;
            nodes = &entry.children;
            found = Some(entry);
        }
        found
    }

    pub fn range_mut(&mut self, path: &RangePath) -> Option<&mut RangeEntry> {
        let (&(n, r), rest) = path.0.split_first()?;
        let mut entry = self.roots.get_mut(n)?.ranges.get_mut(r)?;
        for &(n, r) in rest {
            entry = entry.children.get_mut(n)?.ranges.get_mut(r)?;
        }
        Some(entry)
    }

    /// Every range entry in depth-first pre-order.
    pub fn range_paths(&self) -> Vec<RangePath> {
        fn walk(nodes: &[HierarchyNode], prefix: &RangePath, out: &mut Vec<RangePath>) {
            for (n, node) in nodes.iter().enumerate() {
                for (r, entry) in node.ranges.iter().enumerate() {
                    let p = prefix.child(n, r);
                    out.push(p.clone());
                    walk(&entry.children, &p, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.roots, &RangePath::default(), &mut out);
        out
    }

    /// Leaf ranges in linearization order; leaf `i` defines group `i + 1`.
    pub fn leaf_paths(&self) -> Vec<RangePath> {
        self.range_paths()
            .into_iter()
            .filter(|p| self.range(p).is_some_and(RangeEntry::is_leaf))
            .collect()
    }

    /// Label of a path built from attribute names and bounds, stable under
    /// edits elsewhere in the tree.
    pub fn path_key(&self, path: &RangePath) -> Option<String> {
        let mut nodes = &self.roots;
        let mut parts = Vec::with_capacity(path.depth());
        for &(n, r) in &path.0 {
            let node = nodes.get(n)?;
            let entry = node.ranges.get(r)?;
            parts.push(format!("{}{}", node.attribute, entry.interval));
            nodes = &entry.children;
        }
        Some(parts.join("/"))
    }

    /// Checks attribute names against `schema`, interval sanity, disjointness
    /// within each node, control values, and that the children beneath every
    /// range of a node share the same shape.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        validate_nodes(&self.roots, schema, "")
    }
}

fn validate_nodes(nodes: &[HierarchyNode], schema: &AttributeSchema, at: &str) -> Result<()> {
    for (n, node) in nodes.iter().enumerate() {
        let here = format!("{at}/{n}");
        schema.scalar_accessor(&node.attribute)?;
        if node.ranges.is_empty() {
            return Err(Error::Hierarchy(format!("node {here} has no ranges")));
        }
        for (r, entry) in node.ranges.iter().enumerate() {
            let iv = entry.interval;
            if !iv.is_valid() {
                return Err(Error::Hierarchy(format!(
                    "range {here}:{r} has invalid interval {iv}"
                )));
            }
            if let Some(other) = node.ranges[..r].iter().find(|o| o.interval.overlaps(&iv)) {
                return Err(Error::Hierarchy(format!(
                    "range {here}:{r} {iv} overlaps {}",
                    other.interval
                )));
            }
            if !(0.0..=1.0).contains(&entry.fraction) {
                return Err(Error::Hierarchy(format!(
                    "range {here}:{r} has fraction {} outside [0, 1]",
                    entry.fraction
                )));
            }
            if let Some(c) = entry.color {
                if !c.is_valid() {
                    return Err(Error::Hierarchy(format!(
                        "range {here}:{r} has color outside [0, 1]"
                    )));
                }
            }
            if !same_shape(&entry.children, &node.ranges[0].children) {
                return Err(Error::Hierarchy(format!(
                    "children of range {here}:{r} differ in shape from those of range {here}:0"
                )));
            }
            validate_nodes(&entry.children, schema, &format!("{here}:{r}"))?;
        }
    }
    Ok(())
}

fn same_shape(a: &[HierarchyNode], b: &[HierarchyNode]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.attribute == y.attribute
                && x.ranges.len() == y.ranges.len()
                && x.ranges
                    .iter()
                    .zip(&y.ranges)
                    .all(|(p, q)| p.interval == q.interval && same_shape(&p.children, &q.children))
        })
}
