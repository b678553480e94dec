//! Importance-driven sparsification.
//!
//! Every voxel gets an importance from a sparsification function; an
//! instance's importance is the mean over its voxels. Within each group the
//! least important instances are hidden until the group's visible fraction is
//! met. Instances hidden by an earlier run are hidden first again, so results
//! of different functions layer on top of each other.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{GroupAssignment, LinearPredicate};
use crate::math::{self, Vec3};
use crate::voldata::{GradientField, GridDims, InstanceTable, SegmentationVolume, SlotLookup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SparsifyMode {
    #[default]
    Uniform,
    Depth,
    ContextPreserving,
}

/// Blinn-Phong coefficients of the headlight used by the context-preserving
/// function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Shading {
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
}

impl Default for Shading {
    fn default() -> Self {
        Shading {
            ambient: 0.1,
            diffuse: 0.7,
            specular: 0.2,
            shininess: 32.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsifyParams {
    pub mode: SparsifyMode,
    /// Viewpoint for the view-dependent modes. `None` uses the current
    /// camera eye.
    pub camera_pos: Option<Vec3>,
    /// Cut depth.
    pub kappa_t: f64,
    /// Cut sharpness.
    pub kappa_s: f64,
    /// Seed of the per-session instance shuffle.
    pub seed: u64,
    pub shading: Shading,
}

impl Default for SparsifyParams {
    fn default() -> Self {
        SparsifyParams {
            mode: SparsifyMode::Uniform,
            camera_pos: None,
            kappa_t: 1.0,
            kappa_s: 1.0,
            seed: 0,
            shading: Shading::default(),
        }
    }
}

impl SparsifyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_t >= 0.0 && self.kappa_t.is_finite()) {
            return Err(Error::invalid("kappa_t", "must be finite and >= 0"));
        }
        if !(self.kappa_s > 0.0 && self.kappa_s.is_finite()) {
            return Err(Error::invalid("kappa_s", "must be finite and > 0"));
        }
        if let Some(e) = self.camera_pos {
            if !math::is_finite(e) {
                return Err(Error::invalid("camera_pos", "must be finite"));
            }
        }
        let s = &self.shading;
        if ![s.ambient, s.diffuse, s.specular, s.shininess]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
        {
            return Err(Error::invalid(
                "shading",
                "coefficients must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

pub fn importance_uniform(_x: Vec3) -> f64 {
    1.0
}

/// Distance from the camera divided by `normalizer`.
pub fn importance_depth(x: Vec3, eye: Vec3, normalizer: f64) -> f64 {
    math::norm(math::sub(x, eye)) / normalizer
}

/// Blinn-Phong intensity for a light at the eye, clamped to `[0, 1]`. The
/// view and light directions coincide, so the half vector equals the light
/// direction. Lighting is two-sided; a zero gradient receives only ambient.
pub fn headlight_intensity(gradient: Vec3, x: Vec3, eye: Vec3, shading: &Shading) -> f64 {
    let lit = match (
        math::normalize(gradient),
        math::normalize(math::sub(eye, x)),
    ) {
        (Some(n), Some(l)) => {
            let cos = math::dot(n, l).abs();
            shading.diffuse * cos + shading.specular * cos.powf(shading.shininess)
        }
        _ => 0.0,
    };
    (shading.ambient + lit).clamp(0.0, 1.0)
}

/// `g ^ ((kappa_t * s * p_d) ^ kappa_s)` with `0 ^ 0 = 1`, where `g` is the
/// normalized gradient magnitude, `s` the shading intensity and `p_d` the
/// normalized depth.
pub fn importance_context(
    gradient_magnitude: f64,
    shading: f64,
    depth: f64,
    kappa_t: f64,
    kappa_s: f64,
) -> f64 {
    let exponent = (kappa_t * shading * depth).powf(kappa_s);
    if exponent == 0.0 {
        1.0
    } else {
        gradient_magnitude.powf(exponent)
    }
}

/// Per-voxel importance for one parameter set.
pub struct ImportanceFunction<'a> {
    params: SparsifyParams,
    eye: Vec3,
    normalizer: f64,
    gradients: Option<&'a GradientField>,
}

impl<'a> ImportanceFunction<'a> {
    /// `eye` is used when `params.camera_pos` is unset. Depths are normalized
    /// by the bounding-sphere diameter of `dims`.
    pub fn new(
        params: &SparsifyParams,
        dims: &GridDims,
        eye: Vec3,
        gradients: Option<&'a GradientField>,
    ) -> Result<Self> {
        params.validate()?;
        if params.mode == SparsifyMode::ContextPreserving && gradients.is_none() {
            return Err(Error::invalid(
                "gradients",
                "context-preserving mode needs a gradient field",
            ));
        }
        Ok(ImportanceFunction {
            params: *params,
            eye: params.camera_pos.unwrap_or(eye),
            normalizer: dims.bounding_diameter(),
            gradients,
        })
    }

    pub fn eye(&self) -> Vec3 {
        self.eye
    }

    #[inline]
    pub fn at(&self, voxel: usize, x: Vec3) -> f64 {
        match self.params.mode {
            SparsifyMode::Uniform => importance_uniform(x),
            SparsifyMode::Depth => importance_depth(x, self.eye, self.normalizer),
            SparsifyMode::ContextPreserving => {
                let field = self.gradients.expect("checked in new");
                let grad = field.at(voxel);
                let max = field.max_magnitude();
                let g = if max > 0.0 {
                    (math::norm(grad) / max).min(1.0)
                } else {
                    0.0
                };
                let s = headlight_intensity(grad, x, self.eye, &self.params.shading);
                let d = importance_depth(x, self.eye, self.normalizer).clamp(0.0, 1.0);
                importance_context(g, s, d, self.params.kappa_t, self.params.kappa_s)
            }
        }
    }
}

/// Mean voxel importance per instance slot; instances without voxels get 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub values: Vec<f64>,
}

impl ImportanceTable {
    pub fn get(&self, slot: usize) -> f64 {
        self.values[slot]
    }
}

pub fn aggregate_importance(
    seg: &SegmentationVolume,
    table: &InstanceTable,
    function: &ImportanceFunction<'_>,
) -> ImportanceTable {
    let dims = seg.dims;
    let lookup = SlotLookup::new(table);
    let n = table.len();
    let ids = seg.ids();
    const CHUNK: usize = 1 << 16;
    let (sums, counts) = ids
        .par_chunks(CHUNK)
        .enumerate()
        .fold(
            || (vec![0.0f64; n], vec![0u64; n]),
            |(mut sums, mut counts), (c, chunk)| {
                let base = c * CHUNK;
                for (k, &id) in chunk.iter().enumerate() {
                    if let Some(slot) = lookup.get(id) {
                        let v = base + k;
                        sums[slot] += function.at(v, dims.voxel_center_of(v));
                        counts[slot] += 1;
                    }
                }
                (sums, counts)
            },
        )
        .reduce(
            || (vec![0.0f64; n], vec![0u64; n]),
            |(mut s1, mut c1), (s2, c2)| {
                for i in 0..n {
                    s1[i] += s2[i];
                    c1[i] += c2[i];
                }
                (s1, c1)
            },
        );
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    ImportanceTable { values }
}

/// Hide count `floor((1 - f) * size)` of a group at visible fraction `f`.
/// A small tolerance absorbs rounding in `1 - f`, so that for example
/// `f = 0.8` hides exactly 4 of 20.
pub fn hide_count(size: usize, visible_fraction: f64) -> usize {
    let f = visible_fraction.clamp(0.0, 1.0);
    (((1.0 - f) * size as f64 + 1e-9).floor() as usize).min(size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSparsity {
    pub group: usize,
    pub size: usize,
    pub hidden: usize,
    /// Of the hidden, how many were already hidden before this run.
    pub retained: usize,
}

/// Updates the visible flags of every non-background instance.
///
/// Per group, members are sorted by (importance, shuffle rank) ascending.
/// Previously hidden members are kept hidden first, in that order, up to the
/// hide count; then the least important remaining members are hidden until
/// the count is met and everything else becomes visible.
pub fn sparsify_groups(
    preds: &[LinearPredicate],
    assignment: &GroupAssignment,
    importance: &ImportanceTable,
    table: &mut InstanceTable,
) -> Vec<GroupSparsity> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); preds.len() + 1];
    for (slot, &g) in assignment.groups().iter().enumerate() {
        members[g as usize].push(slot);
    }
    let rank = table.shuffle_rank().to_vec();
    let (visible, hidden) = table.visibility_state_mut();
    hidden.fill(false);

    let mut stats = Vec::with_capacity(preds.len());
    for pred in preds {
        let group = &mut members[pred.group];
        group.sort_by(|&a, &b| {
            importance.values[a]
                .total_cmp(&importance.values[b])
                .then(rank[a].cmp(&rank[b]))
        });
        let to_hide = hide_count(group.len(), pred.visible_fraction);
        let mut n_hidden = 0;
        for &i in group.iter() {
            if n_hidden == to_hide {
                break;
            }
            if !visible[i] {
                hidden[i] = true;
                n_hidden += 1;
            }
        }
        let retained = n_hidden;
        for &i in group.iter() {
            if hidden[i] {
                continue;
            }
            if n_hidden < to_hide {
                visible[i] = false;
                n_hidden += 1;
            } else {
                visible[i] = true;
            }
        }
        stats.push(GroupSparsity {
            group: pred.group,
            size: group.len(),
            hidden: n_hidden,
            retained,
        });
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{Interval, RangePath};
    use crate::voldata::{AttributeDef, AttributeKind, AttributeSchema, AttributeValue};
    use std::collections::BTreeMap;

    fn table(n: u32) -> InstanceTable {
        let schema = AttributeSchema::new(vec![AttributeDef {
            name: "v".into(),
            kind: AttributeKind::Scalar,
        }])
        .unwrap();
        let rows: BTreeMap<u32, Vec<AttributeValue>> = (1..=n)
            .map(|i| (i, vec![AttributeValue::Scalar(i as f64)]))
            .collect();
        InstanceTable::new(schema, rows).unwrap()
    }

    fn pred(group: usize, f: f64) -> LinearPredicate {
        LinearPredicate {
            conjuncts: vec![],
            group,
            color: crate::grouping::default_color(group),
            visible_fraction: f,
            path: RangePath::default(),
            key: String::new(),
        }
        .with_interval(Interval::new(f64::NEG_INFINITY, f64::INFINITY))
    }

    impl LinearPredicate {
        fn with_interval(mut self, iv: Interval) -> Self {
            self.conjuncts.push(crate::grouping::Conjunct {
                attribute: "v".into(),
                interval: iv,
            });
            self
        }
    }

    fn hidden(t: &InstanceTable) -> Vec<u32> {
        t.ids()
            .iter()
            .zip(t.visible())
            .filter_map(|(&id, &v)| (!v).then_some(id))
            .collect()
    }

    #[test]
    fn scalar_functions() {
        assert_eq!(importance_uniform([3.0, 1.0, 2.0]), 1.0);
        assert_eq!(importance_depth([0.0; 3], [3.0, 4.0, 0.0], 1.0), 5.0);
        assert_eq!(importance_depth([1.0; 3], [1.0; 3], 7.0), 0.0);
        assert_eq!(importance_context(0.5, 1.0, 1.0, 2.0, 1.0), 0.25);
        assert_eq!(importance_context(1.0, 0.7, 0.3, 5.0, 3.0), 1.0);
        assert_eq!(importance_context(0.0, 1.0, 1.0, 0.0, 2.0), 1.0);
        assert_eq!(importance_context(0.3, 0.4, 0.9, 0.0, 0.5), 1.0);
    }

    #[test]
    fn headlight_bounds() {
        let s = Shading::default();
        assert_eq!(
            headlight_intensity([0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], &s),
            0.1
        );
        let facing = headlight_intensity([1.0, 0.0, 0.0], [0.0; 3], [5.0, 0.0, 0.0], &s);
        assert!((facing - 1.0).abs() < 1e-12);
        let away = headlight_intensity([-2.0, 0.0, 0.0], [0.0; 3], [5.0, 0.0, 0.0], &s);
        assert!((away - 1.0).abs() < 1e-12);
        let grazing = headlight_intensity([0.0, 1.0, 0.0], [0.0; 3], [5.0, 0.0, 0.0], &s);
        assert!((grazing - 0.1).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        let mut p = SparsifyParams::default();
        assert!(p.validate().is_ok());
        p.kappa_s = 0.0;
        assert!(p.validate().is_err());
        p.kappa_s = 1.0;
        p.kappa_t = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn exact_hide_counts() {
        let mut t = table(10);
        let a = GroupAssignment::from_groups(vec![1; 10], 1);
        let imp = ImportanceTable {
            values: vec![1.0; 10],
        };
        assert_eq!(hide_count(20, 0.8), 4);
        assert_eq!(hide_count(3, 0.5), 1);
        let s = sparsify_groups(&[pred(1, 0.4)], &a, &imp, &mut t);
        assert_eq!(s[0].hidden, 6);
        assert_eq!(hidden(&t).len(), 6);
        sparsify_groups(&[pred(1, 1.0)], &a, &imp, &mut t);
        assert!(hidden(&t).is_empty());
        sparsify_groups(&[pred(1, 0.0)], &a, &imp, &mut t);
        assert_eq!(hidden(&t).len(), 10);
    }

    #[test]
    fn lowest_importance_hidden_first() {
        let mut t = table(5);
        let a = GroupAssignment::from_groups(vec![1; 5], 1);
        let imp = ImportanceTable {
            values: vec![0.5, 0.1, 0.9, 0.3, 0.7],
        };
        sparsify_groups(&[pred(1, 0.6)], &a, &imp, &mut t);
        assert_eq!(hidden(&t), vec![2, 4]);
    }

    #[test]
    fn previously_hidden_stay_hidden() {
        let mut t = table(20);
        t.shuffle(11);
        let a = GroupAssignment::from_groups(vec![1; 20], 1);
        let uniform = ImportanceTable {
            values: vec![1.0; 20],
        };
        sparsify_groups(&[pred(1, 0.8)], &a, &uniform, &mut t);
        let first = hidden(&t);
        assert_eq!(first.len(), 4);
        let depth = ImportanceTable {
            values: (0..20).map(|i| (20 - i) as f64).collect(),
        };
        let s = sparsify_groups(&[pred(1, 0.5)], &a, &depth, &mut t);
        let second = hidden(&t);
        assert_eq!(second.len(), 10);
        assert_eq!(s[0].retained, 4);
        assert!(first.iter().all(|id| second.contains(id)));
    }

    #[test]
    fn background_untouched() {
        let mut t = table(4);
        t.set_visible(3, false);
        let a = GroupAssignment::from_groups(vec![1, 1, 1, 0], 1);
        let imp = ImportanceTable {
            values: vec![1.0; 4],
        };
        sparsify_groups(&[pred(1, 1.0)], &a, &imp, &mut t);
        assert_eq!(hidden(&t), vec![4]);
    }

    #[test]
    fn aggregate_depth_single_voxels() {
        let dims = GridDims::new([8, 1, 1], [1.0; 3]).unwrap();
        let mut ids = vec![0u32; 8];
        ids[1] = 1;
        ids[4] = 2;
        let seg = SegmentationVolume::new(dims, ids).unwrap();
        let t = table(3);
        let params = SparsifyParams {
            mode: SparsifyMode::Depth,
            camera_pos: Some([-0.5, 0.5, 0.5]),
            ..Default::default()
        };
        let f = ImportanceFunction::new(&params, &dims, [0.0; 3], None).unwrap();
        let imp = aggregate_importance(&seg, &t, &f);
        let d = dims.bounding_diameter();
        assert!((imp.values[0] - 2.0 / d).abs() < 1e-12);
        assert!((imp.values[1] - 5.0 / d).abs() < 1e-12);
        assert_eq!(imp.values[2], 0.0);
    }

    #[test]
    fn context_mode_requires_gradients() {
        let dims = GridDims::cube(2).unwrap();
        let params = SparsifyParams {
            mode: SparsifyMode::ContextPreserving,
            ..Default::default()
        };
        assert!(ImportanceFunction::new(&params, &dims, [0.0; 3], None).is_err());
    }
}
