//! Volume and attribute data model.
//!
//! Grids are indexed x-fastest, z-slowest. Voxel `(i, j, k)` covers the world
//! box `[i, i+1) * sx` (and likewise per axis), so its center sits at
//! `(i + 0.5) * sx` and the volume occupies `[0, n * s]` on each axis.

mod gradient;
mod io;
mod sampling;
mod synth;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

pub use gradient::{compute_gradients, GradientField};
pub use io::{load_dataset, save_dataset, DatasetDescriptor, PayloadRef};
pub use sampling::TrilinearStencil;
pub use synth::{generate_synthetic, Placement, PrimitiveSpec, SceneSpec, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: [f64; 3],
}

impl GridDims {
    pub fn new(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidGrid(format!(
                "voxel counts must be positive, got {shape:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        shape[0]
            .checked_mul(shape[1])
            .and_then(|n| n.checked_mul(shape[2]))
            .ok_or_else(|| Error::InvalidGrid(format!("grid {shape:?} is too large")))?;
        Ok(GridDims {
            nx: shape[0],
            ny: shape[1],
            nz: shape[2],
            spacing,
        })
    }

    /// Unit-spaced cubic grid.
    pub fn cube(n: usize) -> Result<Self> {
        Self::new([n, n, n], [1.0; 3])
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.nx;
        let yz = index / self.nx;
        [x, yz % self.ny, yz / self.ny]
    }

    #[inline]
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        [
            (x as f64 + 0.5) * self.spacing[0],
            (y as f64 + 0.5) * self.spacing[1],
            (z as f64 + 0.5) * self.spacing[2],
        ]
    }

    pub fn voxel_center_of(&self, index: usize) -> Vec3 {
        let [x, y, z] = self.coords(index);
        self.voxel_center(x, y, z)
    }

    /// World-space size of the volume box.
    pub fn extent(&self) -> Vec3 {
        [
            self.nx as f64 * self.spacing[0],
            self.ny as f64 * self.spacing[1],
            self.nz as f64 * self.spacing[2],
        ]
    }

    pub fn center(&self) -> Vec3 {
        math::scale(self.extent(), 0.5)
    }

    /// Diameter of the sphere circumscribing the volume box.
    pub fn bounding_diameter(&self) -> f64 {
        math::norm(self.extent())
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let e = self.extent();
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= e[a])
    }

    /// Voxel whose cell contains `p`; points on the far faces map to the last
    /// voxel. `None` outside the box.
    #[inline]
    pub fn nearest_voxel(&self, p: Vec3) -> Option<usize> {
        let shape = self.shape();
        let mut c = [0usize; 3];
        for a in 0..3 {
            let u = p[a] / self.spacing[a];
            if !(u >= 0.0 && u <= shape[a] as f64) {
                return None;
            }
            c[a] = (u as usize).min(shape[a] - 1);
        }
        Some(self.index(c[0], c[1], c[2]))
    }
}

/// Scalar field normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub dims: GridDims,
    values: Vec<f32>,
}

impl RawVolume {
    pub fn new(dims: GridDims, values: Vec<f32>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::PayloadSize {
                file: "raw".into(),
                expected: dims.len(),
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("raw", format!("value {v} outside [0, 1]")));
        }
        Ok(RawVolume { dims, values })
    }

    /// Min-max normalizes arbitrary finite samples into `[0, 1]`. A constant
    /// input maps to all zeros.
    pub fn from_unnormalized(dims: GridDims, samples: &[f64]) -> Result<Self> {
        if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("raw", format!("non-finite sample {v}")));
        }
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let values = samples
            .iter()
            .map(|&v| {
                if range > 0.0 {
                    (((v - lo) / range) as f32).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        RawVolume::new(dims, values)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, index: usize) -> f32 {
        self.values[index]
    }
}

/// Per-voxel instance ids, 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationVolume {
    pub dims: GridDims,
    ids: Vec<u32>,
}

impl SegmentationVolume {
    pub fn new(dims: GridDims, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != dims.len() {
            return Err(Error::PayloadSize {
                file: "seg".into(),
                expected: dims.len(),
                actual: ids.len(),
            });
        }
        Ok(SegmentationVolume { dims, ids })
    }

    pub fn background(dims: GridDims) -> Self {
        SegmentationVolume {
            dims,
            ids: vec![0; dims.len()],
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, index: usize) -> u32 {
        self.ids[index]
    }

    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// Voxel indices labelled `id`, ascending.
    pub fn voxels_of_instance(&self, id: u32) -> Vec<usize> {
        if id == 0 {
            return Vec::new();
        }
        self.ids
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v == id).then_some(i))
            .collect()
    }

    pub fn background_count(&self) -> usize {
        self.ids.iter().filter(|&&v| v == 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Scalar,
    Vector3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttributeDef>", into = "Vec<AttributeDef>")]
pub struct AttributeSchema {
    attributes: Vec<AttributeDef>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<AttributeDef>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema needs at least one attribute".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for def in &attributes {
            if def.name.is_empty() {
                return Err(Error::Schema("attribute names must be non-empty".into()));
            }
            if def.name.contains('.') {
                return Err(Error::Schema(format!(
                    "attribute name {:?} must not contain '.'",
                    def.name
                )));
            }
            if !seen.insert(def.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute {:?}", def.name)));
            }
        }
        Ok(AttributeSchema { attributes })
    }

    pub fn attributes(&self) -> &[AttributeDef] {
        &self.attributes
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Resolves a scalar name used in predicates. Scalar attributes resolve
    /// by name; vector attributes expose derived scalars with a suffix:
    /// `.x`, `.y`, `.z` (components), `.norm`, `.polar` (degrees from +z),
    /// `.azimuth` (degrees in `[0, 360)`), and `.align_x`, `.align_y`,
    /// `.align_z` (absolute cosine with the axis).
    pub fn scalar_accessor(&self, name: &str) -> Result<ScalarAccessor> {
        if let Some(index) = self.position(name) {
            return match self.attributes[index].kind {
                AttributeKind::Scalar => Ok(ScalarAccessor {
                    index,
                    derived: None,
                }),
                AttributeKind::Vector3 => Err(Error::NotScalar(name.to_string())),
            };
        }
        let (base, suffix) = name
            .split_once('.')
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))?;
        let index = self
            .position(base)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))?;
        if self.attributes[index].kind != AttributeKind::Vector3 {
            return Err(Error::UnknownAttribute(name.to_string()));
        }
        let derived = match suffix {
            "x" => Derived::Component(0),
            "y" => Derived::Component(1),
            "z" => Derived::Component(2),
            "norm" => Derived::Norm,
            "polar" => Derived::Polar,
            "azimuth" => Derived::Azimuth,
            "align_x" => Derived::Align(0),
            "align_y" => Derived::Align(1),
            "align_z" => Derived::Align(2),
            _ => return Err(Error::UnknownAttribute(name.to_string())),
        };
        Ok(ScalarAccessor {
            index,
            derived: Some(derived),
        })
    }
}

impl TryFrom<Vec<AttributeDef>> for AttributeSchema {
    type Error = Error;
    fn try_from(v: Vec<AttributeDef>) -> Result<Self> {
        AttributeSchema::new(v)
    }
}

impl From<AttributeSchema> for Vec<AttributeDef> {
    fn from(s: AttributeSchema) -> Self {
        s.attributes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Derived {
    Component(usize),
    Norm,
    Polar,
    Azimuth,
    Align(usize),
}

/// Pre-resolved lookup of a (possibly derived) scalar attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalarAccessor {
    index: usize,
    derived: Option<Derived>,
}

impl ScalarAccessor {
    pub fn get(&self, row: &[AttributeValue]) -> f64 {
        match (&row[self.index], self.derived) {
            (AttributeValue::Scalar(v), None) => *v,
            (AttributeValue::Vector3(v), Some(d)) => derive_scalar(*v, d),
            // rows are validated against the schema on construction
            _ => f64::NAN,
        }
    }
}

fn derive_scalar(v: Vec3, d: Derived) -> f64 {
    let n = math::norm(v);
    match d {
        Derived::Component(a) => v[a],
        Derived::Norm => n,
        Derived::Polar => {
            if n > 0.0 {
                (v[2] / n).clamp(-1.0, 1.0).acos().to_degrees()
            } else {
                0.0
            }
        }
        Derived::Azimuth => {
            if v[0] == 0.0 && v[1] == 0.0 {
                0.0
            } else {
                v[1].atan2(v[0]).to_degrees().rem_euclid(360.0)
            }
        }
        Derived::Align(a) => {
            if n > 0.0 {
                (v[a] / n).abs()
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Scalar(f64),
    Vector3([f64; 3]),
}

impl AttributeValue {
    pub fn kind(&self) -> AttributeKind {
        match self {
            AttributeValue::Scalar(_) => AttributeKind::Scalar,
            AttributeValue::Vector3(_) => AttributeKind::Vector3,
        }
    }
}

/// Per-instance attribute rows plus the visibility state driven by
/// sparsification.
///
/// Instances live in dense slots ordered by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTable {
    schema: AttributeSchema,
    ids: Vec<u32>,
    slots: HashMap<u32, usize>,
    rows: Vec<Vec<AttributeValue>>,
    visible: Vec<bool>,
    hidden_scratch: Vec<bool>,
    shuffle_rank: Vec<u32>,
}

impl InstanceTable {
    pub fn new(schema: AttributeSchema, rows: BTreeMap<u32, Vec<AttributeValue>>) -> Result<Self> {
        for (&id, row) in &rows {
            if id == 0 {
                return Err(Error::Row {
                    id,
                    reason: "id 0 is reserved for the background".into(),
                });
            }
            if row.len() != schema.attributes.len() {
                return Err(Error::Row {
                    id,
                    reason: format!(
                        "expected {} values, got {}",
                        schema.attributes.len(),
                        row.len()
                    ),
                });
            }
            for (def, value) in schema.attributes.iter().zip(row) {
                if def.kind != value.kind() {
                    return Err(Error::Row {
                        id,
                        reason: format!("attribute {:?} expects {:?}", def.name, def.kind),
                    });
                }
                let finite = match value {
                    AttributeValue::Scalar(v) => v.is_finite(),
                    AttributeValue::Vector3(v) => math::is_finite(*v),
                };
                if !finite {
                    return Err(Error::Row {
                        id,
                        reason: format!("attribute {:?} is not finite", def.name),
                    });
                }
            }
        }
        let ids: Vec<u32> = rows.keys().copied().collect();
        let slots = ids.iter().enumerate().map(|(s, &id)| (id, s)).collect();
        let n = ids.len();
        Ok(InstanceTable {
            schema,
            ids,
            slots,
            rows: rows.into_values().collect(),
            visible: vec![true; n],
            hidden_scratch: vec![false; n],
            shuffle_rank: (0..n as u32).collect(),
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Instance ids in ascending order; position is the slot.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn slot(&self, id: u32) -> Option<usize> {
        self.slots.get(&id).copied()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn row(&self, slot: usize) -> &[AttributeValue] {
        &self.rows[slot]
    }

    pub fn value(&self, id: u32, name: &str) -> Option<AttributeValue> {
        let slot = self.slot(id)?;
        let index = self.schema.position(name)?;
        Some(self.rows[slot][index])
    }

    pub fn scalar(&self, slot: usize, accessor: &ScalarAccessor) -> f64 {
        accessor.get(&self.rows[slot])
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn is_visible(&self, id: u32) -> Option<bool> {
        self.slot(id).map(|s| self.visible[s])
    }

    pub fn set_visible(&mut self, slot: usize, visible: bool) {
        self.visible[slot] = visible;
    }

    pub fn reset_visibility(&mut self) {
        self.visible.fill(true);
        self.hidden_scratch.fill(false);
    }

    pub(crate) fn visibility_state_mut(&mut self) -> (&mut [bool], &mut [bool]) {
        (&mut self.visible, &mut self.hidden_scratch)
    }

    pub fn hidden_scratch(&self) -> &[bool] {
        &self.hidden_scratch
    }

    /// Position of each slot in the session shuffle order.
    pub fn shuffle_rank(&self) -> &[u32] {
        &self.shuffle_rank
    }

    /// Instance ids in shuffle order.
    pub fn shuffle_order(&self) -> Vec<u32> {
        let mut order = vec![0u32; self.len()];
        for (slot, &rank) in self.shuffle_rank.iter().enumerate() {
            order[rank as usize] = self.ids[slot];
        }
        order
    }

    /// Draws a fresh random permutation of the instances from `seed`.
    pub fn shuffle(&mut self, seed: u64) {
        let mut order: Vec<u32> = (0..self.len() as u32).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (rank, &slot) in order.iter().enumerate() {
            self.shuffle_rank[slot as usize] = rank as u32;
        }
    }

    pub fn rows_by_id(&self) -> BTreeMap<u32, Vec<AttributeValue>> {
        self.ids
            .iter()
            .copied()
            .zip(self.rows.iter().cloned())
            .collect()
    }
}

/// Maps segmentation ids to table slots. Dense for compact id ranges.
#[derive(Debug, Clone)]
pub enum SlotLookup {
    Dense(Vec<u32>),
    Sparse(HashMap<u32, u32>),
}

impl SlotLookup {
    pub fn new(table: &InstanceTable) -> Self {
        let max_id = table.ids().last().copied().unwrap_or(0) as usize;
        if max_id <= 4 * table.len() + (1 << 20) {
            let mut dense = vec![u32::MAX; max_id + 1];
            for (slot, &id) in table.ids().iter().enumerate() {
                dense[id as usize] = slot as u32;
            }
            SlotLookup::Dense(dense)
        } else {
            SlotLookup::Sparse(
                table
                    .ids()
                    .iter()
                    .enumerate()
                    .map(|(s, &id)| (id, s as u32))
                    .collect(),
            )
        }
    }

    #[inline]
    pub fn get(&self, id: u32) -> Option<usize> {
        if id == 0 {
            return None;
        }
        match self {
            SlotLookup::Dense(d) => d
                .get(id as usize)
                .copied()
                .filter(|&s| s != u32::MAX)
                .map(|s| s as usize),
            SlotLookup::Sparse(m) => m.get(&id).map(|&s| s as usize),
        }
    }
}

/// Raw volume, segmentation and attribute table on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub raw: RawVolume,
    pub seg: SegmentationVolume,
    pub table: InstanceTable,
}

impl Dataset {
    pub fn new(raw: RawVolume, seg: SegmentationVolume, table: InstanceTable) -> Result<Self> {
        if raw.dims.shape() != seg.dims.shape() {
            return Err(Error::DimsMismatch {
                raw: raw.dims.shape(),
                seg: seg.dims.shape(),
            });
        }
        if raw.dims.spacing != seg.dims.spacing {
            return Err(Error::InvalidGrid(
                "raw and segmentation spacing differ".into(),
            ));
        }
        let mut checked = std::collections::HashSet::new();
        for &id in seg.ids() {
            if id != 0 && checked.insert(id) && !table.contains(id) {
                return Err(Error::MissingAttributes(id));
            }
        }
        Ok(Dataset { raw, seg, table })
    }

    pub fn dims(&self) -> GridDims {
        self.raw.dims
    }
}
