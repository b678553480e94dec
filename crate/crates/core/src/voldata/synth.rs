//! Seeded synthetic scenes of boxes, spheres and ellipsoids.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AttributeDef, AttributeKind, AttributeSchema, AttributeValue, Dataset, GridDims, InstanceTable,
    RawVolume, SegmentationVolume,
};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Sphere,
    Ellipsoid,
}

impl Shape {
    fn code(self) -> f64 {
        match self {
            Shape::Box => 0.0,
            Shape::Sphere => 1.0,
            Shape::Ellipsoid => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Placement {
    /// Center drawn uniformly over the positions that keep the primitive
    /// inside the volume.
    #[default]
    Uniform,
    /// Center drawn along the main diagonal with uniform jitter per axis.
    Diagonal {
        jitter: f64,
    },
    Fixed {
        center: Vec3,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub shape: Shape,
    pub count: usize,
    /// Range of the major semi-axis in world units.
    pub size: [f64; 2],
    /// Range of the major/minor semi-axis ratio. Ignored for spheres.
    #[serde(default = "unit_range")]
    pub elongation: [f64; 2],
    #[serde(default)]
    pub placement: Placement,
}

fn unit_range() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    pub primitives: Vec<PrimitiveSpec>,
    /// Amplitude of the uniform noise added before normalization.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Minimum world distance between bounding spheres.
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}
fn default_noise() -> f64 {
    0.05
}
fn default_gap() -> f64 {
    1.0
}
fn default_attempts() -> usize {
    2000
}

impl SceneSpec {
    pub fn new(dims: [usize; 3], primitives: Vec<PrimitiveSpec>) -> Self {
        SceneSpec {
            dims,
            spacing: unit_spacing(),
            primitives,
            noise: default_noise(),
            gap: default_gap(),
            max_attempts: default_attempts(),
        }
    }

    /// Mixed scene scaled to an `n`-cube: boxes, spheres and ellipsoids
    /// spread uniformly, a line of ellipsoids along the main diagonal and one
    /// large sphere in the middle. The uniform primitives keep their size and
    /// their count grows with the volume, so density is the same for every
    /// `n`.
    pub fn mixed(n: usize) -> Self {
        let s = n as f64 / 64.0;
        let c = n as f64 / 2.0;
        let count = |k: f64| ((k * s * s * s).round() as usize).max(1);
        SceneSpec::new(
            [n; 3],
            vec![
                PrimitiveSpec {
                    shape: Shape::Sphere,
                    count: 1,
                    size: [8.0 * s; 2],
                    elongation: unit_range(),
                    placement: Placement::Fixed { center: [c; 3] },
                },
                PrimitiveSpec {
                    shape: Shape::Ellipsoid,
                    count: 8,
                    size: [3.0 * s, 5.0 * s],
                    elongation: [2.0, 3.0],
                    placement: Placement::Diagonal { jitter: 4.0 * s },
                },
                PrimitiveSpec {
                    shape: Shape::Box,
                    count: count(40.0),
                    size: [1.5, 3.5],
                    elongation: [1.0, 2.5],
                    placement: Placement::Uniform,
                },
                PrimitiveSpec {
                    shape: Shape::Sphere,
                    count: count(40.0),
                    size: [1.5, 3.0],
                    elongation: unit_range(),
                    placement: Placement::Uniform,
                },
                PrimitiveSpec {
                    shape: Shape::Ellipsoid,
                    count: count(40.0),
                    size: [2.0, 4.0],
                    elongation: [1.5, 3.0],
                    placement: Placement::Uniform,
                },
            ],
        )
    }

    /// `count` equal-sized small spheres placed uniformly in an `n`-cube.
    pub fn uniform_spheres(n: usize, count: usize, radius: f64) -> Self {
        SceneSpec::new(
            [n; 3],
            vec![PrimitiveSpec {
                shape: Shape::Sphere,
                count,
                size: [radius; 2],
                elongation: unit_range(),
                placement: Placement::Uniform,
            }],
        )
    }
}

#[derive(Debug, Clone)]
struct Primitive {
    shape: Shape,
    center: Vec3,
    /// Orthonormal frame, major axis first.
    frame: [Vec3; 3],
    semi: [f64; 3],
}

impl Primitive {
    fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Box => math::norm(self.semi),
            _ => self.semi[0],
        }
    }

    /// Normalized radial coordinate: `<= 1` inside.
    fn rho(&self, p: Vec3) -> f64 {
        let d = math::sub(p, self.center);
        let local = [0, 1, 2].map(|a| math::dot(d, self.frame[a]) / self.semi[a]);
        match self.shape {
            Shape::Box => local.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
            Shape::Sphere | Shape::Ellipsoid => math::norm(local),
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [0; 3].map(|_| rng.gen_range(-1.0..=1.0));
        let n = math::norm(v);
        if n > 1e-3 && n <= 1.0 {
            return math::scale(v, 1.0 / n);
        }
    }
}

fn frame_from(major: Vec3) -> [Vec3; 3] {
    let helper = if major[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let v = math::normalize(math::cross(major, helper)).expect("non-parallel helper");
    let w = math::cross(major, v);
    [major, v, w]
}

fn sample_range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

fn validate(spec: &SceneSpec) -> Result<GridDims> {
    let dims = GridDims::new(spec.dims, spec.spacing)?;
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::invalid("noise", "must be finite and non-negative"));
    }
    if !(spec.gap >= 0.0 && spec.gap.is_finite()) {
        return Err(Error::invalid("gap", "must be finite and non-negative"));
    }
    for p in &spec.primitives {
        let ok = |r: [f64; 2], min: f64| r[0] >= min && r[1] >= r[0] && r[1].is_finite();
        if !ok(p.size, f64::MIN_POSITIVE) {
            return Err(Error::invalid("size", format!("bad range {:?}", p.size)));
        }
        if !ok(p.elongation, 1.0) {
            return Err(Error::invalid(
                "elongation",
                format!("bad range {:?}", p.elongation),
            ));
        }
    }
    Ok(dims)
}

fn place(spec: &SceneSpec, dims: &GridDims, rng: &mut ChaCha8Rng) -> Result<Vec<Primitive>> {
    let extent = dims.extent();
    let mut placed: Vec<Primitive> = Vec::new();
    let mut index = 0;
    for ps in &spec.primitives {
        for _ in 0..ps.count {
            let mut attempt = 0;
            let prim = loop {
                if attempt == spec.max_attempts {
                    return Err(Error::Placement {
                        index,
                        attempts: attempt,
                    });
                }
                attempt += 1;
                let major = sample_range(rng, ps.size);
                let ratio = match ps.shape {
                    Shape::Sphere => 1.0,
                    _ => sample_range(rng, ps.elongation),
                };
                let minor = major / ratio;
                let frame = match ps.shape {
                    Shape::Sphere => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                    _ => frame_from(random_unit(rng)),
                };
                let mut prim = Primitive {
                    shape: ps.shape,
                    center: [0.0; 3],
                    frame,
                    semi: [major, minor, minor],
                };
                let r = prim.bounding_radius();
                if (0..3).any(|a| 2.0 * r > extent[a]) {
                    continue;
                }
                prim.center = match ps.placement {
                    Placement::Uniform => [0, 1, 2].map(|a| rng.gen_range(r..=extent[a] - r)),
                    Placement::Diagonal { jitter } => {
                        let t: f64 = rng.gen_range(0.0..=1.0);
                        [0, 1, 2].map(|a| {
                            let c =
                                r + t * (extent[a] - 2.0 * r) + rng.gen_range(-1.0..=1.0) * jitter;
                            c.clamp(r, extent[a] - r)
                        })
                    }
                    Placement::Fixed { center } => center,
                };
                let clear = placed.iter().all(|q| {
                    math::norm(math::sub(q.center, prim.center))
                        >= q.bounding_radius() + r + spec.gap
                });
                if clear {
                    break prim;
                }
                if matches!(ps.placement, Placement::Fixed { .. }) {
                    return Err(Error::Placement {
                        index,
                        attempts: attempt,
                    });
                }
            };
            placed.push(prim);
            index += 1;
        }
    }
    Ok(placed)
}

/// Generates a deterministic scene for `seed`.
///
/// Instances get ids `1..=n` in placement order. Attributes per instance:
/// `volume` (voxel count times voxel volume), `centroid`, `orientation`
/// (unit principal axis with non-negative z), `elongation` (ratio of major to
/// minor principal extent), `surface` (voxels with a 6-neighbour outside the
/// instance) and `shape` (0 box, 1 sphere, 2 ellipsoid).
pub fn generate_synthetic(spec: &SceneSpec, seed: u64) -> Result<Dataset> {
    let dims = validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = place(spec, &dims, &mut rng)?;

    let mut ids = vec![0u32; dims.len()];
    let mut signal = vec![0.0f64; dims.len()];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); prims.len()];
    let shape = dims.shape();
    for (k, prim) in prims.iter().enumerate() {
        let id = k as u32 + 1;
        let r = prim.bounding_radius();
        let lo =
            [0, 1, 2].map(|a| (((prim.center[a] - r) / dims.spacing[a]).floor().max(0.0)) as usize);
        let hi = [0, 1, 2]
            .map(|a| (((prim.center[a] + r) / dims.spacing[a]).ceil() as usize).min(shape[a]));
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    let rho = prim.rho(dims.voxel_center(x, y, z));
                    if rho <= 1.0 {
                        let i = dims.index(x, y, z);
                        debug_assert_eq!(ids[i], 0);
                        ids[i] = id;
                        signal[i] = 0.4 + 0.6 * (1.0 - rho * rho);
                        members[k].push(i);
                    }
                }
            }
        }
    }
    if spec.noise > 0.0 {
        for v in signal.iter_mut() {
            *v += rng.gen_range(-spec.noise..=spec.noise);
        }
    }
    let raw = RawVolume::from_unnormalized(dims, &signal)?;
    let seg = SegmentationVolume::new(dims, ids)?;

    let mut rows = BTreeMap::new();
    for (k, (prim, voxels)) in prims.iter().zip(&members).enumerate() {
        rows.insert(
            k as u32 + 1,
            instance_attributes(&dims, &seg, prim, voxels, k as u32 + 1),
        );
    }
    let table = InstanceTable::new(synthetic_schema(), rows)?;
    Dataset::new(raw, seg, table)
}

pub(crate) fn synthetic_schema() -> AttributeSchema {
    let def = |name: &str, kind| AttributeDef {
        name: name.into(),
        kind,
    };
    AttributeSchema::new(vec![
        def("volume", AttributeKind::Scalar),
        def("centroid", AttributeKind::Vector3),
        def("orientation", AttributeKind::Vector3),
        def("elongation", AttributeKind::Scalar),
        def("surface", AttributeKind::Scalar),
        def("shape", AttributeKind::Scalar),
    ])
    .expect("static schema")
}

fn instance_attributes(
    dims: &GridDims,
    seg: &SegmentationVolume,
    prim: &Primitive,
    voxels: &[usize],
    id: u32,
) -> Vec<AttributeValue> {
    let n = voxels.len();
    let volume = n as f64 * dims.voxel_volume();
    let (centroid, orientation, elongation) = if n == 0 {
        (prim.center, prim.frame[0], prim.semi[0] / prim.semi[1])
    } else {
        let mut sum = [0.0; 3];
        for &i in voxels {
            sum = math::add(sum, dims.voxel_center_of(i));
        }
        let c = math::scale(sum, 1.0 / n as f64);
        // voxel-cell variance keeps the covariance full rank for thin shapes
        let mut cov = Matrix3::from_diagonal(&Vector3::from(dims.spacing.map(|s| s * s / 12.0)));
        for &i in voxels {
            let d = Vector3::from(math::sub(dims.voxel_center_of(i), c));
            cov += d * d.transpose() / n as f64;
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let major = eig.eigenvectors.column(order[0]);
        let mut axis = [major[0], major[1], major[2]];
        let flip = axis
            .iter()
            .rev()
            .find(|v| v.abs() > 1e-12)
            .is_some_and(|v| *v < 0.0);
        if flip {
            axis = math::scale(axis, -1.0);
        }
        let lmax = eig.eigenvalues[order[0]];
        let lmin = eig.eigenvalues[order[2]];
        (c, axis, (lmax / lmin).sqrt())
    };
    let shape = dims.shape();
    let surface = voxels
        .iter()
        .filter(|&&i| {
            let c = dims.coords(i);
            (0..3).any(|a| {
                let stride = [1, dims.nx, dims.nx * dims.ny][a];
                c[a] == 0
                    || c[a] == shape[a] - 1
                    || seg.get(i - stride) != id
                    || seg.get(i + stride) != id
            })
        })
        .count();
    vec![
        AttributeValue::Scalar(volume),
        AttributeValue::Vector3(centroid),
        AttributeValue::Vector3(orientation),
        AttributeValue::Scalar(elongation),
        AttributeValue::Scalar(surface as f64),
        AttributeValue::Scalar(prim.shape.code()),
    ]
}
