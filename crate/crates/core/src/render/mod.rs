//! Emission-absorption raycaster with post-classification of the visibility
//! mask, blending against the raw data and an ID-buffer pass.

mod camera;
mod transfer;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{unit_to_u8, Rgba};
use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::mask::{encode_png, TfLookup, TransferFunction2D, VisibilityMask, CENTER_CODE};
use crate::math::{self, Vec3};
use crate::voldata::{
    GradientField, GridDims, InstanceTable, RawVolume, SegmentationVolume, SlotLookup,
    TrilinearStencil,
};

pub use camera::{intersect_box, Camera, RayGen};
pub use transfer::{ControlPoint, RawTransferFunction};

/// Interpolation weights between the mask classification and the raw
/// classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BlendWeights {
    pub w_color: f64,
    pub w_transfer: f64,
    pub w_alpha: f64,
}

impl BlendWeights {
    pub fn new(w_color: f64, w_transfer: f64, w_alpha: f64) -> Self {
        BlendWeights {
            w_color,
            w_transfer,
            w_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_color", self.w_color),
            ("w_transfer", self.w_transfer),
            ("w_alpha", self.w_alpha),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(
                    "blend",
                    format!("{name} = {w} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }
}

/// Blends a mask sample with a raw sample:
///
/// ```text
/// C          = (1 - w_color) * C_mask + w_color * C_raw
/// A_transfer = (1 - w_transfer) * A_mask + w_transfer * A_mask * A_raw
/// A          = (1 - w_alpha) * A_transfer + w_alpha * A_raw
/// ```
#[inline]
pub fn blend(mask: Rgba, raw: Rgba, w: &BlendWeights) -> Rgba {
    let c = |i: usize| (1.0 - w.w_color) * mask.0[i] + w.w_color * raw.0[i];
    let (am, ar) = (mask.a(), raw.a());
    let at = (1.0 - w.w_transfer) * am + w.w_transfer * am * ar;
    Rgba([c(0), c(1), c(2), (1.0 - w.w_alpha) * at + w.w_alpha * ar])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Ray step as a fraction of the smallest voxel spacing.
    pub step_factor: f64,
    pub early_termination: f64,
    /// Minimum sample opacity for the ID buffer to record an instance.
    pub id_threshold: f64,
    /// Headlight Lambert shading from the raw gradient.
    pub shading: bool,
    pub ambient: f64,
    pub background: Rgba,
    pub tf_lookup: TfLookup,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            step_factor: 0.5,
            early_termination: 0.99,
            id_threshold: 0.05,
            shading: true,
            ambient: 0.3,
            background: Rgba::new(0.0, 0.0, 0.0, 1.0),
            tf_lookup: TfLookup::Analytic,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_factor > 0.0 && self.step_factor <= 4.0) {
            return Err(Error::invalid("step_factor", "must lie in (0, 4]"));
        }
        if !(self.early_termination > 0.0 && self.early_termination <= 1.0) {
            return Err(Error::invalid("early_termination", "must lie in (0, 1]"));
        }
        if !(self.id_threshold > 0.0 && self.id_threshold <= 1.0) {
            return Err(Error::invalid("id_threshold", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return Err(Error::invalid("ambient", "must lie in [0, 1]"));
        }
        if !self.background.is_valid() {
            return Err(Error::invalid("background", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Which instances the ID buffer may record: visible instances outside the
/// background group.
#[derive(Debug, Clone)]
pub struct IdGate {
    lookup: SlotLookup,
    groups: Vec<u32>,
}

impl IdGate {
    pub fn new(table: &InstanceTable, assignment: &GroupAssignment) -> Self {
        let groups = (0..table.len())
            .map(|s| {
                if table.visible()[s] {
                    assignment.group_of_slot(s)
                } else {
                    0
                }
            })
            .collect();
        IdGate {
            lookup: SlotLookup::new(table),
            groups,
        }
    }

    #[inline]
    pub fn group(&self, id: u32) -> Option<u32> {
        self.lookup
            .get(id)
            .map(|s| self.groups[s])
            .filter(|&g| g > 0)
    }
}

/// Premultiplied colors, instance ids and their groups, row-major.
type Buffers = (Vec<[f64; 4]>, Vec<u32>, Vec<u32>);

/// Immutable inputs of one frame.
#[derive(Clone, Copy)]
pub struct Scene<'a> {
    pub raw: &'a RawVolume,
    pub seg: &'a SegmentationVolume,
    pub gradients: Option<&'a GradientField>,
    pub mask: &'a VisibilityMask,
    pub tf: &'a TransferFunction2D,
    pub raw_tf: &'a RawTransferFunction,
    pub gate: &'a IdGate,
    pub weights: BlendWeights,
    pub options: RenderOptions,
    pub epoch: u64,
}

/// Nearest visible instance per pixel, row-major from the top-left.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdBuffer {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u32>,
    pub groups: Vec<u32>,
    pub epoch: u64,
    pub camera_hash: u64,
}

impl IdBuffer {
    /// Headerless little-endian `u32` ids.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.ids.iter().flat_map(|i| i.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub width: u32,
    pub height: u32,
    /// Premultiplied RGBA composited over the background.
    pub color: Vec<[f64; 4]>,
    pub id: IdBuffer,
}

impl FrameSet {
    /// Straight-alpha 8-bit RGBA.
    pub fn to_rgba8(&self) -> Vec<u8> {
        self.color
            .iter()
            .flat_map(|c| {
                let a = c[3];
                let un = |v: f64| if a > 0.0 { unit_to_u8(v / a) } else { 0 };
                [un(c[0]), un(c[1]), un(c[2]), unit_to_u8(a)]
            })
            .collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, self.to_rgba8())
    }
}

const BRICK: usize = 8;

/// Bricks in which every sample is known to classify to zero opacity.
/// Skipping them leaves the composited result bit-for-bit unchanged.
struct SkipGrid {
    shape: [usize; 3],
    inv_spacing: Vec3,
    skip: Vec<bool>,
}

impl SkipGrid {
    fn build(
        dims: &GridDims,
        raw: &RawVolume,
        raw_tf: &RawTransferFunction,
        mask: Option<&VisibilityMask>,
        weights: Option<&BlendWeights>,
    ) -> Self {
        let shape = dims.shape().map(|n| n.div_ceil(BRICK));
        let nb = shape[0] * shape[1] * shape[2];
        let (bx, by) = (shape[0], shape[1]);
        let brick_of = |i: usize| {
            let c = dims.coords(i);
            c[0] / BRICK + bx * (c[1] / BRICK + by * (c[2] / BRICK))
        };
        let mut max_raw = vec![0.0f32; nb];
        let mut occupied = vec![false; nb];
        for (i, &v) in raw.values().iter().enumerate() {
            let b = brick_of(i);
            max_raw[b] = max_raw[b].max(v);
        }
        if let Some(m) = mask {
            for (i, &c) in m.codes().iter().enumerate() {
                if c != CENTER_CODE {
                    occupied[brick_of(i)] = true;
                }
            }
        }
        // samples read voxels of neighbouring bricks
        let dilate_max = dilate(&shape, &max_raw, |a, b| a.max(b));
        let dilate_occ = dilate(&shape, &occupied, |a, b| a || b);
        let threshold = raw_tf.transparent_below();
        let skip = (0..nb)
            .map(|b| {
                let m = f64::from(dilate_max[b]);
                let raw_zero = threshold.is_some_and(|t| m == 0.0 || m + 1e-9 <= t);
                match (mask, weights) {
                    (Some(_), Some(w)) => {
                        let mask_zero = !dilate_occ[b];
                        (raw_zero && (mask_zero || w.w_alpha == 1.0 || w.w_transfer == 1.0))
                            || (mask_zero && w.w_alpha == 0.0)
                    }
                    _ => raw_zero,
                }
            })
            .collect();
        SkipGrid {
            shape,
            inv_spacing: dims.spacing.map(|s| 1.0 / s),
            skip,
        }
    }

    #[inline]
    fn skips(&self, p: Vec3) -> bool {
        let mut b = 0;
        let mut stride = 1;
        for ((&x, &inv), &n) in p.iter().zip(&self.inv_spacing).zip(&self.shape) {
            let u = (x * inv).max(0.0) as usize / BRICK;
            b += u.min(n - 1) * stride;
            stride *= n;
        }
        self.skip[b]
    }
}

fn dilate<T: Copy>(shape: &[usize; 3], v: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut cur = v.to_vec();
    let strides = [1, shape[0], shape[0] * shape[1]];
    for a in 0..3 {
        let prev = cur.clone();
        for (i, out) in cur.iter_mut().enumerate() {
            let c = (i / strides[a]) % shape[a];
            if c > 0 {
                *out = f(*out, prev[i - strides[a]]);
            }
            if c + 1 < shape[a] {
                *out = f(*out, prev[i + strides[a]]);
            }
        }
    }
    cur
}

trait Classifier: Sync {
    fn classify(&self, st: &TrilinearStencil) -> Rgba;
}

struct MaskClassifier<'a> {
    scene: &'a Scene<'a>,
}

impl Classifier for MaskClassifier<'_> {
    #[inline]
    fn classify(&self, st: &TrilinearStencil) -> Rgba {
        let s = self.scene;
        let raw = s
            .raw_tf
            .eval(st.interpolate(|i| f64::from(s.raw.values()[i])));
        let m = s.tf.lookup(s.mask.sample_stencil(st), s.options.tf_lookup);
        blend(m, raw, &s.weights)
    }
}

struct RawClassifier<'a> {
    raw: &'a RawVolume,
    raw_tf: &'a RawTransferFunction,
}

impl Classifier for RawClassifier<'_> {
    #[inline]
    fn classify(&self, st: &TrilinearStencil) -> Rgba {
        self.raw_tf
            .eval(st.interpolate(|i| f64::from(self.raw.values()[i])))
    }
}

struct Marcher<'a, C> {
    dims: GridDims,
    classifier: C,
    gradients: Option<&'a GradientField>,
    ids: Option<(&'a SegmentationVolume, &'a IdGate)>,
    options: RenderOptions,
    skip: SkipGrid,
}

struct RayResult {
    color: [f64; 4],
    id: u32,
    group: u32,
}

impl<C: Classifier> Marcher<'_, C> {
    /// Front-to-back compositing along one ray. Without `COLOR` the march
    /// stops at the first recorded instance and skips shading.
    #[inline]
    fn march<const COLOR: bool>(&self, eye: Vec3, dir: Vec3) -> RayResult {
        let mut out = RayResult {
            color: [0.0; 4],
            id: 0,
            group: 0,
        };
        let [mut cr, mut cg, mut cb, mut ca] = [0.0f64; 4];
        let (t0, t1) = intersect_box(eye, dir, self.dims.extent()).unwrap_or((0.0, -1.0));
        let step = self.dims.min_spacing() * self.options.step_factor;
        let n = if t1 >= t0 {
            ((t1 - t0) / step).ceil() as usize
        } else {
            0
        };
        let light = math::scale(dir, -1.0);
        for i in 0..n {
            let t = t0 + (i as f64 + 0.5) * step;
            if t > t1 {
                break;
            }
            let p = math::add(eye, math::scale(dir, t));
            if self.skip.skips(p) {
                continue;
            }
            let Some(st) = TrilinearStencil::new(&self.dims, p) else {
                continue;
            };
            let s = self.classifier.classify(&st);
            let a = s.a();
            if a <= 0.0 {
                continue;
            }
            if let Some((seg, gate)) = self.ids {
                if out.id == 0 && a >= self.options.id_threshold {
                    if let Some(v) = self.dims.nearest_voxel(p) {
                        let id = seg.ids()[v];
                        if let Some(g) = gate.group(id) {
                            out.id = id;
                            out.group = g;
                            if !COLOR {
                                break;
                            }
                        }
                    }
                }
            }
            if COLOR {
                let mut shade = 1.0;
                if let (true, Some(gf)) = (self.options.shading, self.gradients) {
                    if let Some(nrm) = math::normalize(gf.sample(&st)) {
                        shade = math::dot(nrm, light).abs().max(self.options.ambient);
                    }
                }
                let w = (1.0 - ca) * a;
                cr += w * s.r() * shade;
                cg += w * s.g() * shade;
                cb += w * s.b() * shade;
            }
            ca += (1.0 - ca) * a;
            if ca >= self.options.early_termination {
                break;
            }
        }
        if COLOR {
            let bg = self.options.background;
            let rest = (1.0 - ca) * bg.a();
            out.color = [
                cr + rest * bg.r(),
                cg + rest * bg.g(),
                cb + rest * bg.b(),
                ca + rest,
            ];
        }
        out
    }

    fn run<const COLOR: bool>(&self, camera: &Camera) -> Result<Buffers> {
        let rays = camera.ray_gen()?;
        let (w, h) = (camera.width as usize, camera.height as usize);
        let mut color = vec![[0.0; 4]; if COLOR { w * h } else { 0 }];
        let mut ids = vec![0u32; w * h];
        let mut groups = vec![0u32; w * h];
        let rows: Vec<Vec<RayResult>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| self.march::<COLOR>(rays.eye(), rays.direction(x as u32, y as u32)))
                    .collect()
            })
            .collect();
        for (y, row) in rows.into_iter().enumerate() {
            for (x, r) in row.into_iter().enumerate() {
                let i = y * w + x;
                if COLOR {
                    color[i] = r.color;
                }
                ids[i] = r.id;
                groups[i] = r.group;
            }
        }
        Ok((color, ids, groups))
    }
}

fn check_scene(scene: &Scene<'_>) -> Result<()> {
    scene.weights.validate()?;
    scene.options.validate()?;
    let shape = scene.raw.dims.shape();
    if scene.seg.dims.shape() != shape || scene.mask.dims.shape() != shape {
        return Err(Error::DimsMismatch {
            raw: shape,
            seg: scene.seg.dims.shape(),
        });
    }
    Ok(())
}

fn mask_marcher<'a>(scene: &'a Scene<'a>) -> Marcher<'a, MaskClassifier<'a>> {
    Marcher {
        dims: scene.raw.dims,
        classifier: MaskClassifier { scene },
        gradients: scene.gradients,
        ids: Some((scene.seg, scene.gate)),
        options: scene.options,
        skip: SkipGrid::build(
            &scene.raw.dims,
            scene.raw,
            scene.raw_tf,
            Some(scene.mask),
            Some(&scene.weights),
        ),
    }
}

/// Color image and ID buffer of `scene` seen through `camera`.
pub fn render_frame(scene: &Scene<'_>, camera: &Camera) -> Result<FrameSet> {
    check_scene(scene)?;
    let (color, ids, groups) = mask_marcher(scene).run::<true>(camera)?;
    Ok(FrameSet {
        width: camera.width,
        height: camera.height,
        color,
        id: IdBuffer {
            width: camera.width,
            height: camera.height,
            ids,
            groups,
            epoch: scene.epoch,
            camera_hash: camera.hash64(),
        },
    })
}

/// The ID buffer of [`render_frame`] without the color work.
pub fn render_id_only(scene: &Scene<'_>, camera: &Camera) -> Result<IdBuffer> {
    check_scene(scene)?;
    let (_, ids, groups) = mask_marcher(scene).run::<false>(camera)?;
    Ok(IdBuffer {
        width: camera.width,
        height: camera.height,
        ids,
        groups,
        epoch: scene.epoch,
        camera_hash: camera.hash64(),
    })
}

/// Plain raw-data rendering that never reads a mask or segmentation. The ID
/// buffer is empty.
pub fn render_raw_only(
    raw: &RawVolume,
    gradients: Option<&GradientField>,
    raw_tf: &RawTransferFunction,
    options: &RenderOptions,
    camera: &Camera,
) -> Result<FrameSet> {
    options.validate()?;
    let marcher = Marcher {
        dims: raw.dims,
        classifier: RawClassifier { raw, raw_tf },
        gradients,
        ids: None,
        options: *options,
        skip: SkipGrid::build(&raw.dims, raw, raw_tf, None, None),
    };
    let (color, ids, groups) = marcher.run::<true>(camera)?;
    Ok(FrameSet {
        width: camera.width,
        height: camera.height,
        color,
        id: IdBuffer {
            width: camera.width,
            height: camera.height,
            ids,
            groups,
            epoch: 0,
            camera_hash: camera.hash64(),
        },
    })
}
