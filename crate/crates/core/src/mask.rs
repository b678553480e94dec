//! Visibility mask and its circular 2D transfer function.
//!
//! Each voxel stores a 2D vector: the background maps to the center of the
//! unit square and group `k` of `N` to a point on the inscribed circle.
//! Interpolating between a group and the background moves along a chord
//! towards the center, where the transfer function fades to transparent, so
//! no foreign group color appears at instance boundaries.

use std::f64::consts::TAU;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::Rgba;
use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::math::Vec3;
use crate::voldata::{GridDims, InstanceTable, SegmentationVolume, SlotLookup, TrilinearStencil};

/// Integer code of a mask component in `[0, 1]`. The scale is even so the
/// center value 0.5 has an exact code.
pub const MASK_SCALE: f64 = 254.0;
pub const CENTER_CODE: [u8; 2] = [127, 127];

pub type MaskValue = [f64; 2];

/// Mask value of group `k` among `n` groups; `k = 0` is the background.
pub fn mask_value(k: usize, n: usize) -> Result<MaskValue> {
    if k > n {
        return Err(Error::GroupOutOfRange { k, n });
    }
    if k == 0 {
        return Ok([0.5, 0.5]);
    }
    let phi = TAU * (k - 1) as f64 / n as f64;
    Ok([0.5 + 0.5 * phi.cos(), 0.5 + 0.5 * phi.sin()])
}

pub fn quantize(v: MaskValue) -> [u8; 2] {
    v.map(|c| (c.clamp(0.0, 1.0) * MASK_SCALE).round() as u8)
}

pub fn dequantize(code: [u8; 2]) -> MaskValue {
    code.map(|c| c as f64 / MASK_SCALE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    pub dims: GridDims,
    pub group_count: usize,
    codes: Vec<[u8; 2]>,
}

impl VisibilityMask {
    pub fn codes(&self) -> &[[u8; 2]] {
        &self.codes
    }

    pub fn get(&self, index: usize) -> MaskValue {
        dequantize(self.codes[index])
    }

    pub fn as_bytes(&self) -> Vec<u8> {
        self.codes.iter().flatten().copied().collect()
    }

    /// Componentwise trilinear interpolation.
    #[inline]
    pub fn sample_stencil(&self, st: &TrilinearStencil) -> MaskValue {
        [
            st.interpolate(|i| self.codes[i][0] as f64 / MASK_SCALE),
            st.interpolate(|i| self.codes[i][1] as f64 / MASK_SCALE),
        ]
    }

    /// `None` outside the volume box.
    pub fn sample(&self, p: Vec3) -> Option<MaskValue> {
        TrilinearStencil::new(&self.dims, p).map(|st| self.sample_stencil(&st))
    }

    /// Writes `<stem>.mask.u8x2` (two bytes per voxel, x fastest) and a JSON
    /// descriptor `<stem>.mask.json`; returns the descriptor path.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let payload = format!("{stem}.mask.u8x2");
        let path = dir.join(&payload);
        std::fs::write(&path, self.as_bytes()).map_err(|e| Error::io(&path, e))?;
        let desc = serde_json::json!({
            "dims": self.dims.shape(),
            "spacing": self.dims.spacing,
            "file": payload,
            "components": 2,
            "dtype": "u8",
            "scale": MASK_SCALE,
            "group_count": self.group_count,
        });
        let json_path = dir.join(format!("{stem}.mask.json"));
        let text = serde_json::to_string_pretty(&desc).map_err(|e| Error::Json {
            context: "mask descriptor".into(),
            source: e,
        })?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
        Ok(json_path)
    }
}

/// Voxels of visible instances get the value of their group, everything else
/// the background value.
pub fn build_visibility_mask(
    seg: &SegmentationVolume,
    table: &InstanceTable,
    assignment: &GroupAssignment,
) -> Result<VisibilityMask> {
    let n = assignment.group_count();
    let mut group_codes = Vec::with_capacity(n + 1);
    for k in 0..=n {
        group_codes.push(quantize(mask_value(k, n)?));
    }
    let slot_codes: Vec<[u8; 2]> = (0..table.len())
        .map(|s| {
            if table.visible()[s] {
                group_codes[assignment.group_of_slot(s) as usize]
            } else {
                CENTER_CODE
            }
        })
        .collect();
    let lookup = SlotLookup::new(table);
    let codes = seg
        .ids()
        .par_iter()
        .with_min_len(4096)
        .map(|&id| lookup.get(id).map_or(CENTER_CODE, |s| slot_codes[s]))
        .collect();
    Ok(VisibilityMask {
        dims: seg.dims,
        group_count: n,
        codes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TfLookup {
    /// Evaluate the sector/ramp rule directly.
    #[default]
    Analytic,
    /// Bilinear lookup in the rasterized texture.
    Texture,
}

pub const DEFAULT_TF_RESOLUTION: usize = 256;

/// Circular 2D transfer function. The group color is chosen by the angular
/// sector around the center and its alpha ramps linearly from 0 at the
/// center to the group alpha on the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction2D {
    colors: Vec<Rgba>,
    resolution: usize,
    texels: Vec<[f64; 4]>,
}

impl TransferFunction2D {
    /// `colors[k - 1]` is the color of group `k`.
    pub fn new(colors: Vec<Rgba>, resolution: usize) -> Result<Self> {
        if resolution < 64 {
            return Err(Error::invalid("resolution", "must be at least 64"));
        }
        if let Some(c) = colors.iter().find(|c| !c.is_valid()) {
            return Err(Error::invalid(
                "colors",
                format!("{:?} outside [0, 1]", c.0),
            ));
        }
        let mut tf = TransferFunction2D {
            colors,
            resolution,
            texels: Vec::new(),
        };
        let r = resolution as f64;
        let texels = (0..resolution * resolution)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % resolution, i / resolution);
                let u = (x as f64 + 0.5) / r;
                let v = (y as f64 + 0.5) / r;
                if (u - 0.5).hypot(v - 0.5) <= 1.0 / r {
                    [0.0; 4]
                } else {
                    // texels hold the 8-bit value a stored texture would
                    tf.analytic([u, v]).to_rgba8().map(|c| c as f64 / 255.0)
                }
            })
            .collect();
        tf.texels = texels;
        Ok(tf)
    }

    pub fn group_count(&self) -> usize {
        self.colors.len()
    }

    pub fn colors(&self) -> &[Rgba] {
        &self.colors
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Group whose sector contains `m`, or 0 at the center.
    pub fn sector(&self, m: MaskValue) -> usize {
        let n = self.colors.len();
        let (dx, dy) = (m[0] - 0.5, m[1] - 0.5);
        if n == 0 || (dx == 0.0 && dy == 0.0) {
            return 0;
        }
        let theta = dy.atan2(dx).rem_euclid(TAU);
        1 + ((theta * n as f64 / TAU).round() as usize) % n
    }

    pub fn analytic(&self, m: MaskValue) -> Rgba {
        let k = self.sector(m);
        if k == 0 {
            return Rgba::TRANSPARENT;
        }
        let r = (m[0] - 0.5).hypot(m[1] - 0.5);
        let c = self.colors[k - 1];
        Rgba([c.r(), c.g(), c.b(), c.a() * (2.0 * r).clamp(0.0, 1.0)])
    }

    pub fn texture(&self, m: MaskValue) -> Rgba {
        let res = self.resolution;
        let fx = (m[0] * res as f64 - 0.5).clamp(0.0, (res - 1) as f64);
        let fy = (m[1] * res as f64 - 0.5).clamp(0.0, (res - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(res - 1), (y0 + 1).min(res - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let t = |x: usize, y: usize| self.texels[y * res + x];
        let mut out = [0.0; 4];
        for (c, o) in out.iter_mut().enumerate() {
            let a = t(x0, y0)[c] + tx * (t(x1, y0)[c] - t(x0, y0)[c]);
            let b = t(x0, y1)[c] + tx * (t(x1, y1)[c] - t(x0, y1)[c]);
            *o = a + ty * (b - a);
        }
        Rgba(out)
    }

    #[inline]
    pub fn lookup(&self, m: MaskValue, mode: TfLookup) -> Rgba {
        match mode {
            TfLookup::Analytic => self.analytic(m),
            TfLookup::Texture => self.texture(m),
        }
    }

    /// The rasterized texture as PNG bytes, row 0 at `v = 0`.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let res = self.resolution as u32;
        let bytes: Vec<u8> = self
            .texels
            .iter()
            .flat_map(|t| Rgba(*t).to_rgba8())
            .collect();
        encode_png(res, res, bytes)
    }
}

pub(crate) fn encode_png(width: u32, height: u32, rgba: Vec<u8>) -> Result<Vec<u8>> {
    let img = image::RgbaImage::from_raw(width, height, rgba)
        .ok_or_else(|| Error::Image("buffer size does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

/// Interpolated mask value at `p` classified by `tf`; transparent outside the
/// volume.
pub fn sample_mask_classified(
    mask: &VisibilityMask,
    tf: &TransferFunction2D,
    p: Vec3,
    mode: TfLookup,
) -> Rgba {
    mask.sample(p)
        .map_or(Rgba::TRANSPARENT, |m| tf.lookup(m, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::default_color;
    use crate::voldata::{AttributeDef, AttributeKind, AttributeSchema, AttributeValue};
    use std::collections::BTreeMap;

    fn close(a: MaskValue, b: MaskValue) -> bool {
        (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
    }

    #[test]
    fn mask_values_on_the_circle() {
        assert_eq!(mask_value(0, 7).unwrap(), [0.5, 0.5]);
        assert!(close(mask_value(1, 4).unwrap(), [1.0, 0.5]));
        assert!(close(mask_value(2, 4).unwrap(), [0.5, 1.0]));
        assert!(close(mask_value(3, 4).unwrap(), [0.0, 0.5]));
        assert!(close(mask_value(4, 4).unwrap(), [0.5, 0.0]));
        assert!(matches!(
            mask_value(5, 4),
            Err(Error::GroupOutOfRange { k: 5, n: 4 })
        ));
    }

    #[test]
    fn center_code_is_exact() {
        assert_eq!(quantize([0.5, 0.5]), CENTER_CODE);
        assert_eq!(dequantize(CENTER_CODE), [0.5, 0.5]);
    }

    #[test]
    fn quantized_values_distinct() {
        for n in [1usize, 2, 16, 100, 255] {
            let mut seen = std::collections::HashSet::new();
            for k in 0..=n {
                assert!(
                    seen.insert(quantize(mask_value(k, n).unwrap())),
                    "n={n} k={k}"
                );
            }
        }
    }

    fn tf(n: usize) -> TransferFunction2D {
        TransferFunction2D::new((1..=n).map(default_color).collect(), 256).unwrap()
    }

    #[test]
    fn tf_center_rim_and_midpoint() {
        let t = tf(5);
        assert_eq!(t.analytic([0.5, 0.5]).a(), 0.0);
        assert_eq!(t.texture([0.5, 0.5]).a(), 0.0);
        for k in 1..=5 {
            let m = mask_value(k, 5).unwrap();
            assert_eq!(t.analytic(m), default_color(k));
            let tex = t.texture(m);
            for c in 0..4 {
                assert!((tex.0[c] - default_color(k).0[c]).abs() <= 2.0 / 255.0);
            }
            let mid = [(m[0] + 0.5) / 2.0, (m[1] + 0.5) / 2.0];
            let c = t.analytic(mid);
            assert_eq!(c.rgb(), default_color(k).rgb());
            assert!((c.a() - 0.5).abs() < 1e-12);
        }
        assert!(TransferFunction2D::new(vec![], 32).is_err());
    }

    #[test]
    fn chords_keep_their_hue() {
        let t = tf(9);
        for k in 1..=9 {
            let m = mask_value(k, 9).unwrap();
            for i in 1..100 {
                let l = i as f64 / 100.0;
                let p = [l * 0.5 + (1.0 - l) * m[0], l * 0.5 + (1.0 - l) * m[1]];
                assert_eq!(t.sector(p), k);
            }
        }
    }

    fn scene() -> (SegmentationVolume, InstanceTable) {
        let dims = GridDims::new([4, 1, 1], [1.0; 3]).unwrap();
        let seg = SegmentationVolume::new(dims, vec![0, 1, 2, 2]).unwrap();
        let schema = AttributeSchema::new(vec![AttributeDef {
            name: "v".into(),
            kind: AttributeKind::Scalar,
        }])
        .unwrap();
        let rows: BTreeMap<u32, Vec<AttributeValue>> = (1..=2)
            .map(|i| (i, vec![AttributeValue::Scalar(i as f64)]))
            .collect();
        (seg, InstanceTable::new(schema, rows).unwrap())
    }

    #[test]
    fn build_assigns_group_and_background() {
        let (seg, mut table) = scene();
        let a = GroupAssignment::from_groups(vec![1, 0], 1);
        let m = build_visibility_mask(&seg, &table, &a).unwrap();
        let one = quantize(mask_value(1, 1).unwrap());
        assert_eq!(m.codes(), &[CENTER_CODE, one, CENTER_CODE, CENTER_CODE]);
        table.set_visible(0, false);
        let m = build_visibility_mask(&seg, &table, &a).unwrap();
        assert!(m.codes().iter().all(|&c| c == CENTER_CODE));
    }

    #[test]
    fn boundary_sample_is_half_alpha() {
        let (seg, table) = scene();
        let a = GroupAssignment::from_groups(vec![1, 1], 1);
        let m = build_visibility_mask(&seg, &table, &a).unwrap();
        let t = tf(1);
        let c = sample_mask_classified(&m, &t, [1.0, 0.5, 0.5], TfLookup::Analytic);
        assert_eq!(c.rgb(), default_color(1).rgb());
        assert!((c.a() - 0.5).abs() < 1e-12);
        let inside = sample_mask_classified(&m, &t, [1.5, 0.5, 0.5], TfLookup::Analytic);
        assert_eq!(inside, default_color(1));
        let bg = sample_mask_classified(&m, &t, [0.2, 0.5, 0.5], TfLookup::Analytic);
        assert_eq!(bg.a(), 0.0);
        assert_eq!(
            sample_mask_classified(&m, &t, [9.0, 0.5, 0.5], TfLookup::Analytic),
            Rgba::TRANSPARENT
        );
    }

    #[test]
    fn tf_png_has_resolution() {
        let png = tf(3).to_png().unwrap();
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!((img.width(), img.height()), (256, 256));
    }
}
