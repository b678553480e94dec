use super::GridDims;
use crate::math::Vec3;

/// The eight voxels and fractional offsets needed to trilinearly interpolate
/// a voxel field at a world position. Voxel values sit at voxel centers;
/// positions between the outermost centers and the box faces clamp to the
/// edge values.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearStencil {
    idx: [usize; 8],
    t: [f64; 3],
}

impl TrilinearStencil {
    /// `None` when `p` lies outside the volume box.
    #[inline]
    pub fn new(dims: &GridDims, p: Vec3) -> Option<Self> {
        if !dims.contains(p) {
            return None;
        }
        let shape = dims.shape();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let n = shape[a];
            let u = (p[a] / dims.spacing[a] - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n.saturating_sub(2));
            lo[a] = i0;
            hi[a] = (i0 + 1).min(n - 1);
            t[a] = if n > 1 { u - i0 as f64 } else { 0.0 };
        }
        let sx = 1;
        let sy = dims.nx;
        let sz = dims.nx * dims.ny;
        let (x0, x1) = (lo[0] * sx, hi[0] * sx);
        let (y0, y1) = (lo[1] * sy, hi[1] * sy);
        let (z0, z1) = (lo[2] * sz, hi[2] * sz);
        Some(TrilinearStencil {
            idx: [
                x0 + y0 + z0,
                x1 + y0 + z0,
                x0 + y1 + z0,
                x1 + y1 + z0,
                x0 + y0 + z1,
                x1 + y0 + z1,
                x0 + y1 + z1,
                x1 + y1 + z1,
            ],
            t,
        })
    }

    pub fn indices(&self) -> &[usize; 8] {
        &self.idx
    }

    pub fn fractions(&self) -> [f64; 3] {
        self.t
    }

    /// Interpolates `fetch(voxel)`. Uses the `a + t * (b - a)` form, so a
    /// neighbourhood of equal values reproduces that value exactly.
    #[inline]
    pub fn interpolate(&self, fetch: impl Fn(usize) -> f64) -> f64 {
        let v = self.idx.map(&fetch);
        let [tx, ty, tz] = self.t;
        let x00 = lerp(v[0], v[1], tx);
        let x10 = lerp(v[2], v[3], tx);
        let x01 = lerp(v[4], v[5], tx);
        let x11 = lerp(v[6], v[7], tx);
        lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}
