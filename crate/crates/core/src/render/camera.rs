use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::voldata::GridDims;

/// Perspective pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

/// Orthonormal view basis and per-pixel ray generator of a validated camera.
#[derive(Debug, Clone, Copy)]
pub struct RayGen {
    eye: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    half_h: f64,
    half_w: f64,
    width: u32,
    height: u32,
}

impl Camera {
    /// Looks at the volume center from `direction` (pointing from the center
    /// towards the eye), far enough for a 30 degree view to frame the whole
    /// box.
    pub fn framing(dims: &GridDims, direction: Vec3, width: u32, height: u32) -> Self {
        let center = dims.center();
        let dir = math::normalize(direction).unwrap_or([0.0, 0.0, 1.0]);
        let distance = 2.0 * dims.bounding_diameter();
        let up = if dir[1].abs() > 0.99 {
            [0.0, 0.0, 1.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        Camera {
            eye: math::add(center, math::scale(dir, distance)),
            target: center,
            up,
            fov_deg: 30.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ray_gen().map(|_| ())
    }

    pub fn ray_gen(&self) -> Result<RayGen> {
        let bad = |m: &str| Err(Error::DegenerateCamera(m.into()));
        if !(math::is_finite(self.eye) && math::is_finite(self.target) && math::is_finite(self.up))
        {
            return bad("non-finite vector");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("field of view must lie in (0, 180) degrees");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        let Some(forward) = math::normalize(math::sub(self.target, self.eye)) else {
            return bad("eye equals target");
        };
        let Some(right) = math::normalize(math::cross(forward, self.up)) else {
            return bad("up is parallel to the view direction");
        };
        let up = math::cross(right, forward);
        let half_h = (self.fov_deg.to_radians() / 2.0).tan();
        Ok(RayGen {
            eye: self.eye,
            forward,
            right,
            up,
            half_h,
            half_w: half_h * self.width as f64 / self.height as f64,
            width: self.width,
            height: self.height,
        })
    }

    /// Stable hash of the camera parameters.
    pub fn hash64(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self.eye.iter().chain(&self.target).chain(&self.up) {
            v.to_bits().hash(&mut h);
        }
        self.fov_deg.to_bits().hash(&mut h);
        self.width.hash(&mut h);
        self.height.hash(&mut h);
        h.finish()
    }
}

impl RayGen {
    pub fn eye(&self) -> Vec3 {
        self.eye
    }

    /// Unit direction through the center of pixel `(x, y)`; row 0 is the top.
    #[inline]
    pub fn direction(&self, x: u32, y: u32) -> Vec3 {
        let sx = (2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0) * self.half_w;
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64) * self.half_h;
        let d = math::add(
            self.forward,
            math::add(math::scale(self.right, sx), math::scale(self.up, sy)),
        );
        math::normalize(d).unwrap_or(self.forward)
    }
}

/// Entry and exit distances of a ray through the box `[0, extent]`, or
/// `None` when it misses. The entry is clamped to 0 for eyes inside the box.
pub fn intersect_box(origin: Vec3, dir: Vec3, extent: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < 0.0 || origin[a] > extent[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut near, mut far) = ((0.0 - origin[a]) * inv, (extent[a] - origin[a]) * inv);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    (t0 <= t1).then_some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera {
            eye: [0.0, 0.0, 10.0],
            target: [0.0; 3],
            up: [0.0, 1.0, 0.0],
            fov_deg: 90.0,
            width: 4,
            height: 2,
        }
    }

    #[test]
    fn rejects_degenerate() {
        let mut c = cam();
        c.target = c.eye;
        assert!(c.validate().is_err());
        let mut c = cam();
        c.up = [0.0, 0.0, 1.0];
        assert!(c.validate().is_err());
        let mut c = cam();
        c.fov_deg = 180.0;
        assert!(c.validate().is_err());
        let mut c = cam();
        c.width = 0;
        assert!(c.validate().is_err());
        assert!(cam().validate().is_ok());
    }

    #[test]
    fn rays_are_symmetric() {
        let g = cam().ray_gen().unwrap();
        let a = g.direction(0, 0);
        let b = g.direction(3, 1);
        assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
        assert!(a[2] < 0.0 && a[0] < 0.0 && a[1] > 0.0);
        assert!((math::norm(a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slab_intersection() {
        let e = [2.0, 2.0, 2.0];
        assert_eq!(
            intersect_box([1.0, 1.0, -3.0], [0.0, 0.0, 1.0], e),
            Some((3.0, 5.0))
        );
        assert_eq!(intersect_box([5.0, 1.0, -3.0], [0.0, 0.0, 1.0], e), None);
        assert_eq!(
            intersect_box([1.0, 1.0, 1.0], [1.0, 0.0, 0.0], e),
            Some((0.0, 1.0))
        );
        assert_eq!(intersect_box([1.0, 1.0, 3.0], [0.0, 0.0, 1.0], e), None);
    }

    #[test]
    fn framing_sees_the_box() {
        let dims = GridDims::cube(16).unwrap();
        let c = Camera::framing(&dims, [0.0, 1.0, 0.0], 8, 8);
        assert!(c.validate().is_ok());
        let g = c.ray_gen().unwrap();
        assert!(intersect_box(c.eye, g.direction(4, 4), dims.extent()).is_some());
        assert_ne!(c.hash64(), cam().hash64());
        assert_eq!(c.hash64(), c.hash64());
    }
}
