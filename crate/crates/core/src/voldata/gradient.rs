use rayon::prelude::*;

use super::{GridDims, RawVolume, TrilinearStencil};
use crate::math::Vec3;

/// World-space gradient of a raw volume, one vector per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub dims: GridDims,
    grad: Vec<[f32; 3]>,
    max_magnitude: f64,
}

impl GradientField {
    pub fn grad(&self) -> &[[f32; 3]] {
        &self.grad
    }

    #[inline]
    pub fn at(&self, index: usize) -> Vec3 {
        self.grad[index].map(f64::from)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    /// Trilinearly interpolated gradient at a world position inside the box.
    #[inline]
    pub fn sample(&self, stencil: &TrilinearStencil) -> Vec3 {
        [0, 1, 2].map(|a| stencil.interpolate(|i| f64::from(self.grad[i][a])))
    }
}

/// Central differences divided by `2 * spacing`; one-sided first differences
/// on boundary voxels. Axes with a single voxel have zero derivative.
pub fn compute_gradients(raw: &RawVolume) -> GradientField {
    let dims = raw.dims;
    let v = raw.values();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let strides = [1, nx, nx * ny];
    let shape = [nx, ny, nz];
    let grad: Vec<[f32; 3]> = (0..dims.len())
        .into_par_iter()
        .map(|i| {
            let c = dims.coords(i);
            let mut g = [0f32; 3];
            for a in 0..3 {
                let n = shape[a];
                if n < 2 {
                    continue;
                }
                let s = strides[a];
                let h = dims.spacing[a];
                let d = if c[a] == 0 {
                    (f64::from(v[i + s]) - f64::from(v[i])) / h
                } else if c[a] == n - 1 {
                    (f64::from(v[i]) - f64::from(v[i - s])) / h
                } else {
                    (f64::from(v[i + s]) - f64::from(v[i - s])) / (2.0 * h)
                };
                g[a] = d as f32;
            }
            g
        })
        .collect();
    let max_magnitude = grad
        .iter()
        .map(|g| g.map(f64::from))
        .map(crate::math::norm)
        .fold(0.0, f64::max);
    GradientField {
        dims,
        grad,
        max_magnitude,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ramp(nx: usize) -> RawVolume {
        let d = GridDims::new([nx, 3, 2], [1.0; 3]).unwrap();
        let vals = (0..d.len())
            .map(|i| d.coords(i)[0] as f32 / (nx - 1) as f32)
            .collect();
        RawVolume::new(d, vals).unwrap()
    }

    #[test]
    fn constant_volume_has_zero_gradient() {
        let d = GridDims::cube(4).unwrap();
        let raw = RawVolume::new(d, vec![0.3; d.len()]).unwrap();
        let g = compute_gradients(&raw);
        assert!(g.grad().iter().all(|v| *v == [0.0; 3]));
        assert_eq!(g.max_magnitude(), 0.0);
    }

    #[test]
    fn linear_ramp_interior() {
        let raw = ramp(5);
        let g = compute_gradients(&raw);
        let d = raw.dims;
        for i in 0..d.len() {
            let v = g.at(i);
            assert!((v[0] - 0.25).abs() < 1e-6, "{v:?}");
            assert_eq!(v[1], 0.0);
            assert_eq!(v[2], 0.0);
        }
        assert!((g.max_magnitude() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn random_volume_matches_scalar_oracle() {
        let d = GridDims::new([8, 8, 8], [1.0, 0.5, 2.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f32> = (0..d.len()).map(|_| rng.gen::<f32>()).collect();
        let raw = RawVolume::new(d, vals.clone()).unwrap();
        let g = compute_gradients(&raw);
        let at = |x: i64, y: i64, z: i64| -> f64 {
            vals[d.index(x as usize, y as usize, z as usize)] as f64
        };
        for z in 0..8i64 {
            for y in 0..8i64 {
                for x in 0..8i64 {
                    let p = [x, y, z];
                    let mut want = [0.0; 3];
                    for a in 0..3 {
                        let mut lo = p;
                        let mut hi = p;
                        if p[a] > 0 {
                            lo[a] -= 1;
                        }
                        if p[a] < 7 {
                            hi[a] += 1;
                        }
                        let steps = (hi[a] - lo[a]) as f64;
                        want[a] = (at(hi[0], hi[1], hi[2]) - at(lo[0], lo[1], lo[2]))
                            / (steps * d.spacing[a]);
                    }
                    let got = g.at(d.index(x as usize, y as usize, z as usize));
                    for a in 0..3 {
                        assert!((got[a] - want[a]).abs() < 1e-5, "{p:?} {got:?} {want:?}");
                    }
                }
            }
        }
    }
}
