//! Homogeneous conducting sphere in a uniform `dB/dt` along z. The exact
//! solution has `ψ = 0` and `|E| = r_cyl |dB/dt| / 2` for any σ.

use crate::error::Result;
use crate::grid::{Dims, ScalarGrid, VectorGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFixture {
    pub n: usize,
    pub voxel_mm: f64,
    pub radius_mm: f64,
    pub sigma: f32,
    /// T/s along z.
    pub db_dt: f64,
}

impl Default for SphereFixture {
    fn default() -> Self {
        Self { n: 64, voxel_mm: 1.0, radius_mm: 24.0, sigma: 0.3, db_dt: 1.0 }
    }
}

/// Worst relative `|E|` errors over voxels with `r_cyl < 0.8 R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereErrors {
    /// Every conducting voxel in the cylinder, including the stair-stepped
    /// surface layer near the poles.
    pub cylinder_max: f64,
    /// Voxels that also lie within `0.8 R` of the center.
    pub interior_max: f64,
    pub voxels: usize,
}

impl SphereFixture {
    pub fn dims(&self) -> Dims {
        Dims::cube(self.n)
    }

    fn center_mm(&self) -> f64 {
        0.5 * self.n as f64 * self.voxel_mm
    }

    /// Offset of a voxel center from the sphere center, mm.
    fn offset(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let c = self.center_mm();
        let h = self.voxel_mm;
        [(x as f64 + 0.5) * h - c, (y as f64 + 0.5) * h - c, (z as f64 + 0.5) * h - c]
    }

    pub fn inside(&self, x: usize, y: usize, z: usize) -> bool {
        let p = self.offset(x, y, z);
        p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= self.radius_mm * self.radius_mm
    }

    pub fn conductivity(&self) -> Result<ScalarGrid> {
        ScalarGrid::from_fn(self.dims(), self.voxel_mm, |x, y, z| if self.inside(x, y, z) { self.sigma } else { 0.0 })
    }

    /// `dA/dt = (dB/dt / 2)(-y, x, 0)` in V/m.
    pub fn da_dt(&self) -> Result<VectorGrid> {
        VectorGrid::from_fn(self.dims(), self.voxel_mm, |x, y, z| {
            let p = self.offset(x, y, z);
            let s = 0.5 * self.db_dt * 1e-3;
            [(-s * p[1]) as f32, (s * p[0]) as f32, 0.0]
        })
    }

    /// Analytic `|E|` at a voxel center, V/m.
    pub fn exact_magnitude(&self, x: usize, y: usize, z: usize) -> f64 {
        let p = self.offset(x, y, z);
        0.5 * (p[0] * p[0] + p[1] * p[1]).sqrt() * 1e-3 * self.db_dt.abs()
    }

    pub fn errors(&self, magnitude: &ScalarGrid) -> SphereErrors {
        let d = self.dims();
        let limit = 0.8 * self.radius_mm;
        let mut out = SphereErrors { cylinder_max: 0.0, interior_max: 0.0, voxels: 0 };
        for idx in 0..d.len() {
            let (x, y, z) = d.coords(idx);
            if !self.inside(x, y, z) {
                continue;
            }
            let p = self.offset(x, y, z);
            let rc = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if rc >= limit {
                continue;
            }
            let exact = self.exact_magnitude(x, y, z);
            let e = (magnitude.data()[idx] as f64 - exact).abs() / exact;
            out.voxels += 1;
            out.cylinder_max = out.cylinder_max.max(e);
            if (rc * rc + p[2] * p[2]).sqrt() < limit {
                out.interior_max = out.interior_max.max(e);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_symmetric() {
        let f = SphereFixture { n: 8, radius_mm: 3.0, ..Default::default() };
        let c = f.conductivity().unwrap();
        assert_eq!(c.get(3, 3, 3), 0.3);
        assert_eq!(c.get(0, 0, 0), 0.0);
        assert_eq!(c.get(1, 3, 4), c.get(6, 4, 3));
        let a = f.da_dt().unwrap();
        let v = a.get(7, 3, 0);
        assert!((v[1] as f64 - 0.5 * 3.5e-3).abs() < 1e-9 && v[2] == 0.0);
        assert!((f.exact_magnitude(7, 3, 0) - 0.5 * (3.5f64.powi(2) + 0.25).sqrt() * 1e-3).abs() < 1e-15);
    }
}
