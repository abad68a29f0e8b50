use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, VectorGrid};
use crate::par;

use super::node_dims;

/// `E = -grad ψ - dA/dt` at voxel centers, plus `|E|`. The gradient along
/// each axis averages the four voxel edges parallel to it. Air voxels get
/// `E = 0`.
pub fn electric_field(potential: &[f64], da_dt: &VectorGrid, cond: &ScalarGrid) -> Result<(VectorGrid, ScalarGrid)> {
    cond.ensure_dims(da_dt, "electric_field")?;
    let vd = cond.dims();
    let nd = node_dims(vd);
    if potential.len() != nd.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} potentials for {} voxels ({} nodes)",
            potential.len(),
            vd,
            nd
        )));
    }
    let inv_h = 1.0 / (cond.voxel_mm() * 1e-3);
    let p = |i: usize, j: usize, k: usize| potential[nd.index(i, j, k)];
    let values = par::map_range(vd.len(), |idx| {
        if cond.data()[idx] <= 0.0 {
            return [0.0f32; 3];
        }
        let (i, j, k) = vd.coords(idx);
        let mut gx = 0.0;
        let mut gy = 0.0;
        let mut gz = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                gx += p(i + 1, j + a, k + b) - p(i, j + a, k + b);
                gy += p(i + a, j + 1, k + b) - p(i + a, j, k + b);
                gz += p(i + a, j + b, k + 1) - p(i + a, j + b, k);
            }
        }
        let a = da_dt.data()[idx];
        [
            (-0.25 * gx * inv_h - a[0] as f64) as f32,
            (-0.25 * gy * inv_h - a[1] as f64) as f32,
            (-0.25 * gz * inv_h - a[2] as f64) as f32,
        ]
    });
    let magnitude = values
        .iter()
        .map(|e| {
            let (x, y, z) = (e[0] as f64, e[1] as f64, e[2] as f64);
            (x * x + y * y + z * z).sqrt() as f32
        })
        .collect();
    Ok((cond.with_data(values)?, cond.with_data(magnitude)?))
}
