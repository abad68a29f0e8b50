//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each operation returns an [`Image`]: one axial slice as row-major `f32`
//! values plus a short text summary.

use neurocond::coil::{da_dt_field, CoilConfig, CoilPlacement};
use neurocond::conductor::{assign_uniform, TissueTable};
use neurocond::grid::Axis;
use neurocond::phantom::{generate_phantom, PhantomSpec};
use neurocond::spfd::{assemble, electric_field, solve, SolveConfig, SphereFixture};
use neurocond::ScalarGrid;
use wasm_bindgen::prelude::*;

const MAX_SIZE: usize = 96;

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
    summary: String,
}

#[wasm_bindgen]
impl Image {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major values, `width` per row.
    #[wasm_bindgen(getter)]
    pub fn data(&self) -> Vec<f32> {
        self.data.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

fn check_size(size: usize) -> Result<(), String> {
    if !(8..=MAX_SIZE).contains(&size) {
        return Err(format!("size {size} outside 8..={MAX_SIZE}"));
    }
    Ok(())
}

fn axial(grid: &ScalarGrid, k: usize, summary: String) -> Result<Image, String> {
    let s = grid.slice(Axis::Axial, k).map_err(|e| e.to_string())?;
    Ok(Image { width: s.p, height: s.q, data: s.data, summary })
}

/// Uniform conductivity (S/m) of a synthetic head, axial slice `k`.
pub fn phantom_image(size: usize, seed: u64, table: &str, k: usize) -> Result<Image, String> {
    check_size(size)?;
    let table = TissueTable::by_letter(table).map_err(|e| e.to_string())?;
    let ph = generate_phantom(&PhantomSpec::head(size, seed), &table).map_err(|e| e.to_string())?;
    let cond = assign_uniform(&ph.labels, &table).map_err(|e| e.to_string())?;
    let k = k.min(size - 1);
    let (lo, hi) = cond.slice(Axis::Axial, k).map_err(|e| e.to_string())?.data.iter().fold((f32::MAX, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
    axial(&cond, k, format!("table {}, slice {k}: {lo:.3} to {hi:.3} S/m", table.tag()))
}

/// |dA/dt| (V/m) of a figure-eight coil over the head phantom, on the axial
/// slice `depth_mm` below the top of the head.
pub fn coil_image(size: usize, standoff_mm: f64, angle_deg: f64, depth_mm: f64) -> Result<Image, String> {
    check_size(size)?;
    let table = TissueTable::cole_cole_a();
    let ph = generate_phantom(&PhantomSpec::head(size, 0).without_noise(), &table).map_err(|e| e.to_string())?;
    let (dims, h) = (ph.labels.dims(), ph.labels.voxel_mm());
    let head: Vec<bool> = ph.labels.data().iter().map(|&l| l != 0).collect();
    let mut placement = CoilPlacement::above_top(&head, dims, h, standoff_mm).map_err(|e| e.to_string())?;
    placement.angle_rad = angle_deg.to_radians();
    let coil = CoilConfig::new(placement);
    let field = da_dt_field(&coil.wire().map_err(|e| e.to_string())?, coil.didt, dims, h).map_err(|e| e.to_string())?;
    let mag = field.map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).map_err(|e| e.to_string())?;
    let top = placement.scalp_point_mm[2] / h;
    let k = (top - depth_mm / h - 0.5).round().clamp(0.0, (dims.nz - 1) as f64) as usize;
    let peak = mag.slice(Axis::Axial, k).map_err(|e| e.to_string())?.data.iter().copied().fold(0.0f32, f32::max);
    axial(&mag, k, format!("slice {k}, {depth_mm} mm below the scalp: peak |dA/dt| {peak:.2} V/m"))
}

/// |E| (V/m) in a homogeneous sphere under uniform dB/dt = 1 T/s, central
/// axial slice, with the solver statistics and the error against r_cyl/2.
pub fn sphere_image(size: usize, radius_mm: f64, sigma: f32) -> Result<Image, String> {
    check_size(size)?;
    if !(radius_mm > 1.0 && radius_mm < 0.5 * size as f64) || !(sigma > 0.0) {
        return Err(format!("radius {radius_mm} mm or σ {sigma} S/m out of range"));
    }
    let f = SphereFixture { n: size, radius_mm, sigma, ..SphereFixture::default() };
    let (cond, a) = (f.conductivity().map_err(|e| e.to_string())?, f.da_dt().map_err(|e| e.to_string())?);
    let sol = solve(&assemble(&cond, &a).map_err(|e| e.to_string())?, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let (_, mag) = electric_field(&sol.potential, &a, &cond).map_err(|e| e.to_string())?;
    let err = f.errors(&mag);
    axial(
        &mag,
        size / 2,
        format!(
            "{} V-cycles, residual {:.1e}; worst |E| error {:.2}% inside 0.8 R",
            sol.stats.cycles,
            sol.stats.final_residual,
            100.0 * err.interior_max
        ),
    )
}

#[wasm_bindgen(js_name = phantomSlice)]
pub fn phantom_slice(size: usize, seed: u32, table: &str, k: usize) -> Result<Image, JsError> {
    phantom_image(size, seed as u64, table, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = coilSlice)]
pub fn coil_slice(size: usize, standoff_mm: f64, angle_deg: f64, depth_mm: f64) -> Result<Image, JsError> {
    coil_image(size, standoff_mm, angle_deg, depth_mm).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sphereSolve)]
pub fn sphere_solve(size: usize, radius_mm: f64, sigma: f32) -> Result<Image, JsError> {
    sphere_image(size, radius_mm, sigma).map_err(|e| JsError::new(&e))
}
