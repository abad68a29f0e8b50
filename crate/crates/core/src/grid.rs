//! Voxel grid containers, slicing, and MRI intensity normalization.
//!
//! All grids store their voxels in x-fastest order: the voxel at `(x, y, z)`
//! lives at `x + nx * (y + ny * z)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default isotropic voxel edge length in millimeters.
pub const DEFAULT_VOXEL_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let yz = idx / self.nx;
        (x, yz % self.ny, yz / self.ny)
    }

    pub const fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::Axial => self.nz,
            Axis::Sagittal => self.nx,
            Axis::Coronal => self.ny,
        }
    }

    /// In-plane `(p, q)` extents of a slice taken along `axis`.
    pub const fn plane(&self, axis: Axis) -> (usize, usize) {
        match axis {
            Axis::Axial => (self.nx, self.ny),
            Axis::Sagittal => (self.ny, self.nz),
            Axis::Coronal => (self.nx, self.nz),
        }
    }

    /// Maps in-plane coordinates `(a, b)` of slice `k` back to a voxel index.
    #[inline]
    pub const fn plane_index(&self, axis: Axis, k: usize, a: usize, b: usize) -> usize {
        match axis {
            Axis::Axial => self.index(a, b, k),
            Axis::Sagittal => self.index(k, a, b),
            Axis::Coronal => self.index(a, k, b),
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Slicing direction. Axial slices hold z fixed, sagittal x, coronal y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Axial,
    Sagittal,
    Coronal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Sagittal, Axis::Coronal];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Sagittal => "sagittal",
            Axis::Coronal => "coronal",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(Axis::Axial),
            "sagittal" => Ok(Axis::Sagittal),
            "coronal" => Ok(Axis::Coronal),
            other => Err(Error::InvalidValue(format!("unknown axis `{other}`"))),
        }
    }
}

/// A value storable in a [`Grid`].
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + fmt::Debug {
    fn is_valid(&self) -> bool {
        true
    }
}

impl Voxel for f32 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

impl Voxel for u16 {}

impl Voxel for [f32; 3] {
    fn is_valid(&self) -> bool {
        self.iter().all(|c| c.is_finite())
    }
}

/// Dense 3-D voxel volume with isotropic voxel size.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    voxel_mm: f64,
    data: Vec<T>,
}

/// Real-valued volume: MRI intensity, conductivity, field magnitude.
pub type ScalarGrid = Grid<f32>;
/// Tissue identifiers; 0 is air.
pub type LabelGrid = Grid<u16>;
/// Three real components per voxel.
pub type VectorGrid = Grid<[f32; 3]>;

impl<T: Voxel> Grid<T> {
    pub fn from_vec(dims: Dims, voxel_mm: f64, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::DimensionMismatch(format!("empty grid {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} voxels for dims {dims}",
                data.len()
            )));
        }
        if !(voxel_mm.is_finite() && voxel_mm > 0.0) {
            return Err(Error::InvalidValue(format!("voxel size {voxel_mm} mm")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_valid()) {
            return Err(Error::InvalidValue(format!("non-finite voxel at index {pos}")));
        }
        Ok(Self {
            dims,
            voxel_mm,
            data,
        })
    }

    pub fn filled(dims: Dims, voxel_mm: f64, value: T) -> Result<Self> {
        Self::from_vec(dims, voxel_mm, vec![value; dims.len()])
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, DEFAULT_VOXEL_MM, T::default()).expect("non-empty dims")
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, voxel_mm: f64, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::from_vec(dims, voxel_mm, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_mm(&self) -> f64 {
        self.voxel_mm
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    /// Same geometry, new payload.
    pub fn with_data<U: Voxel>(&self, data: Vec<U>) -> Result<Grid<U>> {
        Grid::from_vec(self.dims, self.voxel_mm, data)
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Result<Grid<U>> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn same_geometry<U>(&self, other: &Grid<U>) -> bool {
        self.dims == other.dims && self.voxel_mm == other.voxel_mm
    }

    pub(crate) fn ensure_dims<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Physical position (mm) of the center of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let h = self.voxel_mm;
        [(x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h]
    }

    /// Extracts the plane `k` along `axis`.
    pub fn slice(&self, axis: Axis, k: usize) -> Result<Slice2D<T>> {
        let extent = self.dims.extent(axis);
        if k >= extent {
            return Err(Error::OutOfRange { index: k, extent });
        }
        let (p, q) = self.dims.plane(axis);
        let mut data = Vec::with_capacity(p * q);
        for b in 0..q {
            for a in 0..p {
                data.push(self.data[self.dims.plane_index(axis, k, a, b)]);
            }
        }
        Ok(Slice2D {
            axis,
            index: k,
            p,
            q,
            data,
        })
    }

    /// Writes `slice` back into its plane, in place.
    pub fn insert_slice(&mut self, slice: &Slice2D<T>) -> Result<()> {
        let extent = self.dims.extent(slice.axis);
        if slice.index >= extent {
            return Err(Error::OutOfRange {
                index: slice.index,
                extent,
            });
        }
        if self.dims.plane(slice.axis) != (slice.p, slice.q) {
            return Err(Error::DimensionMismatch(format!(
                "{} slice {}x{} into grid {}",
                slice.axis, slice.p, slice.q, self.dims
            )));
        }
        if let Some(pos) = slice.data.iter().position(|v| !v.is_valid()) {
            return Err(Error::InvalidValue(format!("non-finite slice value at {pos}")));
        }
        for b in 0..slice.q {
            for a in 0..slice.p {
                let idx = self.dims.plane_index(slice.axis, slice.index, a, b);
                self.data[idx] = slice.data[a + slice.p * b];
            }
        }
        Ok(())
    }

    /// Functional form of [`Grid::insert_slice`].
    pub fn with_slice(&self, slice: &Slice2D<T>) -> Result<Self> {
        let mut out = self.clone();
        out.insert_slice(slice)?;
        Ok(out)
    }
}

impl ScalarGrid {
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// One plane of a grid. `data` is `p * q` values, `p` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D<T> {
    pub axis: Axis,
    pub index: usize,
    pub p: usize,
    pub q: usize,
    pub data: Vec<T>,
}

impl<T: Voxel> Slice2D<T> {
    pub fn get(&self, a: usize, b: usize) -> T {
        self.data[a + self.p * b]
    }
}

/// Z-scores the volume, then min-max rescales the result to exactly `[0, 1]`.
pub fn normalize_mri(grid: &ScalarGrid) -> Result<ScalarGrid> {
    let n = grid.data.len() as f64;
    let mean = grid.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = grid
        .data
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        return Err(Error::Degenerate("constant-valued volume has zero variance".into()));
    }
    let std = var.sqrt();
    let z: Vec<f64> = grid.data.iter().map(|&v| (v as f64 - mean) / std).collect();
    let (lo, hi) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span <= 0.0 {
        return Err(Error::Degenerate("z-scored volume has zero range".into()));
    }
    grid.with_data(z.iter().map(|&v| ((v - lo) / span) as f32).collect())
}
