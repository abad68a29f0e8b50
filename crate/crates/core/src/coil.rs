//! Thin-wire figure-eight coil and its magnetic vector potential.
//!
//! Each straight segment from `a` to `b` contributes
//! `mu0 / (4 pi) * I * u * ln((Ra + Rb + L) / (Ra + Rb - L))`, with `u` the
//! unit direction, `L` the length and `Ra`, `Rb` the distances from the
//! evaluation point to the endpoints. The log is evaluated as
//! `2 atanh(L / (Ra + Rb))`, which stays accurate far from the segment.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Dims, VectorGrid};
use crate::par;

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * PI;
/// Placeholder current slope of a stimulator at full output, A/s.
pub const DEFAULT_DIDT: f64 = 6.7e7;
pub const OUTER_DIAMETER_MM: f64 = 97.0;
pub const INNER_DIAMETER_MM: f64 = 47.0;
/// Stimulation frequency the conductivities refer to.
pub const FREQUENCY_HZ: f64 = 10.0e3;

/// Closest points to a wire closer than this are treated as on the wire.
const SINGULAR_MM: f64 = 1e-6;

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// One closed polyline; current flows in point order and returns from the
/// last point to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct WireLoop {
    pub points: Vec<Vec3>,
    /// Circulation about the coil normal: +1 counter-clockwise, -1 clockwise.
    pub orientation: i8,
}

impl WireLoop {
    pub fn segments(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn length_mm(&self) -> f64 {
        self.segments().map(|(a, b)| norm(sub(b, a))).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WirePath {
    pub loops: Vec<WireLoop>,
}

impl WirePath {
    pub fn new(loops: Vec<WireLoop>) -> Result<Self> {
        for l in &loops {
            if l.points.len() < 3 {
                return Err(Error::Config("a wire loop needs at least three points".into()));
            }
            if l.points.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::Config("non-finite wire point".into()));
            }
            if l.segments().any(|(a, b)| norm(sub(b, a)) == 0.0) {
                return Err(Error::Config("zero-length wire segment".into()));
            }
        }
        Ok(Self { loops })
    }

    /// A regular polygon approximating a circle, counter-clockwise about `normal`.
    pub fn circle(center: Vec3, normal: Vec3, radius_mm: f64, segments: usize) -> Result<Self> {
        let (_, e1, e2) = frame(normal, 0.0)?;
        let points = (0..segments)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / segments as f64;
                add(center, add(scale(e1, radius_mm * t.cos()), scale(e2, radius_mm * t.sin())))
            })
            .collect();
        Self::new(vec![WireLoop {
            points,
            orientation: 1,
        }])
    }

    pub fn length_mm(&self) -> f64 {
        self.loops.iter().map(WireLoop::length_mm).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        self.loops.iter().flat_map(WireLoop::segments)
    }
}

/// Right-handed frame `(n, e1, e2)` with `e1` rotated by `angle` about `n`.
fn frame(normal: Vec3, angle: f64) -> Result<(Vec3, Vec3, Vec3)> {
    let len = norm(normal);
    if !(len.is_finite() && len > 1e-12) {
        return Err(Error::Config("coil normal must be non-zero".into()));
    }
    let n = scale(normal, 1.0 / len);
    let reference = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e0 = sub(reference, scale(n, dot(reference, n)));
    let e0 = scale(e0, 1.0 / norm(e0));
    let f0 = cross(n, e0);
    let e1 = add(scale(e0, angle.cos()), scale(f0, angle.sin()));
    let e2 = cross(n, e1);
    Ok((n, e1, e2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilPlacement {
    /// Scalp point below the coil center, mm.
    pub scalp_point_mm: Vec3,
    /// Points away from the head.
    pub normal: Vec3,
    /// Rotation of the loop axis about the normal, radians.
    pub angle_rad: f64,
    pub standoff_mm: f64,
}

impl CoilPlacement {
    /// Coil facing +z over the highest `mask` voxel of the middle column,
    /// `standoff_mm` above that voxel's top face.
    pub fn above_top(mask: &[bool], dims: Dims, voxel_mm: f64, standoff_mm: f64) -> Result<Self> {
        if mask.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!("mask of {} voxels for dims {dims}", mask.len())));
        }
        let (cx, cy) = (dims.nx / 2, dims.ny / 2);
        let top = (0..dims.nz)
            .rev()
            .find(|&z| mask[dims.index(cx, cy, z)])
            .ok_or_else(|| Error::EmptyRegion("no voxel in the middle column".into()))?;
        Ok(Self {
            scalp_point_mm: [(cx as f64 + 0.5) * voxel_mm, (cy as f64 + 0.5) * voxel_mm, (top + 1) as f64 * voxel_mm],
            normal: [0.0, 0.0, 1.0],
            angle_rad: 0.0,
            standoff_mm,
        })
    }

    pub fn center_mm(&self) -> Result<Vec3> {
        let (n, _, _) = frame(self.normal, self.angle_rad)?;
        Ok(add(self.scalp_point_mm, scale(n, self.standoff_mm)))
    }
}

/// Two tangent circular loops of mean diameter `(outer + inner) / 2`, with
/// opposite circulation so both currents run along the same direction
/// through the shared center point.
pub fn build_figure_eight(
    placement: &CoilPlacement,
    outer_d_mm: f64,
    inner_d_mm: f64,
    segments_per_loop: usize,
) -> Result<WirePath> {
    if segments_per_loop < 8 {
        return Err(Error::Config(format!(
            "segments_per_loop must be at least 8, got {segments_per_loop}"
        )));
    }
    if !(outer_d_mm > 0.0 && inner_d_mm >= 0.0 && inner_d_mm <= outer_d_mm) {
        return Err(Error::Config(format!("coil diameters {outer_d_mm}/{inner_d_mm} mm")));
    }
    let (_, e1, e2) = frame(placement.normal, placement.angle_rad)?;
    let center = placement.center_mm()?;
    let r = 0.25 * (outer_d_mm + inner_d_mm);
    let ring = |side: f64| -> Vec<Vec3> {
        let c = add(center, scale(e1, side * r));
        (0..segments_per_loop)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / segments_per_loop as f64;
                add(c, add(scale(e1, -side * r * t.cos()), scale(e2, r * t.sin())))
            })
            .collect()
    };
    WirePath::new(vec![
        WireLoop {
            points: ring(1.0),
            orientation: -1,
        },
        WireLoop {
            points: ring(-1.0),
            orientation: 1,
        },
    ])
}

/// Unit-current line integral of one straight segment: `u * ln(...)`.
pub fn segment_kernel(a: Vec3, b: Vec3, point: Vec3) -> Result<Vec3> {
    let ab = sub(b, a);
    let len = norm(ab);
    let ra = norm(sub(point, a));
    let rb = norm(sub(point, b));
    let t = (dot(sub(point, a), ab) / (len * len)).clamp(0.0, 1.0);
    let closest = norm(sub(point, add(a, scale(ab, t))));
    if closest < SINGULAR_MM {
        return Err(Error::Singular(format!(
            "point {point:?} lies {closest:e} mm from a wire segment"
        )));
    }
    let weight = 2.0 * (len / (ra + rb)).atanh();
    Ok(scale(ab, weight / len))
}

/// Vector potential per ampere of wire current, T·m/A. `point` in mm.
pub fn vector_potential(wire: &WirePath, point: Vec3) -> Result<Vec3> {
    let mut acc = [0.0; 3];
    for (a, b) in wire.segments() {
        acc = add(acc, segment_kernel(a, b, point)?);
    }
    Ok(scale(acc, MU0 / (4.0 * PI)))
}

/// `dA/dt` (V/m) at every voxel center of a grid.
pub fn da_dt_field(wire: &WirePath, didt: f64, dims: Dims, voxel_mm: f64) -> Result<VectorGrid> {
    if !didt.is_finite() {
        return Err(Error::InvalidValue(format!("dI/dt = {didt}")));
    }
    let values = par::map_range(dims.len(), |i| {
        let (x, y, z) = dims.coords(i);
        let p = [
            (x as f64 + 0.5) * voxel_mm,
            (y as f64 + 0.5) * voxel_mm,
            (z as f64 + 0.5) * voxel_mm,
        ];
        vector_potential(wire, p).map(|a| [(a[0] * didt) as f32, (a[1] * didt) as f32, (a[2] * didt) as f32])
    });
    let data = values.into_iter().collect::<Result<Vec<_>>>()?;
    VectorGrid::from_vec(dims, voxel_mm, data)
}

/// Serializable coil description.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilConfig {
    pub placement: CoilPlacement,
    pub outer_d_mm: f64,
    pub inner_d_mm: f64,
    pub segments_per_loop: usize,
    pub didt: f64,
}

impl CoilConfig {
    pub fn new(placement: CoilPlacement) -> Self {
        Self {
            placement,
            outer_d_mm: OUTER_DIAMETER_MM,
            inner_d_mm: INNER_DIAMETER_MM,
            segments_per_loop: 64,
            didt: DEFAULT_DIDT,
        }
    }

    pub fn wire(&self) -> Result<WirePath> {
        build_figure_eight(&self.placement, self.outer_d_mm, self.inner_d_mm, self.segments_per_loop)
    }

    pub fn to_text(&self) -> String {
        let p = &self.placement;
        let mut out = String::new();
        let [sx, sy, sz] = p.scalp_point_mm;
        let [nx, ny, nz] = p.normal;
        let _ = writeln!(out, "scalp_point_mm = {sx} {sy} {sz}");
        let _ = writeln!(out, "normal = {nx} {ny} {nz}");
        let _ = writeln!(out, "angle_deg = {}", p.angle_rad.to_degrees());
        let _ = writeln!(out, "standoff_mm = {}", p.standoff_mm);
        let _ = writeln!(out, "outer_d_mm = {}", self.outer_d_mm);
        let _ = writeln!(out, "inner_d_mm = {}", self.inner_d_mm);
        let _ = writeln!(out, "segments = {}", self.segments_per_loop);
        let _ = writeln!(out, "didt = {:e}", self.didt);
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = CoilConfig::new(CoilPlacement {
            scalp_point_mm: [0.0; 3],
            normal: [0.0, 0.0, 1.0],
            angle_rad: 0.0,
            standoff_mm: 0.0,
        });
        let mut have_point = false;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n, "expected `key = value`"))?;
            let value = value.trim();
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(n, format!("bad number `{s}`")));
            let triple = || -> Result<Vec3> {
                let v = value.split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
                <[f64; 3]>::try_from(v).map_err(|_| Error::parse(n, "expected three numbers"))
            };
            match key.trim() {
                "scalp_point_mm" => {
                    cfg.placement.scalp_point_mm = triple()?;
                    have_point = true;
                }
                "normal" => cfg.placement.normal = triple()?,
                "angle_deg" => cfg.placement.angle_rad = num(value)?.to_radians(),
                "standoff_mm" => cfg.placement.standoff_mm = num(value)?,
                "outer_d_mm" => cfg.outer_d_mm = num(value)?,
                "inner_d_mm" => cfg.inner_d_mm = num(value)?,
                "segments" => {
                    cfg.segments_per_loop = value.parse().map_err(|_| Error::parse(n, "bad segment count"))?
                }
                "didt" => cfg.didt = num(value)?,
                other => return Err(Error::parse(n, format!("unknown key `{other}`"))),
            }
        }
        if !have_point {
            return Err(Error::Config("coil description lacks `scalp_point_mm`".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
