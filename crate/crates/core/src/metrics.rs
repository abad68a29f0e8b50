//! Region masks and the global-error (GE) field comparison.

use std::fmt::Write as _;

use crate::conductor::tissue;
use crate::error::{Error, Result};
use crate::grid::{Dims, LabelGrid, ScalarGrid};

/// Named boolean voxel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    name: String,
    dims: Dims,
    mask: Vec<bool>,
}

impl RegionMask {
    pub fn from_vec(name: impl Into<String>, dims: Dims, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask of {} voxels for dims {dims}",
                mask.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            dims,
            mask,
        })
    }

    /// Voxels whose label is one of `ids`.
    pub fn from_labels(name: impl Into<String>, labels: &LabelGrid, ids: &[u16]) -> Self {
        let mask = labels.data().iter().map(|l| ids.contains(l)).collect();
        Self {
            name: name.into(),
            dims: labels.dims(),
            mask,
        }
    }

    /// Non-zero voxels of a label grid, the on-disk form of a mask.
    pub fn from_label_grid(name: impl Into<String>, grid: &LabelGrid) -> Self {
        Self {
            name: name.into(),
            dims: grid.dims(),
            mask: grid.data().iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn to_label_grid(&self, voxel_mm: f64) -> Result<LabelGrid> {
        LabelGrid::from_vec(self.dims, voxel_mm, self.mask.iter().map(|&b| b as u16).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn is_disjoint(&self, other: &RegionMask) -> bool {
        self.dims == other.dims && !self.mask.iter().zip(&other.mask).any(|(&a, &b)| a && b)
    }

    pub fn intersect(&self, other: &RegionMask, name: impl Into<String>) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch("intersecting masks".into()));
        }
        let mask = self.mask.iter().zip(&other.mask).map(|(&a, &b)| a && b).collect();
        Self::from_vec(name, self.dims, mask)
    }
}

/// Voxels whose centers lie within `radius_mm` of `center_mm`.
pub fn sphere_roi(
    name: impl Into<String>,
    center_mm: [f64; 3],
    radius_mm: f64,
    dims: Dims,
    voxel_mm: f64,
) -> Result<RegionMask> {
    if !(radius_mm >= 0.0) {
        return Err(Error::InvalidValue(format!("radius {radius_mm} mm")));
    }
    let name = name.into();
    let r2 = radius_mm * radius_mm;
    let mut mask = vec![false; dims.len()];
    for z in 0..dims.nz {
        let dz = (z as f64 + 0.5) * voxel_mm - center_mm[2];
        for y in 0..dims.ny {
            let dy = (y as f64 + 0.5) * voxel_mm - center_mm[1];
            for x in 0..dims.nx {
                let dx = (x as f64 + 0.5) * voxel_mm - center_mm[0];
                if dx * dx + dy * dy + dz * dz <= r2 {
                    mask[dims.index(x, y, z)] = true;
                }
            }
        }
    }
    let roi = RegionMask::from_vec(name, dims, mask)?;
    if roi.is_empty() {
        return Err(Error::EmptyRegion(format!("sphere `{}` lies outside the grid", roi.name)));
    }
    Ok(roi)
}

/// Tissues counted as brain in phantom reports.
pub const BRAIN_TISSUES: [u16; 4] = [tissue::GM, tissue::WM, tissue::CEREBELLUM, tissue::CSF];

/// Center (mm) of the voxel with the largest `field` value inside `region`;
/// ties go to the lowest index.
pub fn peak_center(field: &ScalarGrid, region: &RegionMask) -> Result<[f64; 3]> {
    if field.dims() != region.dims() {
        return Err(Error::DimensionMismatch("peak search".into()));
    }
    let best = region
        .indices()
        .fold(None, |acc: Option<(usize, f32)>, i| match acc {
            Some((_, v)) if v >= field.data()[i] => acc,
            _ => Some((i, field.data()[i])),
        })
        .ok_or_else(|| Error::EmptyRegion(region.name().to_string()))?;
    let (x, y, z) = field.dims().coords(best.0);
    Ok(field.voxel_center(x, y, z))
}

/// Coil-side ROI (sphere of `radius_mm` around `roi_center_mm`, clipped to
/// the head), brain, non-brain and head, in that order.
pub fn phantom_regions(labels: &LabelGrid, roi_center_mm: [f64; 3], radius_mm: f64) -> Result<Vec<RegionMask>> {
    let dims = labels.dims();
    let head = RegionMask::from_vec("head", dims, labels.data().iter().map(|&l| l != tissue::AIR).collect())?;
    let brain = RegionMask::from_labels("brain", labels, &BRAIN_TISSUES);
    let non_brain = RegionMask::from_vec(
        "non-brain",
        dims,
        labels.data().iter().map(|&l| l != tissue::AIR && !BRAIN_TISSUES.contains(&l)).collect(),
    )?;
    let roi = sphere_roi("roi", roi_center_mm, radius_mm, dims, labels.voxel_mm())?.intersect(&head, "coil-roi")?;
    if roi.is_empty() {
        return Err(Error::EmptyRegion("coil-side ROI misses the head".into()));
    }
    Ok(vec![roi, brain, non_brain, head])
}

/// GE of one region. All values are percent of the region normalizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalError {
    pub ge: f64,
    /// Population standard deviation of the normalized per-voxel differences.
    pub std: f64,
    /// Largest field magnitude of either field inside the region.
    pub normalizer: f64,
    pub voxels: usize,
}

/// Mean absolute difference of two magnitude maps over `region`, divided by
/// the largest magnitude of either map in the region, in percent.
pub fn global_error(e: &ScalarGrid, e_hat: &ScalarGrid, region: &RegionMask) -> Result<GlobalError> {
    e.ensure_dims(e_hat, "global_error")?;
    if region.dims() != e.dims() {
        return Err(Error::DimensionMismatch(format!(
            "region {} vs field {}",
            region.dims(),
            e.dims()
        )));
    }
    let (a, b) = (e.data(), e_hat.data());
    let mut voxels = 0usize;
    let mut normalizer = 0.0f64;
    for i in region.indices() {
        voxels += 1;
        normalizer = normalizer.max((a[i] as f64).abs()).max((b[i] as f64).abs());
    }
    if voxels == 0 {
        return Err(Error::EmptyRegion(region.name().to_string()));
    }
    if normalizer == 0.0 {
        return Err(Error::Degenerate(format!(
            "both fields vanish in region `{}`",
            region.name()
        )));
    }
    let contrib = |i: usize| (a[i] as f64 - b[i] as f64).abs() / normalizer * 100.0;
    let n = voxels as f64;
    let ge = region.indices().map(contrib).sum::<f64>() / n;
    let var = region
        .indices()
        .map(|i| {
            let d = contrib(i) - ge;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(GlobalError {
        ge,
        std: var.sqrt(),
        normalizer,
        voxels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub region: String,
    pub error: GlobalError,
}

impl ReportRow {
    /// `mean±std` with two decimals, as in a published GE table.
    pub fn cell(&self) -> String {
        format!("{:.2}±{:.2}", self.error.ge, self.error.std)
    }
}

/// One independently normalized GE row per region.
pub fn region_report(e: &ScalarGrid, e_hat: &ScalarGrid, regions: &[RegionMask]) -> Result<Vec<ReportRow>> {
    regions
        .iter()
        .map(|r| {
            Ok(ReportRow {
                region: r.name().to_string(),
                error: global_error(e, e_hat, r)?,
            })
        })
        .collect()
}

pub fn report_text(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.region.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>14}  {:>8}\n", "region", "GE [%]", "voxels");
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>14}  {:>8}", r.region, r.cell(), r.error.voxels);
    }
    out
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("region,ge_percent,mean_percent,std_percent\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", r.region, r.error.ge, r.error.ge, r.error.std);
    }
    out
}
