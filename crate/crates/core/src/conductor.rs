//! Tissue conductivity tables and the normalized-conductor chain: uniform
//! assignment, scaling into `[0, 1 - tau]`, three-direction averaging and
//! denormalization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, ScalarGrid};
use crate::metrics::RegionMask;

/// Tissue identifiers of the shipped tables. 0 is air.
pub mod tissue {
    pub const AIR: u16 = 0;
    pub const BLOOD: u16 = 1;
    pub const BONE_CANCELLOUS: u16 = 2;
    pub const BONE_CORTICAL: u16 = 3;
    pub const CEREBELLUM: u16 = 4;
    pub const CSF: u16 = 5;
    pub const DURA: u16 = 6;
    pub const FAT: u16 = 7;
    pub const GM: u16 = 8;
    pub const MUCOUS: u16 = 9;
    pub const MUSCLE: u16 = 10;
    pub const SKIN: u16 = 11;
    pub const VITREOUS_HUMOR: u16 = 12;
    pub const WM: u16 = 13;
}

// (id, name, Cole-Cole 10 kHz, typical computational value) in S/m.
const TISSUES: [(u16, &str, f64, f64); 13] = [
    (tissue::BLOOD, "Blood", 0.700, 0.700),
    (tissue::BONE_CANCELLOUS, "BoneCancellous", 0.080, 0.025),
    (tissue::BONE_CORTICAL, "BoneCortical", 0.020, 0.007),
    (tissue::CEREBELLUM, "Cerebellum", 0.130, 0.276),
    (tissue::CSF, "CSF", 2.000, 1.654),
    (tissue::DURA, "Dura", 0.500, 0.500),
    (tissue::FAT, "Fat", 0.040, 0.040),
    (tissue::GM, "GM", 0.100, 0.276),
    (tissue::MUCOUS, "MucousTissue", 0.070, 0.070),
    (tissue::MUSCLE, "Muscle", 0.340, 0.400),
    (tissue::SKIN, "Skin", 0.100, 0.456),
    (tissue::VITREOUS_HUMOR, "VitreousHumor", 1.500, 1.500),
    (tissue::WM, "WM", 0.070, 0.126),
];

pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tissue {
    pub id: u16,
    pub name: String,
    /// Conductivity in S/m.
    pub sigma: f64,
}

/// Ordered map from tissue id to conductivity. Air is implicit (σ = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TissueTable {
    tag: String,
    entries: Vec<Tissue>,
}

impl TissueTable {
    pub fn new(tag: impl Into<String>, mut entries: Vec<Tissue>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("tissue table has no entries".into()));
        }
        entries.sort_by_key(|t| t.id);
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Config(format!("duplicate tissue id {}", w[0].id)));
            }
        }
        for t in &entries {
            if t.id == tissue::AIR {
                return Err(Error::Config("id 0 is reserved for air".into()));
            }
            if !(t.sigma.is_finite() && t.sigma > 0.0) {
                return Err(Error::Config(format!("tissue {} has σ = {}", t.name, t.sigma)));
            }
        }
        Ok(Self {
            tag: tag.into(),
            entries,
        })
    }

    fn shipped(tag: &str, column: impl Fn(&(u16, &str, f64, f64)) -> f64) -> Self {
        let entries = TISSUES
            .iter()
            .map(|t| Tissue {
                id: t.0,
                name: t.1.to_string(),
                sigma: column(t),
            })
            .collect();
        Self::new(tag, entries).expect("shipped table is valid")
    }

    /// Cole-Cole model values at 10 kHz.
    pub fn cole_cole_a() -> Self {
        Self::shipped("ColeCole-10kHz-A", |t| t.2)
    }

    /// Typical values from computational studies.
    pub fn typical_b() -> Self {
        Self::shipped("Typical-B", |t| t.3)
    }

    /// `"A"` or `"B"`.
    pub fn by_letter(letter: &str) -> Result<Self> {
        match letter {
            "A" | "a" => Ok(Self::cole_cole_a()),
            "B" | "b" => Ok(Self::typical_b()),
            other => Err(Error::InvalidValue(format!("unknown table `{other}`, expected A or B"))),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn entries(&self) -> &[Tissue] {
        &self.entries
    }

    pub fn get(&self, id: u16) -> Option<&Tissue> {
        self.entries
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn sigma(&self, id: u16) -> Option<f64> {
        self.get(id).map(|t| t.sigma)
    }

    pub fn contains(&self, id: u16) -> bool {
        self.get(id).is_some()
    }

    pub fn id_of(&self, name: &str) -> Option<u16> {
        self.entries.iter().find(|t| t.name == name).map(|t| t.id)
    }

    pub fn sigma_max(&self) -> f64 {
        self.entries.iter().map(|t| t.sigma).fold(0.0, f64::max)
    }

    /// Plain-text form: optional `# table: <tag>` line, then `id name sigma`.
    pub fn to_text(&self) -> String {
        let mut out = format!("# table: {}\n", self.tag);
        for t in &self.entries {
            let _ = writeln!(out, "{} {} {}", t.id, t.name, t.sigma);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tag = String::from("custom");
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(t) = rest.trim().strip_prefix("table:") {
                    tag = t.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::parse(i + 1, "expected `id name sigma`"));
            }
            let id = fields[0]
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad id `{}`", fields[0])))?;
            let sigma = fields[2]
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad sigma `{}`", fields[2])))?;
            entries.push(Tissue {
                id,
                name: fields[1].to_string(),
                sigma,
            });
        }
        Self::new(tag, entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Scaling parameters of the normalized conductor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub tau: f64,
    pub sigma_max: f64,
}

impl NormParams {
    pub fn new(tau: f64, sigma_max: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
        }
        if !(sigma_max.is_finite() && sigma_max > 0.0) {
            return Err(Error::Config(format!("sigma_max must be positive, got {sigma_max}")));
        }
        Ok(Self { tau, sigma_max })
    }

    pub fn for_table(table: &TissueTable, tau: f64) -> Result<Self> {
        Self::new(tau, table.sigma_max())
    }

    /// Multiplier from S/m to normalized units.
    pub fn scale(&self) -> f64 {
        (1.0 - self.tau) / self.sigma_max
    }
}

pub fn assign_uniform(labels: &LabelGrid, table: &TissueTable) -> Result<ScalarGrid> {
    let mut lut = vec![None; u16::MAX as usize + 1];
    lut[tissue::AIR as usize] = Some(0.0f32);
    for t in table.entries() {
        lut[t.id as usize] = Some(t.sigma as f32);
    }
    let data = labels
        .data()
        .iter()
        .map(|&id| lut[id as usize].ok_or(Error::UnknownTissue(id)))
        .collect::<Result<Vec<_>>>()?;
    labels.with_data(data)
}

pub fn normalize_conductor(cond: &ScalarGrid, p: &NormParams) -> Result<ScalarGrid> {
    // f32 storage of σ_max itself may round up by half an ulp.
    let limit = p.sigma_max * (1.0 + 1e-6);
    let scale = p.scale();
    let data = cond
        .data()
        .iter()
        .map(|&v| {
            let v = v as f64;
            if v < 0.0 || v > limit {
                Err(Error::InvalidValue(format!(
                    "conductivity {v} outside [0, {}]",
                    p.sigma_max
                )))
            } else {
                Ok((v * scale) as f32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    cond.with_data(data)
}

/// Voxelwise mean of the axial, sagittal and coronal estimates. Values are
/// summed in sorted order, so the result does not depend on argument order.
pub fn average_directions(a: &ScalarGrid, s: &ScalarGrid, c: &ScalarGrid) -> Result<ScalarGrid> {
    a.ensure_dims(s, "average_directions")?;
    a.ensure_dims(c, "average_directions")?;
    let data = a
        .data()
        .iter()
        .zip(s.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| {
            let mut v = [x as f64, y as f64, z as f64];
            v.sort_by(f64::total_cmp);
            ((v[0] + v[1] + v[2]) / 3.0) as f32
        })
        .collect();
    a.with_data(data)
}

pub fn denormalize(normalized: &ScalarGrid, p: &NormParams) -> Result<ScalarGrid> {
    let scale = p.sigma_max / (1.0 - p.tau);
    let data = normalized
        .data()
        .iter()
        .map(|&v| {
            if v < 0.0 {
                Err(Error::InvalidValue(format!("negative normalized value {v}")))
            } else {
                Ok((v as f64 * scale) as f32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    normalized.with_data(data)
}

/// Order statistics of conductivity inside a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Midpoint quantile: mean of the two order statistics bracketing `(n-1)q`.
fn quantile_midpoint(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    0.5 * (sorted[lo] + sorted[hi])
}

pub fn roi_conductivity_stats(cond: &ScalarGrid, region: &RegionMask) -> Result<RoiStats> {
    if region.dims() != cond.dims() {
        return Err(Error::DimensionMismatch(format!(
            "region {} vs conductor {}",
            region.dims(),
            cond.dims()
        )));
    }
    let mut values: Vec<f64> = region.indices().map(|i| cond.data()[i] as f64).collect();
    if values.is_empty() {
        return Err(Error::EmptyRegion(region.name().to_string()));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(RoiStats {
        count: values.len(),
        mean,
        std: var.sqrt(),
        min: values[0],
        q1: quantile_midpoint(&values, 0.25),
        median: quantile_midpoint(&values, 0.5),
        q3: quantile_midpoint(&values, 0.75),
        max: values[values.len() - 1],
    })
}
