//! Synthetic head phantoms built from nested axis-aligned ellipsoidal shells,
//! with paired T1/T2-like intensity volumes.
//!
//! Plain-text spec grammar (`#` starts a comment, blank lines ignored):
//!
//! ```text
//! dims = 64 64 64
//! voxel_mm = 1
//! seed = 7
//! intensity.<id> = <t1 mean> <t2 mean> <noise std>   # id 0 is air
//! shell.<j>.tissue = <id>                             # j = 0 is outermost
//! shell.<j>.semi_axes = <ax> <ay> <az>                # mm
//! shell.<j>.center = <cx> <cy> <cz>                   # mm
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::conductor::{assign_uniform, normalize_conductor, tissue, NormParams, TissueTable};
use crate::error::{Error, Result};
use crate::grid::{normalize_mri, Dims, LabelGrid, ScalarGrid, DEFAULT_VOXEL_MM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell {
    pub tissue: u16,
    pub semi_axes_mm: [f64; 3],
    pub center_mm: [f64; 3],
}

impl Shell {
    /// Quadratic form `sum(((p - c) / a)^2)`; `<= 1` inside.
    pub fn level(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| {
                let t = (p[i] - self.center_mm[i]) / self.semi_axes_mm[i];
                t * t
            })
            .sum()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }

    /// Sampled check that this ellipsoid lies strictly inside `outer`.
    fn inside(&self, outer: &Shell) -> bool {
        const N_THETA: usize = 48;
        const N_PHI: usize = 96;
        for i in 0..=N_THETA {
            let theta = std::f64::consts::PI * i as f64 / N_THETA as f64;
            for j in 0..N_PHI {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / N_PHI as f64;
                let dir = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                let p = [
                    self.center_mm[0] + self.semi_axes_mm[0] * dir[0],
                    self.center_mm[1] + self.semi_axes_mm[1] * dir[1],
                    self.center_mm[2] + self.semi_axes_mm[2] * dir[2],
                ];
                if outer.level(p) >= 1.0 {
                    return false;
                }
            }
        }
        true
    }
}

/// Mean T1 and T2 intensity of one tissue plus Gaussian noise std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensity {
    pub t1: f64,
    pub t2: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub voxel_mm: f64,
    /// Outermost first.
    pub shells: Vec<Shell>,
    /// Keyed by tissue id; id 0 is air.
    pub intensities: BTreeMap<u16, Intensity>,
    pub seed: u64,
}

/// Default tissue intensities, loosely modeled on T1/T2 contrast.
const HEAD_INTENSITY: [(u16, f64, f64, f64); 8] = [
    (tissue::AIR, 0.00, 0.00, 0.02),
    (tissue::SKIN, 0.55, 0.60, 0.03),
    (tissue::FAT, 0.95, 0.75, 0.03),
    (tissue::BONE_CORTICAL, 0.05, 0.05, 0.02),
    (tissue::BONE_CANCELLOUS, 0.60, 0.35, 0.03),
    (tissue::CSF, 0.15, 1.00, 0.03),
    (tissue::GM, 0.45, 0.55, 0.03),
    (tissue::WM, 0.72, 0.38, 0.03),
];

/// Shell semi-axes (mm) at 64-voxel scale, outermost first.
const HEAD_SHELLS: [(u16, [f64; 3]); 7] = [
    (tissue::SKIN, [28.0, 26.0, 29.0]),
    (tissue::FAT, [26.0, 24.0, 27.0]),
    (tissue::BONE_CORTICAL, [24.5, 22.5, 25.5]),
    (tissue::BONE_CANCELLOUS, [23.0, 21.0, 24.0]),
    (tissue::CSF, [21.0, 19.0, 22.0]),
    (tissue::GM, [19.0, 17.0, 20.0]),
    (tissue::WM, [15.0, 13.0, 16.0]),
];

impl PhantomSpec {
    /// Desk-scale head on an `n`-voxel cube. `seed` drives both a small
    /// subject-to-subject jitter of the shell geometry and the noise.
    pub fn head(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        let scale = n as f64 / 64.0;
        let mid = n as f64 / 2.0 * DEFAULT_VOXEL_MM;
        let center = [
            mid + rng.random_range(-1.5..1.5) * scale,
            mid + rng.random_range(-1.5..1.5) * scale,
            mid + rng.random_range(-1.5..1.5) * scale,
        ];
        let stretch: [f64; 3] = [
            rng.random_range(0.94..1.04),
            rng.random_range(0.94..1.04),
            rng.random_range(0.94..1.04),
        ];
        let shells = HEAD_SHELLS
            .iter()
            .map(|&(id, axes)| Shell {
                tissue: id,
                semi_axes_mm: [
                    axes[0] * scale * stretch[0],
                    axes[1] * scale * stretch[1],
                    axes[2] * scale * stretch[2],
                ],
                center_mm: center,
            })
            .collect();
        let intensities = HEAD_INTENSITY
            .iter()
            .map(|&(id, t1, t2, noise)| (id, Intensity { t1, t2, noise }))
            .collect();
        Self {
            dims: Dims::cube(n),
            voxel_mm: DEFAULT_VOXEL_MM,
            shells,
            intensities,
            seed,
        }
    }

    pub fn without_noise(mut self) -> Self {
        for v in self.intensities.values_mut() {
            v.noise = 0.0;
        }
        self
    }

    pub fn validate(&self, table: &TissueTable) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Config("phantom dims must be positive".into()));
        }
        if !(self.voxel_mm.is_finite() && self.voxel_mm > 0.0) {
            return Err(Error::Config(format!("voxel size {}", self.voxel_mm)));
        }
        if self.shells.is_empty() {
            return Err(Error::Config("phantom has no shells".into()));
        }
        let mut seen = Vec::new();
        for s in &self.shells {
            if s.tissue == tissue::AIR || !table.contains(s.tissue) {
                return Err(Error::UnknownTissue(s.tissue));
            }
            if seen.contains(&s.tissue) {
                return Err(Error::Config(format!("tissue {} used by two shells", s.tissue)));
            }
            seen.push(s.tissue);
            if s.semi_axes_mm.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
                return Err(Error::Config(format!("shell {} has a non-positive semi-axis", s.tissue)));
            }
            if !self.intensities.contains_key(&s.tissue) {
                return Err(Error::Config(format!("no intensity for tissue {}", s.tissue)));
            }
        }
        for (j, w) in self.shells.windows(2).enumerate() {
            if !w[1].inside(&w[0]) {
                return Err(Error::Config(format!(
                    "shell {} is not strictly inside shell {j}",
                    j + 1
                )));
            }
        }
        for (id, v) in &self.intensities {
            if !(v.noise >= 0.0 && v.noise.is_finite() && v.t1.is_finite() && v.t2.is_finite()) {
                return Err(Error::Config(format!("bad intensity for tissue {id}")));
            }
        }
        Ok(())
    }

    /// Innermost shell containing the point, or air.
    pub fn label_at(&self, p: [f64; 3]) -> u16 {
        self.shells
            .iter()
            .rev()
            .find(|s| s.contains(p))
            .map_or(tissue::AIR, |s| s.tissue)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let d = self.dims;
        let _ = writeln!(out, "dims = {} {} {}", d.nx, d.ny, d.nz);
        let _ = writeln!(out, "voxel_mm = {}", self.voxel_mm);
        let _ = writeln!(out, "seed = {}", self.seed);
        for (id, v) in &self.intensities {
            let _ = writeln!(out, "intensity.{id} = {} {} {}", v.t1, v.t2, v.noise);
        }
        for (j, s) in self.shells.iter().enumerate() {
            let [ax, ay, az] = s.semi_axes_mm;
            let [cx, cy, cz] = s.center_mm;
            let _ = writeln!(out, "shell.{j}.tissue = {}", s.tissue);
            let _ = writeln!(out, "shell.{j}.semi_axes = {ax} {ay} {az}");
            let _ = writeln!(out, "shell.{j}.center = {cx} {cy} {cz}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dims = None;
        let mut voxel_mm = DEFAULT_VOXEL_MM;
        let mut seed = 0u64;
        let mut intensities = BTreeMap::new();
        let mut shells: BTreeMap<usize, (Option<u16>, Option<[f64; 3]>, Option<[f64; 3]>)> = BTreeMap::new();

        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let nums = || -> Result<Vec<f64>> {
                value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::parse(n, format!("bad number `{t}`"))))
                    .collect()
            };
            let triple = || -> Result<[f64; 3]> {
                let v = nums()?;
                <[f64; 3]>::try_from(v).map_err(|_| Error::parse(n, "expected three numbers"))
            };
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["dims"] => {
                    let v: Vec<usize> = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| Error::parse(n, format!("bad dim `{t}`"))))
                        .collect::<Result<_>>()?;
                    if v.len() != 3 {
                        return Err(Error::parse(n, "dims needs three integers"));
                    }
                    dims = Some(Dims::new(v[0], v[1], v[2]));
                }
                ["voxel_mm"] => {
                    voxel_mm = value.parse().map_err(|_| Error::parse(n, "bad voxel_mm"))?;
                }
                ["seed"] => {
                    seed = value.parse().map_err(|_| Error::parse(n, "bad seed"))?;
                }
                ["intensity", id] => {
                    let id: u16 = id.parse().map_err(|_| Error::parse(n, "bad tissue id"))?;
                    let v = triple()?;
                    intensities.insert(
                        id,
                        Intensity {
                            t1: v[0],
                            t2: v[1],
                            noise: v[2],
                        },
                    );
                }
                ["shell", j, field] => {
                    let j: usize = j.parse().map_err(|_| Error::parse(n, "bad shell index"))?;
                    let entry = shells.entry(j).or_default();
                    match *field {
                        "tissue" => entry.0 = Some(value.parse().map_err(|_| Error::parse(n, "bad tissue id"))?),
                        "semi_axes" => entry.1 = Some(triple()?),
                        "center" => entry.2 = Some(triple()?),
                        other => return Err(Error::parse(n, format!("unknown shell field `{other}`"))),
                    }
                }
                _ => return Err(Error::parse(n, format!("unknown key `{key}`"))),
            }
        }

        let dims = dims.ok_or_else(|| Error::Config("phantom spec lacks `dims`".into()))?;
        let mut out_shells = Vec::with_capacity(shells.len());
        for (expect, (j, (t, a, c))) in shells.into_iter().enumerate() {
            if j != expect {
                return Err(Error::Config(format!("shell indices must be contiguous, missing {expect}")));
            }
            let missing = |what: &str| Error::Config(format!("shell {j} lacks `{what}`"));
            out_shells.push(Shell {
                tissue: t.ok_or_else(|| missing("tissue"))?,
                semi_axes_mm: a.ok_or_else(|| missing("semi_axes"))?,
                center_mm: c.ok_or_else(|| missing("center"))?,
            });
        }
        intensities.entry(tissue::AIR).or_insert(Intensity {
            t1: 0.0,
            t2: 0.0,
            noise: 0.0,
        });
        Ok(Self {
            dims,
            voxel_mm,
            shells: out_shells,
            intensities,
            seed,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Labels plus raw (unnormalized) intensity volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub labels: LabelGrid,
    pub t1: ScalarGrid,
    pub t2: ScalarGrid,
}

pub fn generate_phantom(spec: &PhantomSpec, table: &TissueTable) -> Result<Phantom> {
    spec.validate(table)?;
    let d = spec.dims;
    let mut labels = Vec::with_capacity(d.len());
    let mut t1 = Vec::with_capacity(d.len());
    let mut t2 = Vec::with_capacity(d.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.voxel_mm;
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let p = [(x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h];
                let id = spec.label_at(p);
                let inten = spec
                    .intensities
                    .get(&id)
                    .ok_or_else(|| Error::Config(format!("no intensity for tissue {id}")))?;
                // Two draws per voxel regardless of noise level keep streams aligned.
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                labels.push(id);
                t1.push((inten.t1 + inten.noise * n1) as f32);
                t2.push((inten.t2 + inten.noise * n2) as f32);
            }
        }
    }
    Ok(Phantom {
        labels: LabelGrid::from_vec(d, h, labels)?,
        t1: ScalarGrid::from_vec(d, h, t1)?,
        t2: ScalarGrid::from_vec(d, h, t2)?,
    })
}

/// One subject: normalized inputs and one normalized target per table.
#[derive(Debug, Clone)]
pub struct Sample {
    pub labels: LabelGrid,
    pub t1: ScalarGrid,
    pub t2: ScalarGrid,
    pub targets: Vec<ScalarGrid>,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
    pub tables: Vec<TissueTable>,
    pub norms: Vec<NormParams>,
}

impl TrainingSet {
    pub fn dims(&self) -> Dims {
        self.samples[0].t1.dims()
    }
}

/// Builds paired (T1, T2, normalized uniform conductor) samples.
pub fn phantom_dataset(specs: &[PhantomSpec], tables: &[TissueTable], tau: f64) -> Result<TrainingSet> {
    if specs.is_empty() {
        return Err(Error::Config("phantom dataset needs at least one spec".into()));
    }
    if tables.is_empty() {
        return Err(Error::Config("phantom dataset needs at least one tissue table".into()));
    }
    let norms = tables
        .iter()
        .map(|t| NormParams::for_table(t, tau))
        .collect::<Result<Vec<_>>>()?;
    let samples = specs
        .iter()
        .map(|spec| {
            let ph = generate_phantom(spec, &tables[0])?;
            let targets = tables
                .iter()
                .zip(&norms)
                .map(|(t, p)| normalize_conductor(&assign_uniform(&ph.labels, t)?, p))
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample {
                t1: normalize_mri(&ph.t1)?,
                t2: normalize_mri(&ph.t2)?,
                labels: ph.labels,
                targets,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let d = samples[0].t1.dims();
    if samples.iter().any(|s| s.t1.dims() != d) {
        return Err(Error::DimensionMismatch("phantoms of a dataset must share dims".into()));
    }
    Ok(TrainingSet {
        samples,
        tables: tables.to_vec(),
        norms,
    })
}
