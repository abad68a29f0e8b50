//! Geometric multigrid V-cycles with red-black SOR smoothing.
//!
//! Coarse levels halve the voxel count per axis. Coarse edge conductances
//! come from the fine ones: the two fine edges along a coarse edge are
//! averaged and halved (series resistance of a uniform line), and the nine
//! parallel fine lines crossing the coarse dual face are summed with
//! (1, 2, 1) x (1, 2, 1) / 4 weights. Averaging instead of a true series
//! combination keeps every coarse node that touches conducting fine nodes
//! connected, so coarse problems stay consistent. Restriction is the
//! transpose of trilinear prolongation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Dims, ScalarGrid};

use super::{node_dims, NodeOperator, SpfdSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    /// Stop once `|b - Sψ| / |b|` reaches this.
    pub tol: f64,
    pub max_cycles: usize,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    /// SOR relaxation factor.
    pub omega: f64,
    /// Stop coarsening once every voxel extent is at most this.
    pub coarsest_voxels: usize,
    pub coarse_sweeps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_cycles: 50,
            pre_sweeps: 2,
            post_sweeps: 2,
            omega: 1.5,
            coarsest_voxels: 4,
            coarse_sweeps: 200,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::Config(format!("SOR factor {} outside (0, 2)", self.omega)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance {} must be positive", self.tol)));
        }
        if self.max_cycles == 0 || self.coarsest_voxels == 0 {
            return Err(Error::Config("max_cycles and coarsest_voxels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub cycles: usize,
    pub final_residual: f64,
    /// Relative residual after each cycle.
    pub history: Vec<f64>,
    pub converged: bool,
    pub levels: usize,
}

impl SolveStats {
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "levels = {}", self.levels);
        let _ = writeln!(out, "cycles = {}", self.cycles);
        let _ = writeln!(out, "converged = {}", self.converged);
        let _ = writeln!(out, "final_relative_residual = {:.3e}", self.final_residual);
        for (i, r) in self.history.iter().enumerate() {
            let _ = writeln!(out, "cycle {:>3}  residual {:.3e}", i + 1, r);
        }
        out
    }
}

/// Node potentials in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub nodes: Dims,
    pub voxel_mm: f64,
    pub potential: Vec<f64>,
    pub stats: SolveStats,
}

impl Solution {
    /// Potentials as an NVV-ready grid of node dims.
    pub fn to_grid(&self) -> Result<ScalarGrid> {
        ScalarGrid::from_vec(
            self.nodes,
            self.voxel_mm,
            self.potential.iter().map(|&v| v as f32).collect(),
        )
    }
}

struct Level {
    op: NodeOperator,
}

fn series(a: f64, b: f64) -> f64 {
    0.25 * (a + b)
}

fn coarsen(fine: &NodeOperator, fine_voxels: Dims) -> (NodeOperator, Dims) {
    let cv = Dims::new(
        fine_voxels.nx.div_ceil(2),
        fine_voxels.ny.div_ceil(2),
        fine_voxels.nz.div_ceil(2),
    );
    let cn = node_dims(cv);
    let fnd = fine.nodes();
    let at = |g: &[f64], i: isize, j: isize, k: isize| -> f64 {
        if i < 0 || j < 0 || k < 0 {
            return 0.0;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i >= fnd.nx || j >= fnd.ny || k >= fnd.nz {
            0.0
        } else {
            g[fnd.index(i, j, k)]
        }
    };
    const W: [(isize, f64); 3] = [(-1, 1.0), (0, 2.0), (1, 1.0)];
    let mut gx = vec![0.0; cn.len()];
    let mut gy = vec![0.0; cn.len()];
    let mut gz = vec![0.0; cn.len()];
    for k in 0..cn.nz {
        for j in 0..cn.ny {
            for i in 0..cn.nx {
                let c = cn.index(i, j, k);
                let (fi, fj, fk) = (2 * i as isize, 2 * j as isize, 2 * k as isize);
                let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
                for &(da, wa) in &W {
                    for &(db, wb) in &W {
                        let w = wa * wb / 4.0;
                        sx += w * series(
                            at(fine.gx(), fi, fj + da, fk + db),
                            at(fine.gx(), fi + 1, fj + da, fk + db),
                        );
                        sy += w * series(
                            at(fine.gy(), fi + da, fj, fk + db),
                            at(fine.gy(), fi + da, fj + 1, fk + db),
                        );
                        sz += w * series(
                            at(fine.gz(), fi + da, fj + db, fk),
                            at(fine.gz(), fi + da, fj + db, fk + 1),
                        );
                    }
                }
                gx[c] = sx;
                gy[c] = sy;
                gz[c] = sz;
            }
        }
    }
    let op = NodeOperator::from_conductances(cn, gx, gy, gz).expect("coarse conductances are valid");
    (op, cv)
}

/// Per-axis prolongation stencil of fine node `i`: coarse indices and weights.
fn stencil(i: usize) -> ([usize; 2], [f64; 2], usize) {
    if i % 2 == 0 {
        ([i / 2, 0], [1.0, 0.0], 1)
    } else {
        ([i / 2, i / 2 + 1], [0.5, 0.5], 2)
    }
}

fn prolong_add(fine: &NodeOperator, coarse: Dims, ec: &[f64], x: &mut [f64]) {
    let fd = fine.nodes();
    for k in 0..fd.nz {
        let (ck, wk, nk) = stencil(k);
        for j in 0..fd.ny {
            let (cj, wj, nj) = stencil(j);
            for i in 0..fd.nx {
                let idx = fd.index(i, j, k);
                if !fine.is_active(idx) {
                    continue;
                }
                let (ci, wi, ni) = stencil(i);
                let mut v = 0.0;
                for c in 0..nk {
                    for b in 0..nj {
                        for a in 0..ni {
                            v += wk[c] * wj[b] * wi[a] * ec[coarse.index(ci[a], cj[b], ck[c])];
                        }
                    }
                }
                x[idx] += v;
            }
        }
    }
}

fn restrict(fine: Dims, coarse: Dims, r: &[f64]) -> Vec<f64> {
    let mut rc = vec![0.0; coarse.len()];
    for k in 0..fine.nz {
        let (ck, wk, nk) = stencil(k);
        for j in 0..fine.ny {
            let (cj, wj, nj) = stencil(j);
            for i in 0..fine.nx {
                let v = r[fine.index(i, j, k)];
                if v == 0.0 {
                    continue;
                }
                let (ci, wi, ni) = stencil(i);
                for c in 0..nk {
                    for b in 0..nj {
                        for a in 0..ni {
                            rc[coarse.index(ci[a], cj[b], ck[c])] += wk[c] * wj[b] * wi[a] * v;
                        }
                    }
                }
            }
        }
    }
    rc
}

fn build_levels(system: &SpfdSystem, cfg: &SolveConfig) -> Vec<Level> {
    let mut levels = vec![Level {
        op: system.operator().clone(),
    }];
    let mut voxels = system.voxels();
    while voxels.nx.max(voxels.ny).max(voxels.nz) > cfg.coarsest_voxels {
        let (op, cv) = coarsen(&levels.last().unwrap().op, voxels);
        levels.push(Level { op });
        voxels = cv;
    }
    levels
}

fn vcycle(levels: &[Level], l: usize, x: &mut Vec<f64>, b: &[f64], cfg: &SolveConfig) {
    let op = &levels[l].op;
    let mut scratch = vec![0.0; x.len()];
    if l + 1 == levels.len() {
        // Singular Neumann blocks: keep the right-hand side consistent.
        let active: Vec<usize> = (0..op.len()).filter(|&i| op.is_active(i)).collect();
        let mut b = b.to_vec();
        if !active.is_empty() {
            let mean = active.iter().map(|&i| b[i]).sum::<f64>() / active.len() as f64;
            for &i in &active {
                b[i] -= mean;
            }
        }
        for _ in 0..cfg.coarse_sweeps {
            op.sweep_with(&b, x, &mut scratch, cfg.omega);
        }
        return;
    }
    for _ in 0..cfg.pre_sweeps {
        op.sweep_with(b, x, &mut scratch, cfg.omega);
    }
    let r = op.residual(b, x);
    let coarse = levels[l + 1].op.nodes();
    let rc = restrict(op.nodes(), coarse, &r);
    let mut ec = vec![0.0; coarse.len()];
    vcycle(levels, l + 1, &mut ec, &rc, cfg);
    prolong_add(op, coarse, &ec, x);
    for _ in 0..cfg.post_sweeps {
        op.sweep_with(b, x, &mut scratch, cfg.omega);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `S ψ = b` to `cfg.tol` relative residual, then shifts ψ to zero
/// mean over conducting nodes.
pub fn solve(system: &SpfdSystem, cfg: &SolveConfig) -> Result<Solution> {
    cfg.validate()?;
    let op = system.operator();
    let b = system.source();
    let n = op.len();
    let levels = build_levels(system, cfg);
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    let mut stats = SolveStats {
        cycles: 0,
        final_residual: 0.0,
        history: Vec::new(),
        converged: true,
        levels: levels.len(),
    };
    if bnorm == 0.0 {
        return Ok(Solution {
            nodes: system.nodes(),
            voxel_mm: system.voxel_mm(),
            potential: x,
            stats,
        });
    }
    stats.converged = false;
    for cycle in 1..=cfg.max_cycles {
        vcycle(&levels, 0, &mut x, b, cfg);
        let rel = norm(&op.residual(b, &x)) / bnorm;
        if !rel.is_finite() {
            return Err(Error::Diverged(format!("non-finite residual at cycle {cycle}")));
        }
        stats.history.push(rel);
        stats.cycles = cycle;
        stats.final_residual = rel;
        if rel <= cfg.tol {
            stats.converged = true;
            break;
        }
        let h = &stats.history;
        if h.len() >= 4 && h[h.len() - 4..].windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Diverged(format!(
                "residual grew for three consecutive cycles, now {rel:.3e}"
            )));
        }
    }
    let active: Vec<usize> = (0..n).filter(|&i| op.is_active(i)).collect();
    if !active.is_empty() {
        let mean = active.iter().map(|&i| x[i]).sum::<f64>() / active.len() as f64;
        for &i in &active {
            x[i] -= mean;
        }
    }
    Ok(Solution {
        nodes: system.nodes(),
        voxel_mm: system.voxel_mm(),
        potential: x,
        stats,
    })
}
