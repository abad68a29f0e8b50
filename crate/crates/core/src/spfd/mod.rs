//! Scalar-potential finite differences for `div(σ grad ψ) = -div(σ dA/dt)`.
//!
//! Potentials live on voxel corners (nodes), conductivities on voxel
//! centers. The edge between two neighboring nodes has conductance
//! `h * mean(σ)` over the four voxels sharing that edge, with voxels outside
//! the grid counted as air. Kirchhoff's current law at every node gives the
//! symmetric system `S ψ = b` with
//!
//! ```text
//! (S ψ)_n = Σ_e G_e (ψ_n - ψ_m)
//! b_n     = h² Σ_e ±(σ dA/dt)_e      (+ toward the neighbor in +axis)
//! ```
//!
//! where `(σ dA/dt)_e` is the four-voxel mean of `σ_v` times the voxel's
//! `dA/dt` component along the edge. Nodes with no conducting neighbor get an
//! identity row and ψ = 0.

mod field;
mod multigrid;
mod sphere;

pub use field::electric_field;
pub use multigrid::{solve, SolveConfig, SolveStats, Solution};
pub use sphere::{SphereErrors, SphereFixture};

use crate::error::{Error, Result};
use crate::grid::{Dims, ScalarGrid, VectorGrid};
use crate::par;

/// Symmetric node-graph Laplacian on a structured grid of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOperator {
    nodes: Dims,
    /// Conductance of the edge from node `n` to its +x neighbor (0 on the last plane).
    gx: Vec<f64>,
    gy: Vec<f64>,
    gz: Vec<f64>,
    diag: Vec<f64>,
}

impl NodeOperator {
    pub fn from_conductances(nodes: Dims, gx: Vec<f64>, gy: Vec<f64>, gz: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        if gx.len() != n || gy.len() != n || gz.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "conductance arrays for {nodes} nodes"
            )));
        }
        if gx.iter().chain(&gy).chain(&gz).any(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidValue("edge conductances must be finite and non-negative".into()));
        }
        let mut op = Self {
            nodes,
            gx,
            gy,
            gz,
            diag: Vec::new(),
        };
        op.clear_boundary_edges();
        op.diag = (0..n).map(|i| op.row_sum(i)).collect();
        Ok(op)
    }

    fn clear_boundary_edges(&mut self) {
        let d = self.nodes;
        for idx in 0..d.len() {
            let (i, j, k) = d.coords(idx);
            if i + 1 == d.nx {
                self.gx[idx] = 0.0;
            }
            if j + 1 == d.ny {
                self.gy[idx] = 0.0;
            }
            if k + 1 == d.nz {
                self.gz[idx] = 0.0;
            }
        }
    }

    fn row_sum(&self, idx: usize) -> f64 {
        self.neighbors(idx).map(|(_, g)| g).sum()
    }

    pub fn nodes(&self) -> Dims {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn gz(&self) -> &[f64] {
        &self.gz
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.diag[idx] > 0.0
    }

    /// Neighbors of a node with their edge conductances (zero-conductance
    /// edges included).
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let d = self.nodes;
        let (i, j, k) = d.coords(idx);
        let sx = 1;
        let sy = d.nx;
        let sz = d.nx * d.ny;
        let cand = [
            (i + 1 < d.nx).then(|| (idx + sx, self.gx[idx])),
            (i > 0).then(|| (idx - sx, self.gx[idx - sx])),
            (j + 1 < d.ny).then(|| (idx + sy, self.gy[idx])),
            (j > 0).then(|| (idx - sy, self.gy[idx - sy])),
            (k + 1 < d.nz).then(|| (idx + sz, self.gz[idx])),
            (k > 0).then(|| (idx - sz, self.gz[idx - sz])),
        ];
        cand.into_iter().flatten()
    }

    /// Off-diagonal coupling `Σ G ψ_m` of one node.
    #[inline]
    fn gather(&self, psi: &[f64], i: usize, j: usize, k: usize, idx: usize) -> f64 {
        let d = self.nodes;
        let sy = d.nx;
        let sz = d.nx * d.ny;
        let mut s = 0.0;
        if i + 1 < d.nx {
            s += self.gx[idx] * psi[idx + 1];
        }
        if i > 0 {
            s += self.gx[idx - 1] * psi[idx - 1];
        }
        if j + 1 < d.ny {
            s += self.gy[idx] * psi[idx + sy];
        }
        if j > 0 {
            s += self.gy[idx - sy] * psi[idx - sy];
        }
        if k + 1 < d.nz {
            s += self.gz[idx] * psi[idx + sz];
        }
        if k > 0 {
            s += self.gz[idx - sz] * psi[idx - sz];
        }
        s
    }

    /// `out = S psi`. Inactive rows act as identity.
    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let d = self.nodes;
        let plane = d.nx * d.ny;
        let mut out = vec![0.0; d.len()];
        par::for_each_chunk(&mut out, plane, |k, chunk| {
            for j in 0..d.ny {
                for i in 0..d.nx {
                    let idx = d.index(i, j, k);
                    let v = if self.diag[idx] > 0.0 {
                        self.diag[idx] * psi[idx] - self.gather(psi, i, j, k, idx)
                    } else {
                        psi[idx]
                    };
                    chunk[i + d.nx * j] = v;
                }
            }
        });
        out
    }

    /// `b - S psi`.
    pub fn residual(&self, b: &[f64], psi: &[f64]) -> Vec<f64> {
        let mut r = self.apply(psi);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r
    }

    /// One red-black SOR sweep (red = even `i + j + k` first).
    pub fn sor_sweep(&self, b: &[f64], psi: &mut Vec<f64>, omega: f64) -> Result<()> {
        if !(omega > 0.0 && omega < 2.0) {
            return Err(Error::Config(format!("SOR factor {omega} outside (0, 2)")));
        }
        if let Some(idx) = (0..self.len()).find(|&i| self.diag[i] == 0.0 && b[i] != 0.0) {
            return Err(Error::Singular(format!("zero diagonal at source-carrying node {idx}")));
        }
        let mut scratch = vec![0.0; psi.len()];
        self.sweep_with(b, psi, &mut scratch, omega);
        Ok(())
    }

    pub(crate) fn sweep_with(&self, b: &[f64], psi: &mut Vec<f64>, scratch: &mut Vec<f64>, omega: f64) {
        for color in 0..2 {
            self.half_sweep(b, psi, scratch, omega, color);
            std::mem::swap(psi, scratch);
        }
    }

    /// Writes into `next` the current iterate with nodes of one color relaxed.
    fn half_sweep(&self, b: &[f64], psi: &[f64], next: &mut [f64], omega: f64, color: usize) {
        let d = self.nodes;
        let plane = d.nx * d.ny;
        par::for_each_chunk(next, plane, |k, chunk| {
            for j in 0..d.ny {
                for i in 0..d.nx {
                    let local = i + d.nx * j;
                    let idx = local + plane * k;
                    let diag = self.diag[idx];
                    chunk[local] = if (i + j + k) % 2 == color {
                        if diag > 0.0 {
                            let gs = (b[idx] + self.gather(psi, i, j, k, idx)) / diag;
                            (1.0 - omega) * psi[idx] + omega * gs
                        } else {
                            0.0
                        }
                    } else {
                        psi[idx]
                    };
                }
            }
        });
    }
}

/// Discrete system assembled from a conductor and a `dA/dt` field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpfdSystem {
    voxels: Dims,
    voxel_mm: f64,
    op: NodeOperator,
    b: Vec<f64>,
}

impl SpfdSystem {
    pub fn new(voxels: Dims, voxel_mm: f64, op: NodeOperator, b: Vec<f64>) -> Result<Self> {
        let nodes = node_dims(voxels);
        if op.nodes() != nodes || b.len() != nodes.len() {
            return Err(Error::DimensionMismatch(format!(
                "system for {voxels} voxels needs {nodes} nodes"
            )));
        }
        Ok(Self {
            voxels,
            voxel_mm,
            op,
            b,
        })
    }

    pub fn voxels(&self) -> Dims {
        self.voxels
    }

    pub fn nodes(&self) -> Dims {
        self.op.nodes()
    }

    pub fn voxel_mm(&self) -> f64 {
        self.voxel_mm
    }

    pub fn operator(&self) -> &NodeOperator {
        &self.op
    }

    pub fn source(&self) -> &[f64] {
        &self.b
    }

    pub fn with_source(&self, b: Vec<f64>) -> Result<Self> {
        Self::new(self.voxels, self.voxel_mm, self.op.clone(), b)
    }

    /// Net current leaving each node, `(S ψ - b)_n`; zero at convergence.
    pub fn net_current(&self, psi: &[f64]) -> Vec<f64> {
        self.op.residual(&self.b, psi).into_iter().map(|r| -r).collect()
    }
}

pub fn node_dims(voxels: Dims) -> Dims {
    Dims::new(voxels.nx + 1, voxels.ny + 1, voxels.nz + 1)
}

/// Builds the SPFD system. Distances in meters, σ in S/m, dA/dt in V/m.
pub fn assemble(cond: &ScalarGrid, da_dt: &VectorGrid) -> Result<SpfdSystem> {
    cond.ensure_dims(da_dt, "assemble")?;
    if let Some(v) = cond.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidValue(format!("negative conductivity {v}")));
    }
    let vd = cond.dims();
    let nd = node_dims(vd);
    let h = cond.voxel_mm() * 1e-3;
    let sigma = |x: isize, y: isize, z: isize| -> f64 {
        if x < 0 || y < 0 || z < 0 || x as usize >= vd.nx || y as usize >= vd.ny || z as usize >= vd.nz {
            0.0
        } else {
            cond.data()[vd.index(x as usize, y as usize, z as usize)] as f64
        }
    };
    let flux = |x: isize, y: isize, z: isize, axis: usize| -> f64 {
        if x < 0 || y < 0 || z < 0 || x as usize >= vd.nx || y as usize >= vd.ny || z as usize >= vd.nz {
            0.0
        } else {
            let idx = vd.index(x as usize, y as usize, z as usize);
            cond.data()[idx] as f64 * da_dt.data()[idx][axis] as f64
        }
    };

    let n = nd.len();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut gz = vec![0.0; n];
    // (σ dA/dt) edge means, same layout as the conductances.
    let mut sx = vec![0.0; n];
    let mut sy = vec![0.0; n];
    let mut sz = vec![0.0; n];
    for k in 0..nd.nz {
        for j in 0..nd.ny {
            for i in 0..nd.nx {
                let idx = nd.index(i, j, k);
                let (i, j, k) = (i as isize, j as isize, k as isize);
                if (i as usize) < vd.nx {
                    let vox = [(i, j - 1, k - 1), (i, j, k - 1), (i, j - 1, k), (i, j, k)];
                    gx[idx] = h * vox.iter().map(|&(a, b, c)| sigma(a, b, c)).sum::<f64>() / 4.0;
                    sx[idx] = vox.iter().map(|&(a, b, c)| flux(a, b, c, 0)).sum::<f64>() / 4.0;
                }
                if (j as usize) < vd.ny {
                    let vox = [(i - 1, j, k - 1), (i, j, k - 1), (i - 1, j, k), (i, j, k)];
                    gy[idx] = h * vox.iter().map(|&(a, b, c)| sigma(a, b, c)).sum::<f64>() / 4.0;
                    sy[idx] = vox.iter().map(|&(a, b, c)| flux(a, b, c, 1)).sum::<f64>() / 4.0;
                }
                if (k as usize) < vd.nz {
                    let vox = [(i - 1, j - 1, k), (i, j - 1, k), (i - 1, j, k), (i, j, k)];
                    gz[idx] = h * vox.iter().map(|&(a, b, c)| sigma(a, b, c)).sum::<f64>() / 4.0;
                    sz[idx] = vox.iter().map(|&(a, b, c)| flux(a, b, c, 2)).sum::<f64>() / 4.0;
                }
            }
        }
    }

    let h2 = h * h;
    let mut b = vec![0.0; n];
    let (px, py, pz) = (1, nd.nx, nd.nx * nd.ny);
    for k in 0..nd.nz {
        for j in 0..nd.ny {
            for i in 0..nd.nx {
                let idx = nd.index(i, j, k);
                let mut s = sx[idx] + sy[idx] + sz[idx];
                if i > 0 {
                    s -= sx[idx - px];
                }
                if j > 0 {
                    s -= sy[idx - py];
                }
                if k > 0 {
                    s -= sz[idx - pz];
                }
                b[idx] = h2 * s;
            }
        }
    }
    let op = NodeOperator::from_conductances(nd, gx, gy, gz)?;
    SpfdSystem::new(vd, cond.voxel_mm(), op, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_air_is_empty() {
        let cond = ScalarGrid::zeros(Dims::cube(3));
        let a = VectorGrid::filled(Dims::cube(3), 1.0, [1.0, 2.0, 3.0]).unwrap();
        let s = assemble(&cond, &a).unwrap();
        assert!(s.operator().diag().iter().all(|&d| d == 0.0));
        assert!(s.source().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn uniform_field_has_no_interior_source() {
        let d = Dims::cube(4);
        let cond = ScalarGrid::filled(d, 1.0, 0.3).unwrap();
        let a = VectorGrid::filled(d, 1.0, [0.5, -1.0, 2.0]).unwrap();
        let s = assemble(&cond, &a).unwrap();
        let nd = s.nodes();
        for k in 1..nd.nz - 1 {
            for j in 1..nd.ny - 1 {
                for i in 1..nd.nx - 1 {
                    assert!(s.source()[nd.index(i, j, k)].abs() < 1e-18);
                }
            }
        }
        assert!(s.source().iter().any(|b| b.abs() > 0.0));
    }

    #[test]
    fn edge_conductance_is_four_voxel_mean() {
        let d = Dims::cube(2);
        let cond = ScalarGrid::from_vec(d, 2.0, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let s = assemble(&cond, &VectorGrid::zeros(d)).unwrap();
        let nd = s.nodes();
        // x-edge at node (0,1,1) touches all four voxels with x = 0.
        let g = s.operator().gx()[nd.index(0, 1, 1)];
        let h = 2e-3;
        assert!((g - h * (1.0 + 3.0 + 5.0 + 7.0) / 4.0).abs() < 1e-15);
        // Corner edge touches one voxel.
        let g = s.operator().gx()[nd.index(0, 0, 0)];
        assert!((g - h * 1.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn negative_conductivity_is_rejected() {
        let d = Dims::cube(2);
        let mut v = vec![0.1; 8];
        v[5] = -0.1;
        let cond = ScalarGrid::from_vec(d, 1.0, v).unwrap();
        assert!(assemble(&cond, &VectorGrid::zeros(d)).is_err());
    }

    #[test]
    fn sor_rejects_bad_omega() {
        let cond = ScalarGrid::filled(Dims::cube(2), 1.0, 1.0).unwrap();
        let s = assemble(&cond, &VectorGrid::zeros(Dims::cube(2))).unwrap();
        let mut psi = vec![0.0; s.nodes().len()];
        assert!(s.operator().sor_sweep(s.source(), &mut psi, 2.0).is_err());
        assert!(s.operator().sor_sweep(s.source(), &mut psi, 0.0).is_err());
    }
}
