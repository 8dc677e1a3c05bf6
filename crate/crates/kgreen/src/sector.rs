//! Symmetry-adapted velocity subspaces.
//!
//! The midpoint grid is invariant under reflections ξ₁ → −ξ₁, ξ₂ → −ξ₂ and the
//! swap ξ₁ ↔ ξ₂, all of which fix ξ₃. The collision operator commutes with them
//! and, for η ∥ e₃, so does the transport term. Each sector is spanned by
//! orthonormal orbit sums, so operators restrict to much smaller dense blocks.

use crate::kernels::KernelMatrixBundle;
use crate::velocity::{norm3, MacroBasis, VelocityGrid};
use faer::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SectorKind {
    /// The whole grid.
    Full,
    /// Invariant under all eight reflections/swaps (contains χ₀, χ₃, χ₄).
    Axisymmetric,
    /// Odd in ξ₁, even in ξ₂ (contains χ₁).
    ShearX,
    /// Even in ξ₁, odd in ξ₂ (contains χ₂).
    ShearY,
}

#[derive(Debug, Clone)]
pub struct Sector {
    pub kind: SectorKind,
    /// Sparse orthonormal columns: (node index, coefficient).
    pub cols: Vec<Vec<(usize, f64)>>,
    grid_len: usize,
}

type Action = fn([usize; 3], usize) -> [usize; 3];

fn id(a: [usize; 3], _: usize) -> [usize; 3] {
    a
}
fn r1(a: [usize; 3], n: usize) -> [usize; 3] {
    [n - 1 - a[0], a[1], a[2]]
}
fn r2(a: [usize; 3], n: usize) -> [usize; 3] {
    [a[0], n - 1 - a[1], a[2]]
}
fn r12(a: [usize; 3], n: usize) -> [usize; 3] {
    [n - 1 - a[0], n - 1 - a[1], a[2]]
}
fn sw(a: [usize; 3], _: usize) -> [usize; 3] {
    [a[1], a[0], a[2]]
}
fn sw1(a: [usize; 3], n: usize) -> [usize; 3] {
    sw(r1(a, n), n)
}
fn sw2(a: [usize; 3], n: usize) -> [usize; 3] {
    sw(r2(a, n), n)
}
fn sw12(a: [usize; 3], n: usize) -> [usize; 3] {
    sw(r12(a, n), n)
}

impl Sector {
    pub fn new(grid: &VelocityGrid, kind: SectorKind) -> Self {
        let len = grid.len();
        let n = grid.points_per_axis;
        let group: Vec<(Action, f64)> = match kind {
            SectorKind::Full => vec![(id, 1.0)],
            SectorKind::Axisymmetric => vec![
                (id, 1.0),
                (r1, 1.0),
                (r2, 1.0),
                (r12, 1.0),
                (sw, 1.0),
                (sw1, 1.0),
                (sw2, 1.0),
                (sw12, 1.0),
            ],
            SectorKind::ShearX => vec![(id, 1.0), (r1, -1.0), (r2, 1.0), (r12, -1.0)],
            SectorKind::ShearY => vec![(id, 1.0), (r1, 1.0), (r2, -1.0), (r12, -1.0)],
        };
        let mut seen = vec![false; len];
        let mut cols = Vec::new();
        for i in 0..len {
            if seen[i] {
                continue;
            }
            let a = grid.axis_indices(i);
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for (g, ch) in &group {
                let b = g(a, n);
                let j = grid.index(b[0], b[1], b[2]);
                seen[j] = true;
                match entries.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += ch,
                    None => entries.push((j, *ch)),
                }
            }
            entries.retain(|e| e.1.abs() > 1e-12);
            let nrm: f64 = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if nrm > 0.0 {
                entries.iter_mut().for_each(|e| e.1 /= nrm);
                entries.sort_by_key(|e| e.0);
                cols.push(entries);
            }
        }
        Self { kind, cols, grid_len: len }
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    /// Coordinates `Bᵀf` of a full-grid function.
    pub fn restrict<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        self.cols
            .iter()
            .map(|c| c.iter().fold(T::default(), |acc, &(i, b)| acc + f[i] * b))
            .collect()
    }

    /// Full-grid function `Bc`.
    pub fn lift<T>(&self, c: &[T]) -> Vec<T>
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let mut out = vec![T::default(); self.grid_len];
        for (col, &v) in self.cols.iter().zip(c) {
            for &(i, b) in col {
                out[i] = out[i] + v * b;
            }
        }
        out
    }

    /// `BᵀMB` for a full-grid matrix commuting with the symmetry group.
    pub fn reduce(&self, m: &Mat<f64>) -> Mat<f64> {
        let d = self.dim();
        // MB column by column, then Bᵀ(MB)
        let mut mb = Mat::<f64>::zeros(self.grid_len, d);
        for (b, col) in self.cols.iter().enumerate() {
            for &(j, cj) in col {
                for i in 0..self.grid_len {
                    mb[(i, b)] += m[(i, j)] * cj;
                }
            }
        }
        Mat::from_fn(d, d, |a, b| self.cols[a].iter().map(|&(i, ci)| ci * mb[(i, b)]).sum())
    }

    /// Representative node of each column.
    pub fn representative(&self, a: usize) -> usize {
        self.cols[a][0].0
    }

    /// Magnitude of the grid value carried by a unit coefficient in column `a`.
    pub fn node_scale(&self, a: usize) -> f64 {
        self.cols[a].iter().map(|e| e.1.abs()).fold(0.0, f64::max)
    }
}

/// Collision operator restricted to a sector, with the data needed by the
/// spectral and transport modules. The restricted `L` has its null space
/// pinned to the discrete collision invariants (see [`projected_l`]).
#[derive(Debug, Clone)]
pub struct ReducedSpace {
    pub sector: Sector,
    pub l: Mat<f64>,
    pub nu: Vec<f64>,
    pub xi3: Vec<f64>,
    pub speed: Vec<f64>,
    /// Uniform quadrature weight per node.
    pub w: f64,
    /// Orthonormal (in the weighted inner product) invariants lying in the sector.
    pub invariants: Vec<Vec<f64>>,
    /// Which of χ₀..χ₄ each invariant is.
    pub invariant_ids: Vec<usize>,
}

/// `P₁ L P₁` with the discrete invariants as exact null space.
pub fn projected_l(bundle: &KernelMatrixBundle, basis: &MacroBasis) -> Mat<f64> {
    let l = bundle.l_matrix();
    let n = l.nrows();
    let w = bundle.grid.weights[0];
    // P₀ = Σ χ χᵀ w; P₁LP₁ = L − P₀L − LP₀ + P₀LP₀
    let chi = Mat::from_fn(n, 5, |i, j| basis.chi[j][i] * w.sqrt());
    let lc = &l * &chi;
    let ctl = chi.transpose() * &l;
    let ctlc = chi.transpose() * &lc;
    let mut out = l.clone();
    let a = &lc * chi.transpose();
    let b = &chi * &ctl;
    let c = &chi * (&ctlc * chi.transpose());
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] += -a[(i, j)] - b[(i, j)] + c[(i, j)];
        }
    }
    // restore exact symmetry lost to rounding
    Mat::from_fn(n, n, |i, j| 0.5 * (out[(i, j)] + out[(j, i)]))
}

impl ReducedSpace {
    pub fn new(bundle: &KernelMatrixBundle, basis: &MacroBasis, kind: SectorKind) -> Self {
        let l = projected_l(bundle, basis);
        Self::from_matrix(&bundle.grid, &l, &bundle.nu, basis, kind)
    }

    pub fn from_matrix(grid: &VelocityGrid, l: &Mat<f64>, nu: &[f64], basis: &MacroBasis, kind: SectorKind) -> Self {
        let sector = Sector::new(grid, kind);
        let lr = sector.reduce(l);
        let lr = Mat::from_fn(lr.nrows(), lr.ncols(), |i, j| 0.5 * (lr[(i, j)] + lr[(j, i)]));
        let w = grid.weights[0];
        let reps: Vec<usize> = (0..sector.dim()).map(|a| sector.representative(a)).collect();
        let nu_r = reps.iter().map(|&i| nu[i]).collect();
        let xi3 = reps.iter().map(|&i| grid.nodes[i][2]).collect();
        let speed = reps.iter().map(|&i| norm3(&grid.nodes[i])).collect();
        let mut invariants = Vec::new();
        let mut ids = Vec::new();
        for (j, chi) in basis.chi.iter().enumerate() {
            let c: Vec<f64> = sector.restrict(chi);
            let nrm2: f64 = c.iter().map(|x| x * x).sum::<f64>() * w;
            if nrm2 > 0.5 {
                invariants.push(c);
                ids.push(j);
            }
        }
        Self { sector, l: lr, nu: nu_r, xi3, speed, w, invariants, invariant_ids: ids }
    }

    pub fn dim(&self) -> usize {
        self.sector.dim()
    }

    /// K restricted: L + diag(ν).
    pub fn k_matrix(&self) -> Mat<f64> {
        let mut k = self.l.clone();
        for i in 0..self.dim() {
            k[(i, i)] += self.nu[i];
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sector_dimensions_and_orthonormality() {
        let g = VelocityGrid::new(8, 6.0).unwrap();
        let full = Sector::new(&g, SectorKind::Full);
        assert_eq!(full.dim(), 512);
        let ax = Sector::new(&g, SectorKind::Axisymmetric);
        // orbits of (i, j) with i ≤ j among 4×4 positive quadrant pairs: 10 per ξ₃ layer
        assert_eq!(ax.dim(), 80);
        let sx = Sector::new(&g, SectorKind::ShearX);
        assert_eq!(sx.dim(), 128);
        for s in [&ax, &sx] {
            for a in 0..s.dim().min(20) {
                for b in 0..s.dim() {
                    let ea = s.lift(&(0..s.dim()).map(|k| if k == a { 1.0 } else { 0.0 }).collect::<Vec<f64>>());
                    let eb = s.lift(&(0..s.dim()).map(|k| if k == b { 1.0 } else { 0.0 }).collect::<Vec<f64>>());
                    let d: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
                    assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn invariants_fall_into_expected_sectors() {
        let g = VelocityGrid::new(8, 6.0).unwrap();
        let b = MacroBasis::new(&g);
        let nu = vec![1.0; g.len()];
        let l = Mat::<f64>::zeros(g.len(), g.len());
        let ax = ReducedSpace::from_matrix(&g, &l, &nu, &b, SectorKind::Axisymmetric);
        assert_eq!(ax.invariant_ids, vec![0, 3, 4]);
        let sx = ReducedSpace::from_matrix(&g, &l, &nu, &b, SectorKind::ShearX);
        assert_eq!(sx.invariant_ids, vec![1]);
        let sy = ReducedSpace::from_matrix(&g, &l, &nu, &b, SectorKind::ShearY);
        assert_eq!(sy.invariant_ids, vec![2]);
    }
}
