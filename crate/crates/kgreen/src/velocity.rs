//! Uniform midpoint velocity grid, Maxwellian and the collision-invariant basis.

use crate::error::{Error, Result};
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct VelocityGrid {
    pub points_per_axis: usize,
    pub cutoff_radius: f64,
    /// Node spacing `2R/n`.
    pub h: f64,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(n: usize, r: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter(format!("points per axis n = {n} < 4")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("cutoff radius R = {r} must be positive")));
        }
        let h = 2.0 * r / n as f64;
        let axis: Vec<f64> = (0..n).map(|i| -r + (i as f64 + 0.5) * h).collect();
        let mut nodes = Vec::with_capacity(n * n * n);
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    nodes.push([a, b, c]);
                }
            }
        }
        let weights = vec![h * h * h; nodes.len()];
        Ok(Self { points_per_axis: n, cutoff_radius: r, h, nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flat index of the node with axis indices (i, j, k).
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.points_per_axis;
        (i * n + j) * n + k
    }

    pub fn axis_indices(&self, idx: usize) -> [usize; 3] {
        let n = self.points_per_axis;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    /// Index of the node −ξ.
    pub fn negated(&self, idx: usize) -> usize {
        let n = self.points_per_axis;
        let [i, j, k] = self.axis_indices(idx);
        self.index(n - 1 - i, n - 1 - j, n - 1 - k)
    }

    /// Weighted inner product `Σ w f g`.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.weights).map(|((a, b), w)| w * a * b).sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.dot(f, f).sqrt()
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    pub fn sample(&self, f: impl Fn(&[f64; 3]) -> f64) -> Vec<f64> {
        self.nodes.iter().map(f).collect()
    }

    pub fn same_as(&self, other: &VelocityGrid) -> bool {
        self.points_per_axis == other.points_per_axis && self.cutoff_radius == other.cutoff_radius
    }
}

pub fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `(2π)^{-3/2} e^{-|ξ|²/2}`.
pub fn maxwellian(xi: &[f64; 3]) -> f64 {
    let s = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    (2.0 * PI).powf(-1.5) * (-0.5 * s).exp()
}

/// Continuum collision invariants χ₀..χ₄ at a velocity.
pub fn chi_continuum(j: usize, xi: &[f64; 3]) -> f64 {
    let m = maxwellian(xi).sqrt();
    match j {
        0 => m,
        1..=3 => xi[j - 1] * m,
        4 => (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] - 3.0) * m / 6f64.sqrt(),
        _ => panic!("collision invariant index {j} out of range"),
    }
}

/// Collision invariants sampled on a grid, re-orthonormalized in the discrete
/// inner product.
#[derive(Debug, Clone)]
pub struct MacroBasis {
    pub chi: [Vec<f64>; 5],
    /// Gram matrix of the raw sampled invariants.
    pub gram: [[f64; 5]; 5],
    n: usize,
    r: f64,
}

impl MacroBasis {
    pub fn new(grid: &VelocityGrid) -> Self {
        let raw: Vec<Vec<f64>> = (0..5).map(|j| grid.sample(|x| chi_continuum(j, x))).collect();
        let mut gram = [[0.0; 5]; 5];
        for a in 0..5 {
            for b in 0..5 {
                gram[a][b] = grid.dot(&raw[a], &raw[b]);
            }
        }
        // modified Gram–Schmidt, twice for stability
        let mut q = raw.clone();
        for _ in 0..2 {
            for a in 0..5 {
                for b in 0..a {
                    let c = grid.dot(&q[a], &q[b]);
                    let qb = q[b].clone();
                    q[a].iter_mut().zip(&qb).for_each(|(x, y)| *x -= c * y);
                }
                let nrm = grid.norm(&q[a]);
                q[a].iter_mut().for_each(|x| *x /= nrm);
            }
        }
        let chi = [q[0].clone(), q[1].clone(), q[2].clone(), q[3].clone(), q[4].clone()];
        Self { chi, gram, n: grid.points_per_axis, r: grid.cutoff_radius }
    }

    fn check(&self, grid: &VelocityGrid, f: &[f64]) -> Result<()> {
        if grid.points_per_axis != self.n || grid.cutoff_radius != self.r || f.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "function of length {} against basis on n={} grid",
                f.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Moments `⟨f, χⱼ⟩`.
    pub fn moments(&self, grid: &VelocityGrid, f: &[f64]) -> [f64; 5] {
        let mut m = [0.0; 5];
        for (j, c) in self.chi.iter().enumerate() {
            m[j] = grid.dot(f, c);
        }
        m
    }

    pub fn project_p0(&self, grid: &VelocityGrid, f: &[f64]) -> Result<Vec<f64>> {
        self.check(grid, f)?;
        let m = self.moments(grid, f);
        let mut out = vec![0.0; f.len()];
        for (j, c) in self.chi.iter().enumerate() {
            out.iter_mut().zip(c).for_each(|(o, x)| *o += m[j] * x);
        }
        Ok(out)
    }

    pub fn project_p1(&self, grid: &VelocityGrid, f: &[f64]) -> Result<Vec<f64>> {
        let p0 = self.project_p0(grid, f)?;
        Ok(f.iter().zip(&p0).map(|(a, b)| a - b).collect())
    }

    /// Deviation of the raw Gram matrix from the identity (max entry).
    pub fn gram_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                let e = if a == b { 1.0 } else { 0.0 };
                d = d.max((self.gram[a][b] - e).abs());
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let g = VelocityGrid::new(8, 6.0).unwrap();
        assert_eq!(g.len(), 512);
        assert!((g.weights.iter().sum::<f64>() - 1728.0).abs() < 1e-9);
        assert!(VelocityGrid::new(2, 6.0).is_err());
        assert!(VelocityGrid::new(8, 0.0).is_err());
        for i in 0..g.len() {
            let j = g.negated(i);
            for d in 0..3 {
                assert_eq!(g.nodes[j][d], -g.nodes[i][d]);
            }
        }
    }

    #[test]
    fn maxwellian_values() {
        assert!((maxwellian(&[0.0; 3]) - 0.063_493_635_934_240_97).abs() < 1e-15);
        assert!((maxwellian(&[10.0, 0.0, 0.0]) / (0.063_493_635_934_240_97 * (-50.0f64).exp()) - 1.0).abs() < 1e-12);
        let g = VelocityGrid::new(24, 7.0).unwrap();
        assert!((g.integrate(maxwellian) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gram_converges_with_n() {
        let d: Vec<f64> = [12, 16, 24]
            .iter()
            .map(|&n| MacroBasis::new(&VelocityGrid::new(n, 6.5).unwrap()).gram_defect())
            .collect();
        // the larger grids sit at the rounding floor of the Gram matrix
        assert!(d[0] < 1e-2 && d[1] < 1e-6 && d[2] < 1e-6, "{d:?}");
    }

    #[test]
    fn projector_identities() {
        let g = VelocityGrid::new(10, 6.0).unwrap();
        let b = MacroBasis::new(&g);
        let p = b.project_p0(&g, &b.chi[1]).unwrap();
        assert!(p.iter().zip(&b.chi[1]).all(|(a, c)| (a - c).abs() < 1e-12));
        let f = g.sample(|x| x[0] * x[1] * maxwellian(x).sqrt());
        let p = b.project_p0(&g, &f).unwrap();
        assert!(g.norm(&p) < 1e-12 * g.norm(&f));
        let other = VelocityGrid::new(8, 6.0).unwrap();
        assert!(b.project_p0(&other, &other.sample(|_| 1.0)).is_err());
    }
}
