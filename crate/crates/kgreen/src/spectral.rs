//! Per-mode operator −iξ·η + L, fluid eigenpairs, dispersion fits and the
//! three-way semigroup split.

use crate::error::{Error, Result};
use crate::kernels::KernelMatrixBundle;
use crate::linalg::{expm, matvec};
use crate::sector::{ReducedSpace, SectorKind};
use crate::velocity::{MacroBasis, VelocityGrid};
use faer::{c64, Mat};
use rayon::prelude::*;
use serde::Serialize;

pub const SOUND_SPEED: f64 = 1.290_994_448_735_805_6;

#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub eta: [f64; 3],
    pub matrix: Mat<c64>,
}

impl ModeOperator {
    /// `−i diag(ξ·η) + L` on the full grid.
    pub fn new(eta: [f64; 3], grid: &VelocityGrid, l: &Mat<f64>) -> Self {
        let n = grid.len();
        let matrix = Mat::from_fn(n, n, |i, j| {
            let mut v = c64::new(l[(i, j)], 0.0);
            if i == j {
                let x = &grid.nodes[i];
                v.im -= x[0] * eta[0] + x[1] * eta[1] + x[2] * eta[2];
            }
            v
        });
        Self { eta, matrix }
    }

    pub fn spectrum(&self) -> Result<Vec<c64>> {
        crate::linalg::eigenvalues(&self.matrix)
    }
}

/// Mode matrix on a sector with η = ρ e₃.
pub fn reduced_mode_matrix(space: &ReducedSpace, rho: f64) -> Mat<c64> {
    let d = space.dim();
    Mat::from_fn(d, d, |i, j| {
        let mut v = c64::new(space.l[(i, j)], 0.0);
        if i == j {
            v.im -= rho * space.xi3[i];
        }
        v
    })
}

/// C² cutoff: 1 on [0, δ/2], 0 on [δ, ∞).
pub fn smooth_cutoff(s: f64, delta: f64) -> f64 {
    let s = s.abs();
    if s <= 0.5 * delta {
        1.0
    } else if s >= delta {
        0.0
    } else {
        let u = (s - 0.5 * delta) / (0.5 * delta);
        1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }
}

fn bilinear(w: f64, a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<c64>() * w
}

/// Fluid eigenpairs of one sector: eigenvalues closest to 0, bilinearly
/// normalized right eigenvectors (left = transpose), residuals.
#[derive(Debug, Clone)]
pub struct SectorModes {
    pub values: Vec<c64>,
    pub vectors: Vec<Vec<c64>>,
    pub residuals: Vec<f64>,
    /// Smallest |λ| among the discarded (non-fluid) eigenvalues.
    pub gap: f64,
}

pub fn sector_fluid_modes(space: &ReducedSpace, rho: f64) -> Result<SectorModes> {
    let m = space.invariants.len();
    let a = reduced_mode_matrix(space, rho);
    let e = a.eigen().map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    let d = space.dim();
    let mut order: Vec<usize> = (0..d).collect();
    let vals: Vec<c64> = (0..d).map(|i| e.S()[i]).collect();
    order.sort_by(|&p, &q| vals[p].norm().partial_cmp(&vals[q].norm()).unwrap());
    let fluid_max = order[..m].iter().map(|&i| vals[i].norm()).fold(0.0, f64::max);
    let gap = vals[order[m]].norm();
    if gap < 1.5 * fluid_max || gap < 1e-6 {
        return Err(Error::SpectralGap(format!(
            "|eta| = {rho}: fluid eigenvalues up to {fluid_max:.3e} not separated from {gap:.3e}"
        )));
    }
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    if rho == 0.0 {
        for inv in &space.invariants {
            values.push(c64::new(0.0, 0.0));
            let v: Vec<c64> = inv.iter().map(|&x| c64::new(x, 0.0)).collect();
            let av = matvec(&a, &v);
            residuals.push(av.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() * space.w.sqrt());
            vectors.push(v);
        }
        return Ok(SectorModes { values, vectors, residuals, gap });
    }
    for &k in &order[..m] {
        let mut v: Vec<c64> = (0..d).map(|i| e.U()[(i, k)]).collect();
        let s = bilinear(space.w, &v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= s);
        let av = matvec(&a, &v);
        let r = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - vals[k] * y).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        values.push(vals[k]);
        vectors.push(v);
        residuals.push(r);
    }
    Ok(SectorModes { values, vectors, residuals, gap })
}

/// The three sectors carrying fluid modes for η ∥ e₃.
#[derive(Debug, Clone)]
pub struct FluidSpaces {
    pub axisymmetric: ReducedSpace,
    pub shear_x: ReducedSpace,
    pub shear_y: ReducedSpace,
    pub grid: VelocityGrid,
    pub basis: MacroBasis,
}

impl FluidSpaces {
    pub fn new(bundle: &KernelMatrixBundle) -> Self {
        let basis = MacroBasis::new(&bundle.grid);
        let l = crate::sector::projected_l(bundle, &basis);
        let mk = |k| ReducedSpace::from_matrix(&bundle.grid, &l, &bundle.nu, &basis, k);
        Self {
            axisymmetric: mk(SectorKind::Axisymmetric),
            shear_x: mk(SectorKind::ShearX),
            shear_y: mk(SectorKind::ShearY),
            grid: bundle.grid.clone(),
            basis,
        }
    }
}

/// Reference eigenfunctions E₀..E₄ for direction ω = e₃ in terms of the
/// sector invariants (axisymmetric: χ₀, χ₃, χ₄).
fn reference_axisymmetric() -> [[f64; 3]; 3] {
    let (a, b, c) = ((0.3f64).sqrt(), (0.5f64).sqrt(), (0.2f64).sqrt());
    [[a, b, c], [a, -b, c], [-(0.4f64).sqrt(), 0.0, (0.6f64).sqrt()]]
}

#[derive(Debug, Clone)]
pub struct FluidEigenSystem {
    pub eta_mag: f64,
    pub eigenvalues: [c64; 5],
    /// Full-grid right eigenvectors.
    pub right_eigvecs: Vec<Vec<c64>>,
    /// Full-grid left eigenvectors, paired with the right ones through the
    /// bilinear form `Σ w eⱼ e_l = δ_{jl}`.
    pub left_eigvecs: Vec<Vec<c64>>,
    pub residuals: [f64; 5],
    /// Sector-coordinate eigenvectors [axisymmetric ×3, shear x, shear y].
    pub sector_vectors: Vec<Vec<c64>>,
}

/// Label the three axisymmetric modes as (+sound, −sound, heat) by
/// overlap with the reference combinations E₀, E₁, E₂.
fn label_axisymmetric(space: &ReducedSpace, modes: &SectorModes) -> Result<[usize; 3]> {
    let refs = reference_axisymmetric();
    let mut best = [usize::MAX; 3];
    for (r, coef) in refs.iter().enumerate() {
        let e: Vec<c64> = (0..space.dim())
            .map(|i| c64::new((0..3).map(|k| coef[k] * space.invariants[k][i]).sum::<f64>(), 0.0))
            .collect();
        let ov: Vec<f64> = modes.vectors.iter().map(|v| bilinear(space.w, v, &e).norm()).collect();
        let mut idx: Vec<usize> = (0..ov.len()).collect();
        idx.sort_by(|&p, &q| ov[q].partial_cmp(&ov[p]).unwrap());
        best[r] = idx[0];
    }
    if best[0] == best[1] || best[1] == best[2] || best[0] == best[2] {
        return Err(Error::Branch(format!("ambiguous acoustic/heat labelling {best:?}")));
    }
    Ok(best)
}

fn fix_sign(w: f64, v: &mut [c64], reference: &[f64]) {
    let s: c64 = v.iter().zip(reference).map(|(a, b)| a * *b).sum::<c64>() * w;
    if s.re < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Five fluid eigenpairs at η = ρ e₃.
pub fn fluid_eigensystem(spaces: &FluidSpaces, rho: f64) -> Result<FluidEigenSystem> {
    let ax = sector_fluid_modes(&spaces.axisymmetric, rho)?;
    let sx = sector_fluid_modes(&spaces.shear_x, rho)?;
    let sy = sector_fluid_modes(&spaces.shear_y, rho)?;
    let lab = if rho == 0.0 { [0, 1, 2] } else { label_axisymmetric(&spaces.axisymmetric, &ax)? };
    let mut sector_vectors = Vec::with_capacity(5);
    let mut eigenvalues = [c64::new(0.0, 0.0); 5];
    let mut residuals = [0.0; 5];
    let refs = reference_axisymmetric();
    let space = &spaces.axisymmetric;
    for j in 0..3 {
        let mut v = ax.vectors[lab[j]].clone();
        if rho == 0.0 {
            // rotate the invariant basis onto E₀, E₁, E₂
            v = (0..space.dim())
                .map(|i| c64::new((0..3).map(|k| refs[j][k] * space.invariants[k][i]).sum::<f64>(), 0.0))
                .collect();
        }
        let e: Vec<f64> = (0..space.dim())
            .map(|i| (0..3).map(|k| refs[j][k] * space.invariants[k][i]).sum::<f64>())
            .collect();
        fix_sign(space.w, &mut v, &e);
        eigenvalues[j] = ax.values[lab[j]];
        residuals[j] = ax.residuals[lab[j]];
        sector_vectors.push(v);
    }
    for (k, (sp, md)) in [(&spaces.shear_x, &sx), (&spaces.shear_y, &sy)].into_iter().enumerate() {
        let mut v = md.vectors[0].clone();
        fix_sign(sp.w, &mut v, &sp.invariants[0]);
        eigenvalues[3 + k] = md.values[0];
        residuals[3 + k] = md.residuals[0];
        sector_vectors.push(v);
    }
    let right: Vec<Vec<c64>> = sector_vectors
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let s = match j {
                0..=2 => &spaces.axisymmetric.sector,
                3 => &spaces.shear_x.sector,
                _ => &spaces.shear_y.sector,
            };
            s.lift(v)
        })
        .collect();
    Ok(FluidEigenSystem {
        eta_mag: rho,
        eigenvalues,
        left_eigvecs: right.clone(),
        right_eigvecs: right,
        residuals,
        sector_vectors,
    })
}

impl FluidEigenSystem {
    /// Matrix of `Σ w eⱼ e_l` (identity after normalization).
    pub fn biorthogonality(&self, w: f64) -> [[c64; 5]; 5] {
        let mut g = [[c64::new(0.0, 0.0); 5]; 5];
        for j in 0..5 {
            for l in 0..5 {
                g[j][l] = bilinear(w, &self.left_eigvecs[j], &self.right_eigvecs[l]);
            }
        }
        g
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersionSample {
    pub eta_mag: f64,
    pub re: [f64; 5],
    pub im: [f64; 5],
    pub residual: [f64; 5],
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersionFit {
    pub a: [f64; 5],
    #[serde(rename = "A")]
    pub diffusion: [f64; 5],
    pub fit_residual: f64,
    pub delta: f64,
    pub samples: Vec<DispersionSample>,
}

/// Least squares for y ≈ c₁ x^{p₁} + c₂ x^{p₂}.
fn lsq2(x: &[f64], y: &[f64], p1: i32, p2: i32) -> ([f64; 2], f64) {
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (u, v) = (xi.powi(p1), xi.powi(p2));
        a11 += u * u;
        a12 += u * v;
        a22 += v * v;
        b1 += u * yi;
        b2 += v * yi;
    }
    let det = a11 * a22 - a12 * a12;
    let c1 = (b1 * a22 - b2 * a12) / det;
    let c2 = (a11 * b2 - a12 * b1) / det;
    let res = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - c1 * xi.powi(p1) - c2 * xi.powi(p2)).powi(2))
        .sum::<f64>()
        .sqrt();
    ([c1, c2], res)
}

/// Default fit window: 10 log-spaced samples on [0.02, 0.2].
pub fn default_samples() -> Vec<f64> {
    (0..10).map(|k| 0.02 * 10f64.powf(k as f64 / 9.0)).collect()
}

/// Fit Im λⱼ = −aⱼ|η| + b|η|³ and Re λⱼ = −Aⱼ|η|² + d|η|³ per branch, tracking
/// branches by eigenvector continuity between consecutive samples.
pub fn fit_dispersion(spaces: &FluidSpaces, samples: &[f64], delta: f64) -> Result<DispersionFit> {
    if samples.len() < 4 {
        return Err(Error::InvalidParameter("dispersion fit needs at least 4 samples".into()));
    }
    if samples.iter().any(|&s| !(s > 0.0 && s <= delta)) {
        return Err(Error::InvalidParameter(format!("samples must lie in (0, {delta}]")));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let systems: Vec<FluidEigenSystem> =
        xs.par_iter().map(|&r| fluid_eigensystem(spaces, r)).collect::<Result<_>>()?;
    // continuity check on the axisymmetric branches
    let w = spaces.axisymmetric.w;
    for k in 1..systems.len() {
        for j in 0..3 {
            let a = &systems[k - 1].sector_vectors[j];
            let ov: Vec<f64> = (0..3)
                .map(|l| {
                    let b = &systems[k].sector_vectors[l];
                    let nb = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    let na = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<c64>().norm() / (na * nb)
                })
                .collect();
            let best = (0..3).max_by(|&p, &q| ov[p].partial_cmp(&ov[q]).unwrap()).unwrap();
            if best != j {
                return Err(Error::Branch(format!(
                    "branch {j} jumps to {best} between |eta| = {} and {} (overlaps {ov:?})",
                    xs[k - 1],
                    xs[k]
                )));
            }
        }
    }
    let _ = w;
    let mut a = [0.0; 5];
    let mut diff = [0.0; 5];
    let mut res2 = 0.0;
    for j in 0..5 {
        let im: Vec<f64> = systems.iter().map(|s| s.eigenvalues[j].im).collect();
        let re: Vec<f64> = systems.iter().map(|s| s.eigenvalues[j].re).collect();
        let (ci, ri) = lsq2(&xs, &im, 1, 3);
        let (cr, rr) = lsq2(&xs, &re, 2, 3);
        a[j] = -ci[0];
        diff[j] = -cr[0];
        res2 += ri * ri + rr * rr;
    }
    let samples = systems
        .iter()
        .map(|s| DispersionSample {
            eta_mag: s.eta_mag,
            re: std::array::from_fn(|j| s.eigenvalues[j].re),
            im: std::array::from_fn(|j| s.eigenvalues[j].im),
            residual: s.residuals,
        })
        .collect();
    Ok(DispersionFit { a, diffusion: diff, fit_residual: res2.sqrt(), delta, samples })
}

/// Parts (Ĝ_{L;0}ĥ₀, Ĝ_{L;⊥}ĥ₀, Ĝ_Sĥ₀) of `e^{(−iρξ₃+L)t}ĥ₀` on one sector.
pub fn semigroup_split(
    space: &ReducedSpace,
    h0: &[c64],
    rho: f64,
    t: f64,
    delta: f64,
) -> Result<[Vec<c64>; 3]> {
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("negative time {t}")));
    }
    let d = space.dim();
    let a = reduced_mode_matrix(space, rho);
    let at = Mat::from_fn(d, d, |i, j| a[(i, j)] * t);
    let full = matvec(&expm(&at), h0);
    let chi = smooth_cutoff(rho, delta);
    let zero = vec![c64::new(0.0, 0.0); d];
    if chi == 0.0 {
        return Ok([zero.clone(), zero, full]);
    }
    let modes = sector_fluid_modes(space, rho)?;
    let mut fluid = zero.clone();
    for (l, v) in modes.values.iter().zip(&modes.vectors) {
        let c = bilinear(space.w, v, h0) * (l * t).exp();
        fluid.iter_mut().zip(v).for_each(|(f, x)| *f += c * x);
    }
    let p0: Vec<c64> = fluid.iter().map(|x| x * chi).collect();
    let perp: Vec<c64> = full.iter().zip(&fluid).map(|(f, g)| (f - g) * chi).collect();
    let s: Vec<c64> = full.iter().map(|f| f * (1.0 - chi)).collect();
    Ok([p0, perp, s])
}
