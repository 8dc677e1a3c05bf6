//! The bilinear collision operator Γ, the space-time weight w, the coupled
//! particle/fluid Picard iteration on the slab and the outside-cone decay fit.

use crate::audit::linear_fit;
use crate::error::{Error, Result};
use crate::kernels::PotentialParams;
use crate::mixture::{ModeField, SlabSystem};
use crate::quadrature::sphere_rule_38;
use crate::sector::{ReducedSpace, SectorKind};
use crate::spectral::{smooth_cutoff, SOUND_SPEED};
use crate::velocity::{maxwellian, MacroBasis, VelocityGrid};
use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Tensor-product interpolation of post-collision values; zero outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Interpolation {
    Trilinear,
    Triquadratic,
}

/// Collision integral over grid ξ* and a symmetric sphere rule, with
/// post-collision values interpolated back onto the grid.
#[derive(Debug, Clone)]
pub struct BilinearQuadrature {
    pub sphere_nodes: Vec<[f64; 3]>,
    pub sphere_weights: Vec<f64>,
    pub grid: VelocityGrid,
    pub params: PotentialParams,
    pub interpolation: Interpolation,
    basis: MacroBasis,
    sqrt_m: Vec<f64>,
}

/// Up to 27 (node, weight) pairs.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    len: usize,
    nodes: [usize; 27],
    weights: [f64; 27],
}

impl BilinearQuadrature {
    /// Triquadratic interpolation.
    pub fn new(grid: &VelocityGrid, params: &PotentialParams) -> Self {
        Self::with_interpolation(grid, params, Interpolation::Triquadratic)
    }

    pub fn with_interpolation(grid: &VelocityGrid, params: &PotentialParams, interpolation: Interpolation) -> Self {
        let (sphere_nodes, sphere_weights) = sphere_rule_38();
        Self {
            sphere_nodes,
            sphere_weights,
            grid: grid.clone(),
            params: *params,
            interpolation,
            basis: MacroBasis::new(grid),
            sqrt_m: grid.sample(|x| maxwellian(x).sqrt()),
        }
    }

    /// Polynomial degree integrated exactly by the sphere rule.
    pub fn sphere_degree(&self) -> usize {
        9
    }

    fn stencil(&self, v: &[f64; 3]) -> Stencil {
        let g = &self.grid;
        let n = g.points_per_axis as isize;
        let mut axis = [[(0usize, 0.0f64); 3]; 3];
        let mut count = [0usize; 3];
        for d in 0..3 {
            let s = (v[d] + g.cutoff_radius) / g.h - 0.5;
            let taps = match self.interpolation {
                Interpolation::Trilinear => {
                    let i0 = s.floor();
                    let t = s - i0;
                    let i0 = i0 as isize;
                    [(i0, 1.0 - t), (i0 + 1, t), (i0, 0.0)]
                }
                Interpolation::Triquadratic => {
                    let m = s.round();
                    let t = s - m;
                    let m = m as isize;
                    [(m - 1, 0.5 * t * (t - 1.0)), (m, 1.0 - t * t), (m + 1, 0.5 * t * (t + 1.0))]
                }
            };
            for (i, w) in taps {
                if (0..n).contains(&i) && w != 0.0 {
                    axis[d][count[d]] = (i as usize, w);
                    count[d] += 1;
                }
            }
        }
        let mut st = Stencil { len: 0, nodes: [0; 27], weights: [0.0; 27] };
        for a in &axis[0][..count[0]] {
            for b in &axis[1][..count[1]] {
                for c in &axis[2][..count[2]] {
                    st.nodes[st.len] = g.index(a.0, b.0, c.0);
                    st.weights[st.len] = a.1 * b.1 * c.1;
                    st.len += 1;
                }
            }
        }
        st
    }

    fn interpolate(st: &Stencil, f: &[f64]) -> f64 {
        (0..st.len).map(|m| st.weights[m] * f[st.nodes[m]]).sum()
    }

    /// |u|^γ β(u, Ω) and the post-collision shift (u·Ω)Ω for u = ξ − ξ*.
    fn collision(&self, u: &[f64; 3], omega: &[f64; 3]) -> (f64, [f64; 3]) {
        let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if un == 0.0 {
            return (0.0, [0.0; 3]);
        }
        let c = u[0] * omega[0] + u[1] * omega[1] + u[2] * omega[2];
        let b = un.powf(self.params.gamma) * (c.abs() / un).powf(self.params.angular.power);
        (b, [c * omega[0], c * omega[1], c * omega[2]])
    }

    /// Symmetrized Γ before the conservation projection.
    pub fn gamma_raw(&self, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let len = self.grid.len();
        if f.len() != len || g.len() != len {
            return Err(Error::Dimension(format!("Γ arguments of length {} and {} on a {len}-node grid", f.len(), g.len())));
        }
        let nodes = &self.grid.nodes;
        let w = self.grid.weights[0];
        Ok((0..len)
            .into_par_iter()
            .map(|k| {
                let xk = nodes[k];
                let mut acc = 0.0;
                for (j, xj) in nodes.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let u = [xk[0] - xj[0], xk[1] - xj[1], xk[2] - xj[2]];
                    let mut inner = 0.0;
                    let mut loss = 0.0;
                    for (om, wo) in self.sphere_nodes.iter().zip(&self.sphere_weights) {
                        let (b, s) = self.collision(&u, om);
                        if b == 0.0 {
                            continue;
                        }
                        let sp = self.stencil(&[xk[0] - s[0], xk[1] - s[1], xk[2] - s[2]]);
                        let ss = self.stencil(&[xj[0] + s[0], xj[1] + s[1], xj[2] + s[2]]);
                        let gain = Self::interpolate(&ss, f) * Self::interpolate(&sp, g) + Self::interpolate(&ss, g) * Self::interpolate(&sp, f);
                        inner += wo * b * gain;
                        loss += wo * b;
                    }
                    acc += self.sqrt_m[j] * (inner - loss * (f[j] * g[k] + f[k] * g[j]));
                }
                0.5 * w * acc
            })
            .collect())
    }

    /// Γ(f, g) with the collision-invariant component removed, so that mass,
    /// momentum and energy are conserved exactly.
    pub fn gamma_bilinear(&self, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let raw = self.gamma_raw(f, g)?;
        self.basis.project_p1(&self.grid, &raw)
    }

    /// |⟨Γ, χⱼ⟩| for j = 0..4.
    pub fn invariant_moments(&self, gamma: &[f64]) -> [f64; 5] {
        self.basis.moments(&self.grid, gamma).map(f64::abs)
    }

    pub fn basis(&self) -> &MacroBasis {
        &self.basis
    }
}

/// Γ restricted to an orbit-sum sector: γ_a = Σ_{b,c} T_{a,(b,c)} c_b d_c.
#[derive(Debug, Clone)]
pub struct GammaTensor {
    pub dim: usize,
    /// d × d² with column index b·d + c.
    pub table: Mat<f64>,
}

impl GammaTensor {
    /// Assembles the sector tensor. Inputs and outputs are invariant under the
    /// sector's symmetry group, so only one output node per orbit is computed.
    pub fn build(quad: &BilinearQuadrature, space: &ReducedSpace) -> Result<Self> {
        let sector = &space.sector;
        if !matches!(sector.kind, SectorKind::Full | SectorKind::Axisymmetric) {
            return Err(Error::InvalidParameter(format!("Γ does not preserve the {:?} sector", sector.kind)));
        }
        let grid = &quad.grid;
        if sector.cols.iter().map(|c| c.len()).sum::<usize>() != grid.len() {
            return Err(Error::Dimension("sector and quadrature grids differ".into()));
        }
        let d = sector.dim();
        let mut col_of = vec![(0usize, 0.0f64); grid.len()];
        for (a, col) in sector.cols.iter().enumerate() {
            for &(i, b) in col {
                col_of[i] = (a, b);
            }
        }
        let w = grid.weights[0];
        let blocks: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|a| {
                let k = sector.representative(a);
                let scale = (sector.cols[a].len() as f64).sqrt();
                let xk = grid.nodes[k];
                let (ak, bk) = col_of[k];
                let mut blk = vec![0.0; d * d];
                let mut sp_cols = Vec::with_capacity(27);
                let mut ss_cols = Vec::with_capacity(27);
                for (j, xj) in grid.nodes.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let u = [xk[0] - xj[0], xk[1] - xj[1], xk[2] - xj[2]];
                    let coef = 0.5 * w * quad.sqrt_m[j] * scale;
                    let mut loss = 0.0;
                    for (om, wo) in quad.sphere_nodes.iter().zip(&quad.sphere_weights) {
                        let (b, s) = quad.collision(&u, om);
                        if b == 0.0 {
                            continue;
                        }
                        loss += wo * b;
                        let sp = quad.stencil(&[xk[0] - s[0], xk[1] - s[1], xk[2] - s[2]]);
                        let ss = quad.stencil(&[xj[0] + s[0], xj[1] + s[1], xj[2] + s[2]]);
                        collapse(&sp, &col_of, &mut sp_cols);
                        collapse(&ss, &col_of, &mut ss_cols);
                        let c = coef * wo * b;
                        // f(ξ*')g(ξ') + g(ξ*')f(ξ')
                        for &(x, vx) in &ss_cols {
                            for &(y, vy) in &sp_cols {
                                let v = c * vx * vy;
                                blk[x * d + y] += v;
                                blk[y * d + x] += v;
                            }
                        }
                    }
                    let (aj, bj) = col_of[j];
                    let v = coef * loss * bj * bk;
                    blk[aj * d + ak] -= v;
                    blk[ak * d + aj] -= v;
                }
                blk
            })
            .collect();
        let mut table = Mat::from_fn(d, d * d, |a, bc| blocks[a][bc]);
        // remove the invariant component of every output
        for inv in &space.invariants {
            let proj: Vec<f64> = (0..d * d).map(|bc| w * (0..d).map(|a| inv[a] * table[(a, bc)]).sum::<f64>()).collect();
            for bc in 0..d * d {
                for a in 0..d {
                    table[(a, bc)] -= inv[a] * proj[bc];
                }
            }
        }
        Ok(Self { dim: d, table })
    }

    /// Γ(c, d) in sector coordinates.
    pub fn apply(&self, c: &[f64], e: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|a| {
                let mut s = 0.0;
                for b in 0..d {
                    if c[b] == 0.0 {
                        continue;
                    }
                    let row: f64 = (0..d).map(|x| self.table[(a, b * d + x)] * e[x]).sum();
                    s += c[b] * row;
                }
                s
            })
            .collect()
    }

    /// Γ(c_p, c_p) for every column of `cols` (d × P).
    pub fn apply_quadratic(&self, cols: &Mat<f64>) -> Mat<f64> {
        let d = self.dim;
        let kron = Mat::from_fn(d * d, cols.ncols(), |bc, p| cols[(bc / d, p)] * cols[(bc % d, p)]);
        &self.table * &kron
    }
}

fn collapse(st: &Stencil, col_of: &[(usize, f64)], out: &mut Vec<(usize, f64)>) {
    out.clear();
    for m in 0..st.len {
        let (c, b) = col_of[st.nodes[m]];
        let v = st.weights[m] * b;
        match out.iter_mut().find(|e| e.0 == c) {
            Some(e) => e.1 += v,
            None => out.push((c, v)),
        }
    }
}

/// Conservation defects of Γ(f, f) relative to ‖f‖².
#[derive(Debug, Clone, Serialize)]
pub struct ConservationReport {
    pub points_per_axis: usize,
    /// Interpolation defect before the projection.
    pub raw: [f64; 5],
    /// Defect of the conservative operator.
    pub projected: [f64; 5],
    pub max_raw: f64,
    pub max_projected: f64,
}

pub fn conservation_report(quad: &BilinearQuadrature, f: &[f64]) -> Result<ConservationReport> {
    let raw = quad.gamma_raw(f, f)?;
    let proj = quad.basis.project_p1(&quad.grid, &raw)?;
    let n2 = quad.grid.dot(f, f);
    let r = quad.invariant_moments(&raw).map(|v| v / n2);
    let p = quad.invariant_moments(&proj).map(|v| v / n2);
    Ok(ConservationReport {
        points_per_axis: quad.grid.points_per_axis,
        raw: r,
        projected: p,
        max_raw: r.iter().fold(0.0, |m: f64, v| m.max(*v)),
        max_projected: p.iter().fold(0.0, |m: f64, v| m.max(*v)),
    })
}

/// Fitted constant C in |ν⁻¹Γ(h,h)|_{L∞_τ} ≤ C|h|²_{L∞_τ}.
#[derive(Debug, Clone, Serialize)]
pub struct GammaBoundFit {
    pub tau: f64,
    pub ratios: Vec<f64>,
    pub constant: f64,
    /// Largest ratio in each half of the sample list.
    pub half_constants: [f64; 2],
    /// |C₁ − C₂| / max(C₁, C₂).
    pub spread: f64,
}

/// Ratios over sector-coordinate samples `hs` (coordinates of functions in
/// the space of `tensor`).
pub fn gamma_bound_fit(tensor: &GammaTensor, space: &ReducedSpace, hs: &[Vec<f64>], tau: f64) -> Result<GammaBoundFit> {
    if hs.len() < 2 {
        return Err(Error::InvalidParameter("bound fit needs at least two samples".into()));
    }
    let d = tensor.dim;
    let scale: Vec<f64> = (0..d).map(|a| space.sector.node_scale(a)).collect();
    let weight: Vec<f64> = (0..d).map(|a| (1.0 + space.speed[a] * space.speed[a]).powf(0.5 * tau)).collect();
    let norm = |c: &[f64], div: &dyn Fn(usize) -> f64| (0..d).map(|a| (c[a] * scale[a] * weight[a] / div(a)).abs()).fold(0.0, f64::max);
    let ratios: Vec<f64> = hs
        .iter()
        .map(|h| {
            let g = tensor.apply(h, h);
            let num = norm(&g, &|a| space.nu[a]);
            let den = norm(h, &|_| 1.0);
            num / (den * den)
        })
        .collect();
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::Singular("non-finite Γ bound ratio".into()));
    }
    let half = ratios.len() / 2;
    let c1 = ratios[..half].iter().fold(0.0, |m: f64, v| m.max(*v));
    let c2 = ratios[half..].iter().fold(0.0, |m: f64, v| m.max(*v));
    let constant = c1.max(c2);
    Ok(GammaBoundFit { tau, ratios, constant, half_constants: [c1, c2], spread: (c1 - c2).abs() / constant })
}

/// Two independently seeded batches of `per_batch` random sector
/// coordinates with |h|_{L∞_τ} of order one: random amplitudes, Gaussian
/// envelopes and oscillations along ξ₃ on top of ⟨ξ⟩^{−τ}.
pub fn bound_samples(space: &ReducedSpace, tau: f64, per_batch: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = space.dim();
    let base: Vec<f64> = (0..d).map(|a| (1.0 + space.speed[a].powi(2)).powf(-0.5 * tau) / space.sector.node_scale(a)).collect();
    let mut out = Vec::with_capacity(2 * per_batch);
    for batch in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2).wrapping_add(batch));
        for i in 0..per_batch {
            let kappa = rng.gen_range(0.0..0.3);
            let (k, phase) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..std::f64::consts::TAU));
            let h = (0..d)
                .map(|a| {
                    let s = space.speed[a];
                    base[a]
                        * match i % 3 {
                            0 => rng.gen_range(-1.0..1.0),
                            1 => (-kappa * s * s).exp(),
                            _ => (k * space.xi3[a] + phase).cos(),
                        }
                })
                .collect();
            out.push(h);
        }
    }
    out
}

/// w = c₁[δ(⟨x⟩−Mt)]^{p/(1−γ)}(1−χ) + c₂⟨ξ⟩_D^p χ with
/// χ = χ(δ(⟨x⟩−Mt)/⟨ξ⟩_D^{1−γ}) equal to 1 below 1 and 0 above 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightFunction {
    pub delta: f64,
    pub speed_m: f64,
    pub power: f64,
    pub d: f64,
    pub c1: f64,
    pub c2: f64,
    pub gamma: f64,
}

impl WeightFunction {
    /// M = 𝐜 + δ/2, D = 1, c₁ = c₂ = 1.
    pub fn new(delta: f64, power: f64, gamma: f64) -> Result<Self> {
        let w = Self { delta, speed_m: SOUND_SPEED + 0.5 * delta, power, d: 1.0, c1: 1.0, c2: 1.0, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0
            && self.speed_m > 0.0
            && self.power > 0.0
            && self.d >= 1.0
            && self.c1 > 0.0
            && self.c2 > 0.0
            && (0.0..1.0).contains(&self.gamma);
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid weight parameters {self:?}")));
        }
        Ok(())
    }

    pub fn bracket_d(&self, speed: f64) -> f64 {
        (self.d * self.d + speed * speed).sqrt()
    }

    /// χ factor at (t, x, |ξ|).
    pub fn cutoff(&self, t: f64, x: f64, speed: f64) -> f64 {
        let z = self.delta * ((1.0 + x * x).sqrt() - self.speed_m * t) / self.bracket_d(speed).powf(1.0 - self.gamma);
        if z <= 0.0 {
            1.0
        } else {
            smooth_cutoff(z, 2.0)
        }
    }

    pub fn eval(&self, t: f64, x: f64, speed: f64) -> f64 {
        let s = self.delta * ((1.0 + x * x).sqrt() - self.speed_m * t);
        let chi = self.cutoff(t, x, speed);
        let outer = if chi < 1.0 { self.c1 * s.powf(self.power / (1.0 - self.gamma)) * (1.0 - chi) } else { 0.0 };
        outer + self.c2 * self.bracket_d(speed).powf(self.power) * chi
    }
}

/// Exact evaluation of the two-piece weight.
pub fn weight_eval(t: f64, x: f64, speed: f64, w: &WeightFunction) -> f64 {
    w.eval(t, x, speed)
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightAudit {
    pub weight: WeightFunction,
    pub lattice_points: usize,
    /// Largest centred difference of ∂_t w relative to w.
    pub max_dt_relative: f64,
    pub min_weight: f64,
    pub passed: bool,
    /// Doublings of c₁ needed to pass.
    pub doublings: u32,
}

fn audit_once(w: &WeightFunction, ts: &[f64], xs: &[f64], speeds: &[f64]) -> (f64, f64) {
    let mut max_dt = f64::NEG_INFINITY;
    let mut min_w = f64::INFINITY;
    for &t in ts {
        let h = 1e-5 * (1.0 + t);
        for &x in xs {
            for &s in speeds {
                let v = w.eval(t, x, s);
                min_w = min_w.min(v);
                let dt = (w.eval(t + h, x, s) - w.eval((t - h).max(0.0), x, s)) / (h + h.min(t));
                max_dt = max_dt.max(dt / v);
            }
        }
    }
    (max_dt, min_w)
}

/// Finite-difference check of ∂_t w ≤ 0 and w > 0 on a lattice, doubling c₁
/// until it passes (at most 30 times).
pub fn weight_audit(base: &WeightFunction, ts: &[f64], xs: &[f64], speeds: &[f64]) -> Result<WeightAudit> {
    base.validate()?;
    let mut w = *base;
    let points = ts.len() * xs.len() * speeds.len();
    for doublings in 0..=30 {
        let (max_dt, min_w) = audit_once(&w, ts, xs, speeds);
        // centred differences of a non-increasing function may round slightly above 0
        let passed = max_dt <= 1e-7 && min_w > 0.0;
        if passed || doublings == 30 {
            return Ok(WeightAudit { weight: w, lattice_points: points, max_dt_relative: max_dt, min_weight: min_w, passed, doublings });
        }
        w.c1 *= 2.0;
    }
    unreachable!()
}

/// Default audit lattice: t ∈ [0, 40], |x| ≤ 120, |ξ| ≤ 20.
pub fn default_weight_lattice() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ts = (0..=80).map(|i| 0.5 * i as f64).collect();
    let xs = (0..=240).map(|i| 0.5 * i as f64).collect();
    let speeds = (0..=40).map(|i| 0.5 * i as f64).collect();
    (ts, xs, speeds)
}

/// Physical-space sampling of slab fields on x_j = −X + 2Xj/P.
struct SlabTransform {
    /// stored × P phases e^{iη_k x_j} with the inverse-transform weights.
    inverse: Mat<c64>,
    /// P × stored phases e^{−iη_k x_j}·2X/P.
    forward: Mat<c64>,
    points: usize,
}

impl SlabTransform {
    fn new(sys: &SlabSystem) -> Self {
        let s = sys.slab;
        let p = s.modes;
        let m = s.stored();
        let x = |j: usize| -s.half_length + 2.0 * s.half_length * j as f64 / p as f64;
        let inv = 1.0 / (2.0 * s.half_length);
        let inverse = Mat::from_fn(m, p, |k, j| {
            let a = s.eta(k) * x(j);
            c64::new(a.cos(), a.sin()) * if k == 0 { inv } else { 2.0 * inv }
        });
        let dx = 2.0 * s.half_length / p as f64;
        let forward = Mat::from_fn(p, m, |j, k| {
            let a = -s.eta(k) * x(j);
            c64::new(a.cos(), a.sin()) * dx
        });
        Self { inverse, forward, points: p }
    }

    fn to_physical(&self, f: &ModeField) -> Mat<f64> {
        let z = &f.values * &self.inverse;
        Mat::from_fn(z.nrows(), self.points, |a, j| z[(a, j)].re)
    }

    fn to_modes(&self, v: &Mat<f64>, sys: &SlabSystem) -> ModeField {
        let vc = Mat::from_fn(v.nrows(), v.ncols(), |a, j| c64::new(v[(a, j)], 0.0));
        ModeField { values: &vc * &self.forward, slab: sys.slab }
    }
}

/// Picard parameters for the coupled system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardConfig {
    pub final_time: f64,
    pub dt: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Ladder depth N of the particle part.
    pub levels: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { final_time: 40.0, dt: 0.25, tolerance: 1e-8, max_iterations: 40, levels: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearRun {
    pub epsilon: f64,
    pub times: Vec<f64>,
    /// f = f_* + f_♯ on the time lattice.
    pub full: Vec<ModeField>,
    pub particle: Vec<ModeField>,
    pub fluid: Vec<ModeField>,
    /// 𝔾ᵗf₀ (unscaled) on the same lattice.
    pub linear: Vec<ModeField>,
    /// Relative Picard updates, one per iteration.
    pub residuals: Vec<f64>,
    /// Ratios of successive updates.
    pub ratios: Vec<f64>,
}

impl NonlinearRun {
    /// max_t ‖f − ε𝔾ᵗf₀‖ in L²_{x,ξ}.
    pub fn correction(&self, sys: &SlabSystem) -> f64 {
        self.full
            .iter()
            .zip(&self.linear)
            .map(|(f, l)| field_norm(sys, &f.sub(&l.scale(self.epsilon))))
            .fold(0.0, f64::max)
    }

    /// max_t ‖f/ε − 𝔾ᵗf₀‖ / max_t ‖𝔾ᵗf₀‖.
    pub fn linear_defect(&self, sys: &SlabSystem) -> f64 {
        let top = self.correction(sys) / self.epsilon;
        let base = self.linear.iter().map(|l| field_norm(sys, l)).fold(0.0, f64::max);
        top / base
    }

    /// Observed contraction ratio (first ratio of successive updates).
    pub fn contraction(&self) -> f64 {
        self.ratios.first().copied().unwrap_or(0.0)
    }
}

/// ‖f‖ in L²_x L²_ξ.
pub fn field_norm(sys: &SlabSystem, f: &ModeField) -> f64 {
    (f.l2x_squared().iter().sum::<f64>() * sys.space.w).sqrt()
}

/// Solves f = ε𝔾ᵗf₀ + ∫₀ᵗ𝔾^{t−s}Γ(f,f)(s)ds by Picard iteration, then splits
/// f into the particle part f_* (mixture ladder driven by εf₀ and Γ) and the
/// fluid part f_♯ = f − f_*.
pub fn coupled_solve(sys: &SlabSystem, tensor: &GammaTensor, f0: &ModeField, epsilon: f64, cfg: &PicardConfig) -> Result<NonlinearRun> {
    if !(epsilon >= 0.0) || !(cfg.dt > 0.0) || !(cfg.final_time > 0.0) {
        return Err(Error::InvalidParameter(format!("ε = {epsilon}, dt = {}, T = {}", cfg.dt, cfg.final_time)));
    }
    if tensor.dim != sys.dim() || f0.dim() != sys.dim() {
        return Err(Error::Dimension(format!("tensor {} / data {} / system {}", tensor.dim, f0.dim(), sys.dim())));
    }
    if cfg.levels < 1 {
        return Err(Error::InvalidParameter("particle ladder needs N >= 1".into()));
    }
    let steps = (cfg.final_time / cfg.dt).round() as usize;
    let dt = cfg.final_time / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * dt).collect();
    let record: Vec<usize> = (0..=steps).collect();
    let linear = sys.full_series(f0, dt, &record);
    let props = sys.mode_propagators(dt);
    let xf = SlabTransform::new(sys);
    let scaled: Vec<ModeField> = linear.iter().map(|l| l.scale(epsilon)).collect();
    let zero = ModeField::zeros(sys.dim(), sys.slab);
    if epsilon == 0.0 {
        return Ok(NonlinearRun {
            epsilon,
            times,
            full: scaled.clone(),
            particle: scaled.clone(),
            fluid: scaled,
            linear,
            residuals: vec![0.0],
            ratios: Vec::new(),
        });
    }
    let source = |f: &[ModeField]| -> Vec<ModeField> {
        f.iter().map(|fj| xf.to_modes(&tensor.apply_quadratic(&xf.to_physical(fj)), sys)).collect()
    };
    let mut f = scaled.clone();
    let mut residuals = Vec::new();
    let mut ratios = Vec::new();
    let mut gamma = source(&f);
    loop {
        let mut next = Vec::with_capacity(steps + 1);
        let mut duhamel = zero.clone();
        next.push(scaled[0].clone());
        for j in 0..steps {
            let pushed = apply_props(&props, &duhamel.add(&gamma[j].scale(0.5 * dt)));
            duhamel = pushed.add(&gamma[j + 1].scale(0.5 * dt));
            next.push(scaled[j + 1].add(&duhamel));
        }
        if !next.iter().all(|v| v.is_finite()) {
            let ratio = ratios.last().copied().unwrap_or(f64::INFINITY);
            return Err(Error::Divergence { ratio });
        }
        let top = next.iter().zip(&f).map(|(a, b)| field_norm(sys, &a.sub(b))).fold(0.0, f64::max);
        let base = next.iter().map(|a| field_norm(sys, a)).fold(0.0, f64::max);
        let upd = if base > 0.0 { top / base } else { 0.0 };
        if let Some(prev) = residuals.last() {
            ratios.push(upd / prev);
        }
        residuals.push(upd);
        f = next;
        if upd < cfg.tolerance {
            break;
        }
        let ratio = ratios.last().copied().unwrap_or(0.0);
        if ratio >= 1.0 || !upd.is_finite() || residuals.len() >= cfg.max_iterations {
            return Err(Error::Divergence { ratio: if ratio > 0.0 { ratio } else { upd } });
        }
        gamma = source(&f);
    }
    let gamma = source(&f);
    let particle = particle_with_source(sys, &f0.scale(epsilon), &gamma, cfg.levels, dt);
    let fluid = f.iter().zip(&particle).map(|(a, b)| a.sub(b)).collect();
    Ok(NonlinearRun { epsilon, times, full: f, particle, fluid, linear, residuals, ratios })
}

fn apply_props(props: &[Mat<c64>], f: &ModeField) -> ModeField {
    let d = f.dim();
    let cols: Vec<Vec<c64>> = props
        .par_iter()
        .enumerate()
        .map(|(k, e)| {
            let v = Mat::from_fn(d, 1, |i, _| f.values[(i, k)]);
            let r = e * &v;
            (0..d).map(|i| r[(i, 0)]).collect()
        })
        .collect();
    ModeField { values: Mat::from_fn(d, props.len(), |i, k| cols[k][i]), slab: f.slab }
}

/// Σ_{m≤N} h⁽ᵐ⁾ where h⁽⁰⁾ is damped transport of h₀ driven by `source` and
/// h⁽ᵐ⁾ is damped transport driven by K h⁽ᵐ⁻¹⁾; trapezoid rule in time.
fn particle_with_source(sys: &SlabSystem, h0: &ModeField, source: &[ModeField], n: usize, dt: f64) -> Vec<ModeField> {
    let zero = ModeField::zeros(sys.dim(), sys.slab);
    let mut h: Vec<ModeField> = (0..=n).map(|m| if m == 0 { h0.clone() } else { zero.clone() }).collect();
    let mut drive: Vec<ModeField> = std::iter::once(source[0].clone()).chain(h[..n].iter().map(|v| sys.apply_k(v))).collect();
    let sum = |h: &[ModeField]| h.iter().skip(1).fold(h[0].clone(), |acc, v| acc.add(v));
    let mut out = vec![sum(&h)];
    for j in 0..source.len() - 1 {
        let mut newh = Vec::with_capacity(n + 1);
        let mut newd = Vec::with_capacity(n + 1);
        newd.push(source[j + 1].clone());
        for m in 0..=n {
            let v = sys.damped_transport(&h[m].add(&drive[m].scale(0.5 * dt)), dt).add(&newd[m].scale(0.5 * dt));
            if m < n {
                newd.push(sys.apply_k(&v));
            }
            newh.push(v);
        }
        h = newh;
        drive = newd;
        out.push(sum(&h));
    }
    out
}

/// Summary of the ε-scaling of the nonlinear correction.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub epsilons: Vec<f64>,
    pub corrections: Vec<f64>,
    pub linear_defects: Vec<f64>,
    pub contraction: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Log-log slope of the correction against ε.
    pub slope: f64,
    pub slope_residual: f64,
    /// Linear defect divided by ε, per run.
    pub defect_over_epsilon: Vec<f64>,
    /// Contraction ratio divided by ε, per run.
    pub contraction_over_epsilon: Vec<f64>,
}

pub fn scaling_report(sys: &SlabSystem, runs: &[NonlinearRun]) -> Result<ScalingReport> {
    if runs.len() < 2 {
        return Err(Error::InvalidParameter("scaling needs at least two runs".into()));
    }
    let eps: Vec<f64> = runs.iter().map(|r| r.epsilon).collect();
    let corr: Vec<f64> = runs.iter().map(|r| r.correction(sys)).collect();
    let defects: Vec<f64> = runs.iter().map(|r| r.linear_defect(sys)).collect();
    let contraction: Vec<f64> = runs.iter().map(|r| r.contraction()).collect();
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = corr.iter().map(|c| c.ln()).collect();
    let (slope, _, res) = linear_fit(&lx, &ly);
    Ok(ScalingReport {
        defect_over_epsilon: defects.iter().zip(&eps).map(|(d, e)| d / e).collect(),
        contraction_over_epsilon: contraction.iter().zip(&eps).map(|(c, e)| c / e).collect(),
        iterations: runs.iter().map(|r| r.residuals.len()).collect(),
        epsilons: eps,
        corrections: corr,
        linear_defects: defects,
        contraction,
        slope,
        slope_residual: res,
    })
}

/// Spatial decay of the weighted velocity norm outside the cone.
#[derive(Debug, Clone, Serialize)]
pub struct ConeFitReport {
    pub p: f64,
    pub beta: f64,
    pub cone_speed: f64,
    pub expected_exponent: f64,
    /// Per-time exponents of |f|_{L²_ξ,β}(1+t)^{−1/2} against ⟨x⟩ + t.
    pub times: Vec<f64>,
    pub exponents: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Mean of the per-time exponents.
    pub mean_exponent: f64,
    /// Pooled fit over all times.
    pub exponent: f64,
    pub residual: f64,
    pub samples: usize,
    /// Set when the resolved region is too short for a fit.
    pub insufficient_range: bool,
    pub zero_field: bool,
}

/// |f|_{L²_ξ,β} at position x.
pub fn weighted_velocity_norm(sys: &SlabSystem, f: &ModeField, x: f64, beta: f64) -> f64 {
    let c = f.at_x(x);
    let s = &sys.space;
    (c.iter().enumerate().map(|(a, v)| v * v * (1.0 + s.speed[a] * s.speed[a]).powf(beta)).sum::<f64>() * s.w).sqrt()
}

/// Fits log(|f|_{L²_ξ,β}(1+t)^{−1/2}) against log(⟨x⟩+t) on
/// (𝐜+δ)t < x ≤ `reach`·(1 + max|ξ₃| t), where the grid resolves the free
/// streaming, using `samples` positions per time.
pub fn outside_cone_fit(
    sys: &SlabSystem,
    series: &[(f64, &ModeField)],
    p: f64,
    beta: f64,
    gamma: f64,
    delta_cone: f64,
    reach: f64,
    samples: usize,
    floor: f64,
) -> Result<ConeFitReport> {
    if !(delta_cone > 0.0) || !(0.0..1.0).contains(&gamma) || samples < 4 || !(reach > 0.0 && reach <= 1.0) {
        return Err(Error::InvalidParameter(format!("cone fit with δ = {delta_cone}, γ = {gamma}, reach = {reach}, {samples} samples")));
    }
    let cone = SOUND_SPEED + delta_cone;
    let expected = -p / (1.0 - gamma);
    let mut report = ConeFitReport {
        p,
        beta,
        cone_speed: cone,
        expected_exponent: expected,
        times: Vec::new(),
        exponents: Vec::new(),
        residuals: Vec::new(),
        mean_exponent: f64::NAN,
        exponent: f64::NAN,
        residual: f64::NAN,
        samples: 0,
        insufficient_range: false,
        zero_field: false,
    };
    if series.iter().all(|(_, f)| f.max_abs() == 0.0) {
        report.zero_field = true;
        return Ok(report);
    }
    let (mut px, mut py) = (Vec::new(), Vec::new());
    for &(t, f) in series {
        let lo = (cone * t).max(1.0);
        let hi = (reach * sys.support_radius(t)).min(sys.slab.half_length);
        // at least a factor 1.5 in ⟨x⟩ + t
        if t <= 0.0 || (hi + t) < 1.5 * (lo + t) {
            continue;
        }
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        let peak = weighted_velocity_norm(sys, f, 0.0, beta) / (1.0 + t).sqrt();
        for i in 0..samples {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / samples as f64;
            let v = weighted_velocity_norm(sys, f, x, beta) / (1.0 + t).sqrt();
            if v > floor * peak && v.is_finite() {
                lx.push(((1.0 + x * x).sqrt() + t).ln());
                ly.push(v.ln());
            }
        }
        if lx.len() < 4 {
            continue;
        }
        let (s, _, r) = linear_fit(&lx, &ly);
        report.times.push(t);
        report.exponents.push(s);
        report.residuals.push(r);
        px.extend(lx);
        py.extend(ly);
    }
    if report.times.is_empty() {
        report.insufficient_range = true;
        return Ok(report);
    }
    let (s, _, r) = linear_fit(&px, &py);
    report.mean_exponent = report.exponents.iter().sum::<f64>() / report.exponents.len() as f64;
    report.exponent = s;
    report.residual = r;
    report.samples = px.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_branches() {
        let w = WeightFunction::new(0.2, 2.0, 0.5).unwrap();
        // deep inside: χ = 1 branch
        let v = w.eval(10.0, 0.0, 3.0);
        assert!((v - w.bracket_d(3.0).powi(2)).abs() < 1e-12);
        // far outside: χ = 0 branch
        let (t, x, s) = (0.0, 200.0, 1.0);
        let arg = 0.2 * ((1.0f64 + x * x).sqrt() - w.speed_m * t);
        assert!((w.eval(t, x, s) - arg.powf(4.0)).abs() < 1e-9 * arg.powf(4.0));
    }

    #[test]
    fn stencil_reproduces_linear_functions() {
        let g = VelocityGrid::new(6, 4.0).unwrap();
        let q = BilinearQuadrature::with_interpolation(&g, &PotentialParams::new(0.5).unwrap(), Interpolation::Trilinear);
        let f = g.sample(|x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2]);
        let v = [0.3, -1.1, 0.7];
        let st = q.stencil(&v);
        assert_eq!(st.len, 8);
        let got = BilinearQuadrature::interpolate(&st, &f);
        assert!((got - (1.0 + 0.6 + 1.1 + 0.35)).abs() < 1e-12);
    }
}
