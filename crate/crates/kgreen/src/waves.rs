//! Wave envelopes B_m and Φ_m, radial 3D reconstruction of the fluid part of
//! the Green's function, and decay/speed fits.

use crate::audit::linear_fit;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;
use crate::sector::ReducedSpace;
use crate::spectral::{sector_fluid_modes, smooth_cutoff, FluidSpaces, SectorModes, SOUND_SPEED};
use crate::velocity::norm3;
use faer::c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// B_m(z, t) = (1 + z²/(1+t))^{−m}.
pub fn b_profile(z: f64, t: f64, m: f64) -> f64 {
    (1.0 + z * z / (1.0 + t)).powf(-m)
}

/// Φ_m(t, |x|) with the sound speed √(5/3).
pub fn phi_structure(t: f64, x: f64, m: f64) -> f64 {
    let c = SOUND_SPEED;
    let inside = if x.abs() <= c * t { (1.0 + t).powf(-1.5) * b_profile(x, t, 1.5) } else { 0.0 };
    inside + (1.0 + t).powf(-1.5) * b_profile(x, t, m) + (1.0 + t).powi(-2) * b_profile(x.abs() - c * t, t, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvelopeKind {
    /// (1+t)^{−a} B_b(|x|, t).
    Diffusion,
    /// (1+t)^{−a} B_b(|x| − ct, t).
    Huygens,
    /// e^{−at}(1+|x|)^{−b}.
    StaticExp,
    /// (1+t)^{−a}(1+|x|)^{−b}.
    StaticAlg,
}

/// Positive space-time envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    pub time_power: f64,
    pub profile_order: f64,
    pub speed: f64,
    /// Restrict to |x| ≤ speed·t.
    pub inside_cone: bool,
}

impl Envelope {
    pub fn diffusion(a: f64, b: f64) -> Self {
        Self { kind: EnvelopeKind::Diffusion, time_power: a, profile_order: b, speed: 0.0, inside_cone: false }
    }

    pub fn huygens(a: f64, b: f64, c: f64) -> Self {
        Self { kind: EnvelopeKind::Huygens, time_power: a, profile_order: b, speed: c, inside_cone: false }
    }

    pub fn static_exp(rate: f64, power: f64) -> Self {
        Self { kind: EnvelopeKind::StaticExp, time_power: rate, profile_order: power, speed: 0.0, inside_cone: false }
    }

    pub fn static_alg(a: f64, b: f64) -> Self {
        Self { kind: EnvelopeKind::StaticAlg, time_power: a, profile_order: b, speed: 0.0, inside_cone: false }
    }

    /// Same envelope gated to |x| ≤ ct.
    pub fn gated(mut self, c: f64) -> Self {
        self.inside_cone = true;
        self.speed = c;
        self
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let x = x.abs();
        if self.inside_cone && x > self.speed * t {
            return 0.0;
        }
        let (a, b) = (self.time_power, self.profile_order);
        match self.kind {
            EnvelopeKind::Diffusion => (1.0 + t).powf(-a) * b_profile(x, t, b),
            EnvelopeKind::Huygens => (1.0 + t).powf(-a) * b_profile(x - self.speed * t, t, b),
            EnvelopeKind::StaticExp => (-a * t).exp() * (1.0 + x).powf(-b),
            EnvelopeKind::StaticAlg => (1.0 + t).powf(-a) * (1.0 + x).powf(-b),
        }
    }

    /// Radii where the envelope changes character at time t.
    pub fn breakpoints(&self, t: f64) -> Vec<f64> {
        let w = (1.0 + t).sqrt();
        let mut v = vec![w];
        if matches!(self.kind, EnvelopeKind::Huygens) || self.inside_cone {
            let c = self.speed * t;
            v.extend([c, c - w, c + w, c - 4.0 * w, c + 4.0 * w]);
        }
        v.retain(|r| *r > 0.0);
        v
    }
}

pub fn sph_j0(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        1.0 - x * x / 6.0 + x.powi(4) / 120.0
    } else {
        x.sin() / x
    }
}

pub fn sph_j1(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        x / 3.0 - x.powi(3) / 30.0 + x.powi(5) / 840.0
    } else {
        x.sin() / (x * x) - x.cos() / x
    }
}

/// Radial Fourier transform φ̂(ρ) = 4π∫r²φ(r) j₀(ρr) dr of a profile supported in r ≤ 1.
pub fn radial_transform(phi: impl Fn(f64) -> f64, rho: f64) -> f64 {
    let (r, w) = gauss_legendre_on(48, 0.0, 1.0);
    4.0 * PI * r.iter().zip(&w).map(|(r, w)| w * r * r * phi(*r) * sph_j0(rho * r)).sum::<f64>()
}

/// Default radial spatial profile (1 − r²)⁴ on r ≤ 1.
pub fn default_spatial_profile(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - r * r).powi(4)
    }
}

/// Spherical Bessel functions j₀..j₃.
pub fn sph_j(x: f64) -> [f64; 4] {
    if x.abs() < 2.5 {
        // power series: j_l(x) = x^l/(2l+1)!! Σ_k (−x²/2)^k / (k! (2l+3)(2l+5)…(2l+2k+1))
        let mut out = [0.0; 4];
        let mut lead = 1.0;
        for (l, o) in out.iter_mut().enumerate() {
            if l > 0 {
                lead *= x / (2 * l + 1) as f64;
            }
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..30 {
                term *= -0.5 * x * x / (k as f64 * (2 * l + 2 * k + 1) as f64);
                sum += term;
                if term.abs() < 1e-17 * sum.abs() {
                    break;
                }
            }
            *o = lead * sum;
        }
        out
    } else {
        let j0 = x.sin() / x;
        let j1 = x.sin() / (x * x) - x.cos() / x;
        let j2 = 3.0 * j1 / x - j0;
        let j3 = 5.0 * j2 / x - j1;
        [j0, j1, j2, j3]
    }
}

/// F_k(u) = ∫₋₁¹ s^k e^{ius} ds for k = 0..3.
pub fn polar_moments(u: f64) -> [c64; 4] {
    let j = sph_j(u);
    [
        c64::new(2.0 * j[0], 0.0),
        c64::new(0.0, 2.0 * j[1]),
        c64::new(2.0 * (j[0] - 2.0 * j[2]) / 3.0, 0.0),
        c64::new(0.0, 2.0 * (3.0 * j[1] - 2.0 * j[3]) / 5.0),
    ]
}

/// Velocity data g(ξ) = iso(|ξ|) + (ξ·e₃) axial(|ξ|), optionally with its
/// macroscopic part removed. Stored as sector coordinates in the frame where
/// the wave vector is the third axis.
#[derive(Debug, Clone)]
pub struct VelocityData {
    /// iso(|ξ|) on the axisymmetric sector.
    pub iso: Vec<f64>,
    /// ξ₃·axial(|ξ|) on the axisymmetric sector.
    pub axial_parallel: Vec<f64>,
    /// ξ₁·axial(|ξ|) on the shear sector.
    pub axial_transverse: Vec<f64>,
}

fn remove_invariants(space: &ReducedSpace, v: &mut [f64]) {
    for inv in &space.invariants {
        let c: f64 = inv.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() * space.w;
        v.iter_mut().zip(inv).for_each(|(x, y)| *x -= c * y);
    }
}

impl VelocityData {
    pub fn new(spaces: &FluidSpaces, iso: impl Fn(f64) -> f64, axial: impl Fn(f64) -> f64, microscopic: bool) -> Self {
        let grid = &spaces.grid;
        let fi = grid.sample(|x| iso(norm3(x)));
        let fp = grid.sample(|x| x[2] * axial(norm3(x)));
        let ft = grid.sample(|x| x[0] * axial(norm3(x)));
        let mut out = Self {
            iso: spaces.axisymmetric.sector.restrict(&fi),
            axial_parallel: spaces.axisymmetric.sector.restrict(&fp),
            axial_transverse: spaces.shear_x.sector.restrict(&ft),
        };
        if microscopic {
            remove_invariants(&spaces.axisymmetric, &mut out.iso);
            remove_invariants(&spaces.axisymmetric, &mut out.axial_parallel);
            remove_invariants(&spaces.shear_x, &mut out.axial_transverse);
        }
        out
    }

    /// Isotropic data.
    pub fn isotropic(spaces: &FluidSpaces, iso: impl Fn(f64) -> f64, microscopic: bool) -> Self {
        Self::new(spaces, iso, |_| 0.0, microscopic)
    }
}

/// Fluid eigenpairs at Chebyshev nodes ρ_k ∈ (0, δ); data-independent.
/// Modes are labelled [diffusive, +sound, −sound] so that eigen-data are
/// analytic in ρ for each label and can be interpolated.
#[derive(Debug, Clone)]
pub struct FluidEigenTable {
    pub delta: f64,
    pub nodes: Vec<f64>,
    pub axisymmetric: Vec<SectorModes>,
    pub shear: Vec<SectorModes>,
    pub w_axisymmetric: f64,
    pub w_shear: f64,
    /// ⟨e_j, χ_a⟩ for a ∈ {density, momentum ∥ η, energy}.
    pub moments: Vec<[[c64; 3]; 3]>,
    /// ⟨e_s, χ₁⟩ of the shear mode.
    pub shear_moment: Vec<c64>,
}

fn bilinear(w: f64, a: &[c64], b: &[f64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x * *y).sum::<c64>() * w
}

/// Reorder three axisymmetric fluid modes as [diffusive, Im > 0, Im < 0].
fn label_modes(m: SectorModes) -> Result<SectorModes> {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| m.values[a].im.abs().total_cmp(&m.values[b].im.abs()));
    let (h, a, b) = (idx[0], idx[1], idx[2]);
    let (p, q) = if m.values[a].im > 0.0 { (a, b) } else { (b, a) };
    if !(m.values[p].im > 0.0 && m.values[q].im < 0.0) {
        return Err(Error::Branch(format!("acoustic pair not resolved: {:?}", m.values)));
    }
    let pick = |v: &[c64]| vec![v[h], v[p], v[q]];
    Ok(SectorModes {
        values: pick(&m.values),
        vectors: vec![m.vectors[h].clone(), m.vectors[p].clone(), m.vectors[q].clone()],
        residuals: vec![m.residuals[h], m.residuals[p], m.residuals[q]],
        gap: m.gap,
    })
}

fn chebyshev_nodes(count: usize, delta: f64) -> Vec<f64> {
    (0..count).map(|k| 0.5 * delta * (1.0 - ((2 * k + 1) as f64 * PI / (2 * count) as f64).cos())).collect()
}

/// Barycentric interpolation on first-kind Chebyshev nodes.
fn chebyshev_interpolate(nodes: &[f64], values: &[c64], x: f64) -> c64 {
    let n = nodes.len();
    let mut num = c64::new(0.0, 0.0);
    let mut den = 0.0;
    for k in 0..n {
        let d = x - nodes[k];
        if d == 0.0 {
            return values[k];
        }
        let w = (if k % 2 == 0 { 1.0 } else { -1.0 }) * ((2 * k + 1) as f64 * PI / (2 * n) as f64).sin() / d;
        num += values[k] * w;
        den += w;
    }
    num / den
}

impl FluidEigenTable {
    pub fn new(spaces: &FluidSpaces, delta: f64, chebyshev: usize) -> Result<Self> {
        if !(delta > 0.0) || chebyshev < 4 {
            return Err(Error::InvalidParameter(format!("δ = {delta}, {chebyshev} Chebyshev nodes")));
        }
        let ax = &spaces.axisymmetric;
        let sh = &spaces.shear_x;
        let pos = |s: &ReducedSpace, j: usize| s.invariant_ids.iter().position(|&i| i == j);
        let (i0, i3, i4, i1) = match (pos(ax, 0), pos(ax, 3), pos(ax, 4), pos(sh, 1)) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(Error::InvalidParameter("sectors lack the expected collision invariants".into())),
        };
        let nodes = chebyshev_nodes(chebyshev, delta);
        let rows: Vec<_> = nodes
            .par_iter()
            .map(|&rho| -> Result<_> {
                let a = label_modes(sector_fluid_modes(ax, rho)?)?;
                let s = sector_fluid_modes(sh, rho)?;
                let mut mom = [[c64::new(0.0, 0.0); 3]; 3];
                for j in 0..3 {
                    for (slot, inv) in [i0, i3, i4].iter().enumerate() {
                        mom[j][slot] = bilinear(ax.w, &a.vectors[j], &ax.invariants[*inv]);
                    }
                }
                let ms = bilinear(sh.w, &s.vectors[0], &sh.invariants[i1]);
                Ok((a, s, mom, ms))
            })
            .collect::<Result<_>>()?;
        let mut t = Self {
            delta,
            nodes,
            axisymmetric: Vec::new(),
            shear: Vec::new(),
            w_axisymmetric: ax.w,
            w_shear: sh.w,
            moments: Vec::new(),
            shear_moment: Vec::new(),
        };
        for (a, s, m, ms) in rows {
            t.axisymmetric.push(a);
            t.shear.push(s);
            t.moments.push(m);
            t.shear_moment.push(ms);
        }
        Ok(t)
    }
}

/// Composite Gauss–Legendre quadrature on (0, δ] used for the ρ-integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoQuadrature {
    pub panels: usize,
    pub order: usize,
}

impl Default for RhoQuadrature {
    fn default() -> Self {
        Self { panels: 60, order: 10 }
    }
}

impl RhoQuadrature {
    pub fn refined(self) -> Self {
        Self { panels: 2 * self.panels, ..self }
    }

    pub fn nodes(&self, delta: f64) -> Vec<(f64, f64)> {
        let (x, w) = gauss_legendre_on(self.order, 0.0, 1.0);
        let h = delta / self.panels as f64;
        (0..self.panels).flat_map(|p| x.iter().zip(&w).map(move |(xi, wi)| (h * (p as f64 + xi), h * wi))).collect()
    }
}

/// Projected data on the ρ quadrature: everything the spatial evaluation needs.
#[derive(Debug, Clone)]
pub struct FluidRadialData {
    pub rho: Vec<f64>,
    /// Quadrature weight × (2π)^{−3}·2π·ρ²χ_δ(ρ)φ̂(ρ).
    pub weight: Vec<f64>,
    pub eigenvalues: Vec<[c64; 3]>,
    pub shear_eigenvalue: Vec<c64>,
    /// [j][a]: projection of the isotropic data times moment a.
    pub iso: Vec<[[c64; 3]; 3]>,
    /// [j][a]: projection of the axial data (ξ·η̂ part) times moment a.
    pub axial: Vec<[[c64; 3]; 3]>,
    /// Shear projection of the axial data times the shear momentum.
    pub shear: Vec<c64>,
    /// Centre of the spatial profile on the e₃ axis.
    pub center: f64,
}

/// Project velocity data on the tabulated eigenpairs, interpolate to the ρ
/// quadrature and attach the radial spatial profile centred at `center`·e₃.
pub fn project_data(
    table: &FluidEigenTable,
    data: &VelocityData,
    phi: impl Fn(f64) -> f64 + Sync,
    center: f64,
    quad: RhoQuadrature,
) -> Result<FluidRadialData> {
    let d = table.axisymmetric[0].vectors[0].len();
    if data.iso.len() != d || data.axial_parallel.len() != d || data.axial_transverse.len() != table.shear[0].vectors[0].len() {
        return Err(Error::Dimension(format!("velocity data of length {} for sector dimension {d}", data.iso.len())));
    }
    // 22 tabulated analytic functions of ρ
    let m = table.nodes.len();
    let mut cols: Vec<Vec<c64>> = vec![Vec::with_capacity(m); 22];
    for k in 0..m {
        let a = &table.axisymmetric[k];
        let mut row = Vec::with_capacity(22);
        row.extend_from_slice(&a.values[..3]);
        row.push(table.shear[k].values[0]);
        for j in 0..3 {
            let ci = bilinear(table.w_axisymmetric, &a.vectors[j], &data.iso);
            let ca = bilinear(table.w_axisymmetric, &a.vectors[j], &data.axial_parallel);
            for s in 0..3 {
                row.push(ci * table.moments[k][j][s]);
                row.push(ca * table.moments[k][j][s]);
            }
        }
        row.push(bilinear(table.w_shear, &table.shear[k].vectors[0], &data.axial_transverse) * table.shear_moment[k]);
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    let nodes = quad.nodes(table.delta);
    let rows: Vec<_> = nodes
        .par_iter()
        .map(|&(rho, wq)| {
            let v: Vec<c64> = cols.iter().map(|c| chebyshev_interpolate(&table.nodes, c, rho)).collect();
            let weight = wq * rho * rho * smooth_cutoff(rho, table.delta) * radial_transform(&phi, rho) * 2.0 * PI / (8.0 * PI.powi(3));
            (rho, weight, v)
        })
        .collect();
    let mut out = FluidRadialData {
        rho: Vec::new(),
        weight: Vec::new(),
        eigenvalues: Vec::new(),
        shear_eigenvalue: Vec::new(),
        iso: Vec::new(),
        axial: Vec::new(),
        shear: Vec::new(),
        center,
    };
    for (rho, weight, v) in rows {
        out.rho.push(rho);
        out.weight.push(weight);
        out.eigenvalues.push([v[0], v[1], v[2]]);
        out.shear_eigenvalue.push(v[3]);
        let mut iso = [[c64::new(0.0, 0.0); 3]; 3];
        let mut axial = [[c64::new(0.0, 0.0); 3]; 3];
        for j in 0..3 {
            for s in 0..3 {
                iso[j][s] = v[4 + 6 * j + 2 * s];
                axial[j][s] = v[5 + 6 * j + 2 * s];
            }
        }
        out.iso.push(iso);
        out.axial.push(axial);
        out.shear.push(v[21]);
    }
    Ok(out)
}

/// Density, e₃-momentum and energy of the fluid part h_{L;0}(t, z e₃).
///
/// With s = cos∠(η, e₃), the isotropic part contributes ∝ 1, the axial part
/// ∝ s on the axisymmetric modes and ∝ √(1−s²) on the shear mode; momentum
/// along η (resp. the transverse direction) carries another s (resp. √(1−s²)).
/// The azimuth is integrated out and the s-integral is exact via [`polar_moments`].
pub fn fluid_moments_at(data: &FluidRadialData, t: f64, z: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    let zr = z - data.center;
    for q in 0..data.rho.len() {
        let f = polar_moments(data.rho[q] * zr);
        let mut acc = [c64::new(0.0, 0.0); 3];
        for j in 0..3 {
            let e = (data.eigenvalues[q][j] * t).exp();
            let (ci, ca) = (data.iso[q][j], data.axial[q][j]);
            // density and energy: (iso + s·axial)
            for (slot, a) in [(0usize, 0usize), (2, 2)] {
                acc[slot] += e * (ci[a] * f[0] + ca[a] * f[1]);
            }
            // momentum along η projected on e₃: s(iso + s·axial)
            acc[1] += e * (ci[1] * f[1] + ca[1] * f[2]);
        }
        // shear mode: (1 − s²)
        let es = (data.shear_eigenvalue[q] * t).exp();
        acc[1] += es * data.shear[q] * (f[0] - f[2]);
        for k in 0..3 {
            out[k] += data.weight[q] * acc[k].re;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialField {
    pub t: f64,
    /// Signed positions z along the e₃ axis.
    pub radii: Vec<f64>,
    /// Norm of the macroscopic moments (density, momentum, energy).
    pub values: Vec<f64>,
    pub density: Vec<f64>,
    pub momentum: Vec<f64>,
    pub energy: Vec<f64>,
}

pub fn reconstruct_fluid_radial(data: &FluidRadialData, t: f64, radii: &[f64]) -> Result<RadialField> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time {t}")));
    }
    let m: Vec<[f64; 3]> = radii.par_iter().map(|&r| fluid_moments_at(data, t, r)).collect();
    if m.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(Error::Quadrature(format!("non-finite fluid field at t = {t}")));
    }
    Ok(RadialField {
        t,
        radii: radii.to_vec(),
        values: m.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).collect(),
        density: m.iter().map(|v| v[0]).collect(),
        momentum: m.iter().map(|v| v[1]).collect(),
        energy: m.iter().map(|v| v[2]).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveFitReport {
    /// Exponent of the sup over the diffusive core |z| ≤ √(1+t).
    pub interior_exponent: f64,
    pub interior_residual: f64,
    /// Exponent of the value at z = 0.
    pub origin_exponent: f64,
    pub origin_residual: f64,
    /// Speed from r*(t) = c t + b√(1+t) + a.
    pub ridge_speed: f64,
    pub ridge_speed_residual: f64,
    /// Plain slope of r*(t).
    pub ridge_speed_linear: f64,
    pub ridge_exponent: f64,
    pub ridge_residual: f64,
    pub ridge_detected: bool,
    pub t_window: [f64; 2],
    pub ridge_positions: Vec<f64>,
    pub ridge_values: Vec<f64>,
    pub interior_values: Vec<f64>,
    pub origin_values: Vec<f64>,
}

/// Evaluation lattice for one time: a core lattice on |z| ≤ √(1+t) (21 points,
/// z = 0 first) followed by a lattice of spacing ≤ `step` over
/// 0.5ct < z ≤ 1.5ct + 10.
pub fn ridge_radii(t: f64, step: f64) -> Vec<f64> {
    let core = (1.0 + t).sqrt();
    let (a, b) = (0.5 * SOUND_SPEED * t, 1.5 * SOUND_SPEED * t + 10.0);
    let n = ((b - a) / step).ceil().max(2.0) as usize;
    std::iter::once(0.0)
        .chain((1..=10).flat_map(|k| [core * k as f64 / 10.0, -core * k as f64 / 10.0]))
        .chain((1..=n).map(|k| a + (b - a) * k as f64 / n as f64))
        .collect()
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for i in 0..3 {
            mc[i][c] = r[i];
        }
        *o = det(mc) / d;
    }
    Some(out)
}

/// Least squares y ≈ c·t + b·√(1+t) + a; returns (c, rms residual).
fn drift_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let basis = |t: f64| [t, (1.0 + t).sqrt(), 1.0];
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for (ti, yi) in t.iter().zip(y) {
        let b = basis(*ti);
        for i in 0..3 {
            r[i] += b[i] * yi;
            for j in 0..3 {
                m[i][j] += b[i] * b[j];
            }
        }
    }
    match solve3(m, r) {
        Some(c) => {
            let res = t.iter().zip(y).map(|(ti, yi)| {
                let b = basis(*ti);
                (yi - c[0] * b[0] - c[1] * b[1] - c[2] * b[2]).powi(2)
            });
            (c[0], (res.sum::<f64>() / t.len() as f64).sqrt())
        }
        None => (f64::NAN, f64::NAN),
    }
}

/// Interior, origin and ridge fits over fields evaluated on [`ridge_radii`].
pub fn fit_decay(fields: &[RadialField]) -> Result<WaveFitReport> {
    if fields.len() < 4 {
        return Err(Error::InvalidParameter("decay fit needs at least 4 time samples".into()));
    }
    let t0 = fields.first().unwrap().t;
    let t1 = fields.last().unwrap().t;
    if !(t0 > 0.0 && t1 >= 10.0 * t0) {
        return Err(Error::InvalidParameter(format!("time samples [{t0}, {t1}] span less than a decade")));
    }
    let lt: Vec<f64> = fields.iter().map(|f| (1.0 + f.t).ln()).collect();
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let origin: Vec<f64> = fields.iter().map(|f| f.values[0]).collect();
    let interior: Vec<f64> = fields
        .iter()
        .map(|f| {
            let core = (1.0 + f.t).sqrt() * (1.0 + 1e-12);
            (0..f.radii.len()).filter(|&i| f.radii[i].abs() <= core).map(|i| f.values[i]).fold(0.0, f64::max)
        })
        .collect();
    let (so, _, ro) = linear_fit(&lt, &logs(&origin));
    let (si, _, ri) = linear_fit(&lt, &logs(&interior));
    let mut pos = Vec::new();
    let mut peak = Vec::new();
    let mut detected = true;
    for f in fields {
        let lim = 0.5 * SOUND_SPEED * f.t;
        let cand: Vec<usize> = (0..f.radii.len()).filter(|&i| f.radii[i] > lim).collect();
        let k = cand.iter().copied().max_by(|&a, &b| f.values[a].total_cmp(&f.values[b]));
        match k {
            Some(k) if k > cand[0] && k + 1 < f.radii.len() && f.values[k] > 0.0 => {
                let (y0, y1, y2) = (f.values[k - 1], f.values[k], f.values[k + 1]);
                let h = f.radii[k + 1] - f.radii[k];
                let den = y0 - 2.0 * y1 + y2;
                let off = if den < 0.0 { (0.5 * (y0 - y2) / den).clamp(-1.0, 1.0) } else { 0.0 };
                pos.push(f.radii[k] + off * h);
                peak.push(y1 - 0.25 * (y0 - y2) * off);
            }
            _ => {
                detected = false;
                pos.push(f64::NAN);
                peak.push(f64::NAN);
            }
        }
    }
    let ts: Vec<f64> = fields.iter().map(|f| f.t).collect();
    let nan = f64::NAN;
    let (speed, sres) = if detected { drift_fit(&ts, &pos) } else { (nan, nan) };
    let lin = if detected { linear_fit(&ts, &pos).0 } else { nan };
    let (rs, _, rres) = if detected { linear_fit(&lt, &logs(&peak)) } else { (nan, nan, nan) };
    Ok(WaveFitReport {
        interior_exponent: -si,
        interior_residual: ri,
        origin_exponent: -so,
        origin_residual: ro,
        ridge_speed: speed,
        ridge_speed_residual: sres,
        ridge_speed_linear: lin,
        ridge_exponent: -rs,
        ridge_residual: rres,
        ridge_detected: detected,
        t_window: [t0, t1],
        ridge_positions: pos,
        ridge_values: peak,
        interior_values: interior,
        origin_values: origin,
    })
}

/// Log-spaced samples on [a, b].
pub fn log_times(a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| a * (b / a).powf(k as f64 / (count - 1) as f64)).collect()
}

/// Reconstruct on [`ridge_radii`] at each t and fit.
pub fn wave_sweep(data: &FluidRadialData, times: &[f64], step: f64) -> Result<(Vec<RadialField>, WaveFitReport)> {
    let fields: Vec<RadialField> =
        times.iter().map(|&t| reconstruct_fluid_radial(data, t, &ridge_radii(t, step))).collect::<Result<_>>()?;
    let rep = fit_decay(&fields)?;
    Ok((fields, rep))
}

/// Largest change between two reconstructions on the same lattice, relative
/// to the sup of the finer one, per time sample.
pub fn refinement_defect(coarse: &[RadialField], fine: &[RadialField]) -> f64 {
    coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| {
            let sup = f.values.iter().cloned().fold(0.0, f64::max);
            c.values.iter().zip(&f.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / sup
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b_profile_identities() {
        assert_eq!(b_profile(0.0, 3.0, 2.5), 1.0);
        assert!((b_profile(1.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        let t = 7.0;
        assert!((b_profile((1.0f64 + t).sqrt(), t, 3.0) - 0.125).abs() < 1e-14);
    }

    #[test]
    fn phi_structure_on_the_cone() {
        let t = 10.0;
        let x = SOUND_SPEED * t;
        let v = phi_structure(t, x, 3.0);
        let expected = (1.0 + t).powf(-1.5) * (b_profile(x, t, 1.5) + b_profile(x, t, 3.0)) + (1.0 + t).powi(-2);
        assert!((v - expected).abs() < 1e-15);
        let out = phi_structure(t, x + 1.0, 3.0);
        assert!((out - (1.0 + t).powf(-1.5) * b_profile(x + 1.0, t, 3.0) - (1.0 + t).powi(-2) * b_profile(1.0, t, 3.0)).abs() < 1e-15);
    }

    #[test]
    fn spherical_bessel_branches_agree() {
        for x in [9.99e-4, 1.001e-3, 0.00999, 0.01001] {
            assert!((sph_j0(x) - x.sin() / x).abs() < 1e-12);
            assert!((sph_j1(x) - (x.sin() / (x * x) - x.cos() / x)).abs() < 1e-9);
        }
    }

    #[test]
    fn radial_transform_at_zero_is_the_mass() {
        // 4π∫₀¹ r²(1−r²)⁴ dr = 4π·128/3465
        let v = radial_transform(default_spatial_profile, 0.0);
        assert!((v - 4.0 * PI * 128.0 / 3465.0).abs() < 1e-13);
    }
}
