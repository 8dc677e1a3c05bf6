//! Collision frequency ν, the kernels k₁ and k₂, and assembly of the discrete
//! operator L = −ν + K on a velocity grid.

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre_on, i0e, integrate};
use crate::velocity::{norm3, MacroBasis, VelocityGrid};
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Angular factor β(θ) = |cos θ|^p with p ≥ 1, so that β ≤ |cos θ|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularChoice {
    pub power: f64,
}

impl AngularChoice {
    pub const HARD_SPHERE: AngularChoice = AngularChoice { power: 1.0 };

    pub fn beta(&self, theta: f64) -> f64 {
        theta.cos().abs().powf(self.power)
    }

    /// ∫_{S²} β dΩ.
    pub fn gamma0(&self) -> f64 {
        4.0 * PI / (self.power + 1.0)
    }

    /// Identifier written into matrix caches.
    pub fn id(&self) -> u64 {
        self.power.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    pub gamma: f64,
    pub angular: AngularChoice,
    pub gamma0: f64,
    pub kappa: f64,
    pub qprime: f64,
}

impl PotentialParams {
    pub fn new(gamma: f64) -> Result<Self> {
        Self::with_angular(gamma, AngularChoice::HARD_SPHERE)
    }

    pub fn with_angular(gamma: f64, angular: AngularChoice) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} outside [0, 1]")));
        }
        if !(angular.power >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "angular power {} < 1 violates the cutoff bound",
                angular.power
            )));
        }
        Ok(Self { gamma, angular, gamma0: angular.gamma0(), kappa: 0.5, qprime: 0.75 })
    }

    /// Θ(s) for the planar representation of k₂.
    pub fn theta(&self, s: f64) -> f64 {
        let p = self.angular.power;
        let q = 1.0 + s * s;
        let sp = if p == 1.0 { 1.0 } else { s.powf(p - 1.0) };
        q.powf(0.5 * (self.gamma - p)) * (1.0 + sp)
    }
}

const INV_2PI_32: f64 = 0.063_493_635_934_240_97;

/// ν(ξ) = (2π)^{-3/2} γ₀ ∫ |ξ−ξ*|^γ e^{−|ξ*|²/2} dξ*.
pub fn collision_frequency(xi: &[f64; 3], p: &PotentialParams) -> Result<f64> {
    collision_frequency_radial(norm3(xi), p)
}

pub fn collision_frequency_radial(a: f64, p: &PotentialParams) -> Result<f64> {
    let g = p.gamma;
    if g == 0.0 {
        return Ok(p.gamma0);
    }
    // after the angular integral: 2π ∫ ρ^{2+γ} e^{-(a²+ρ²)/2} 2 sinh(aρ)/(aρ) dρ
    let f = |rho: f64| -> f64 {
        if rho == 0.0 {
            return 0.0;
        }
        let x = a * rho;
        let w = if x < 1.0 {
            let sinhc = if x < 1e-4 { 1.0 + x * x / 6.0 } else { x.sinh() / x };
            2.0 * sinhc * (-(a * a + rho * rho) / 2.0).exp()
        } else {
            ((-(rho - a) * (rho - a) / 2.0).exp() - (-(rho + a) * (rho + a) / 2.0).exp()) / x
        };
        rho.powf(2.0 + g) * w
    };
    let lo = (a - 14.0).max(0.0);
    let v = integrate(f, lo, a + 14.0, &[a, (a - 3.0).max(0.0), a + 3.0], 1e-11, 0.0)?;
    Ok(INV_2PI_32 * p.gamma0 * 2.0 * PI * v)
}

/// k₁(ξ, ξ*) = (2π)^{-3/2} γ₀ |ξ−ξ*|^γ e^{−(|ξ|²+|ξ*|²)/4}.
pub fn kernel_k1(xi: &[f64; 3], xs: &[f64; 3], p: &PotentialParams) -> f64 {
    let d = [xi[0] - xs[0], xi[1] - xs[1], xi[2] - xs[2]];
    let r = norm3(&d);
    let rg = if p.gamma == 0.0 { 1.0 } else { r.powf(p.gamma) };
    let s = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] + xs[0] * xs[0] + xs[1] * xs[1] + xs[2] * xs[2];
    INV_2PI_32 * p.gamma0 * rg * (-0.25 * s).exp()
}

/// Planar geometry of the pair (ξ, η): r = |η−ξ|, ξ∥, η∥ and |ξ⊥|.
fn k2_geometry(xi: &[f64; 3], eta: &[f64; 3]) -> Result<(f64, f64, f64, f64)> {
    let d = [eta[0] - xi[0], eta[1] - xi[1], eta[2] - xi[2]];
    let r = norm3(&d);
    if r == 0.0 {
        return Err(Error::Singular("k2 evaluated at coincident velocities".into()));
    }
    let n = [d[0] / r, d[1] / r, d[2] / r];
    let xp = xi[0] * n[0] + xi[1] * n[1] + xi[2] * n[2];
    let perp = [xi[0] - xp * n[0], xi[1] - xp * n[1], xi[2] - xp * n[2]];
    Ok((r, xp, xp + r, norm3(&perp)))
}

fn k2_prefactor(r: f64, xp: f64, ep: f64, gamma: f64) -> f64 {
    r.powf(gamma - 2.0) / (2.0 * PI.powi(3)).sqrt() * (-0.25 * (xp * xp + ep * ep)).exp()
}

/// k₂(ξ, η) from the planar (Hilbert–Carleman) representation, with the
/// in-plane angle integrated in closed form through `I0e` and the radial
/// integral done adaptively.
pub fn kernel_k2(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams) -> Result<f64> {
    kernel_k2_tol(xi, eta, p, 1e-9)
}

pub fn kernel_k2_tol(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams, tol: f64) -> Result<f64> {
    let (r, xp, ep, s) = k2_geometry(xi, eta)?;
    let pre = k2_prefactor(r, xp, ep, p.gamma);
    if pre == 0.0 {
        return Ok(0.0);
    }
    let hard_sphere = p.gamma == 1.0 && p.angular.power == 1.0;
    if hard_sphere {
        return Ok(pre * 4.0 * PI);
    }
    let f = |rho: f64| rho * (-0.5 * (rho - s) * (rho - s)).exp() * i0e(rho * s) * p.theta(rho / r);
    let hi = s + 13.0;
    let v = integrate(f, 0.0, hi, &[s, (s - 3.0).max(0.0), s + 3.0, r.min(hi)], tol, 1e-300)?;
    Ok(pre * 2.0 * PI * v)
}

/// k₂ by explicit 2D polar quadrature over the plane ⟂ (η−ξ), doubling the
/// node counts (from 64 radial × 32 angular) until the relative change is
/// below `tol`.
pub fn kernel_k2_polar(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams, tol: f64) -> Result<f64> {
    let (r, xp, ep, s) = k2_geometry(xi, eta)?;
    let pre = k2_prefactor(r, xp, ep, p.gamma);
    let rmax = 8.0 + s;
    let eval = |nr: usize, na: usize| -> f64 {
        let (rho, wr) = gauss_legendre_on(nr, 0.0, rmax);
        let mut acc = 0.0;
        for (&q, &w) in rho.iter().zip(&wr) {
            let th = p.theta(q / r);
            let mut ang = 0.0;
            for k in 0..na {
                let phi = 2.0 * PI * (k as f64 + 0.5) / na as f64;
                // |ξ⊥ + V⊥|² with V⊥ = q(cos φ, sin φ), ξ⊥ = (s, 0)
                let d2 = s * s + q * q + 2.0 * s * q * phi.cos();
                ang += (-0.5 * d2).exp();
            }
            acc += w * q * th * ang * 2.0 * PI / na as f64;
        }
        acc
    };
    let (mut nr, mut na) = (64, 32);
    let mut prev = eval(nr, na);
    for _ in 0..6 {
        nr *= 2;
        na *= 2;
        let cur = eval(nr, na);
        if (cur - prev).abs() <= tol * cur.abs() {
            return Ok(pre * cur);
        }
        prev = cur;
    }
    Err(Error::Quadrature(format!("planar k2 quadrature at r={r:.3e} did not settle")))
}

/// Full kernel k = −k₁ + k₂.
pub fn kernel(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams) -> Result<f64> {
    Ok(kernel_k2(xi, eta, p)? - kernel_k1(xi, eta, p))
}

/// Discretization of the integral operator K on the velocity grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assembly {
    /// `K[i][j] = k(ξᵢ, ξⱼ)wⱼ`, diagonal from the average of k over a sub-cell
    /// of half the cell width (4³ midpoint nodes).
    SubcellMidpoint,
    /// Midpoint rule with the singular defect removed: the leading
    /// A(n)/|η−ξ| and |η−ξ|^γ parts of k are integrated exactly and their
    /// lattice sums subtracted on the diagonal.
    CorrectedMidpoint,
    /// Corrected midpoint rule on a grid refined by an odd factor, mapped back
    /// to the nodes with periodic trigonometric interpolation, then symmetrized
    /// so that the action on the collision invariants is kept.
    Refined { factor: usize },
}

impl Default for Assembly {
    fn default() -> Self {
        Assembly::Refined { factor: 3 }
    }
}

impl Assembly {
    pub fn id(&self) -> u64 {
        match self {
            Assembly::SubcellMidpoint => 1,
            Assembly::CorrectedMidpoint => 2,
            Assembly::Refined { factor } => 100 + *factor as u64,
        }
    }

    pub fn from_id(id: u64) -> Option<Self> {
        match id {
            1 => Some(Assembly::SubcellMidpoint),
            2 => Some(Assembly::CorrectedMidpoint),
            f if f > 100 && f % 2 == 1 => Some(Assembly::Refined { factor: (f - 100) as usize }),
            _ => None,
        }
    }
}

/// Tabulated planar integral T(s, r) = r^{γ−1} 2π ∫ ρ e^{−(ρ−s)²/2} I0e(ρs) Θ(ρ/r) dρ,
/// so that k₂ = e^{−(ξ∥²+η∥²)/4} T(s, r) / (r √(2π³)).
#[derive(Debug, Clone)]
pub struct K2Table {
    step: f64,
    ns: usize,
    nr: usize,
    values: Vec<f64>,
    params: PotentialParams,
}

fn planar_t(s: f64, r: f64, p: &PotentialParams) -> Result<f64> {
    let g = p.gamma;
    let f = |rho: f64| -> f64 {
        let base = rho * (-0.5 * (rho - s) * (rho - s)).exp() * i0e(rho * s);
        let ang = if r == 0.0 {
            let cp = if p.angular.power == 1.0 { 2.0 } else { 1.0 };
            cp * rho.powf(g - 1.0)
        } else if p.angular.power == 1.0 {
            2.0 * (r * r + rho * rho).powf(0.5 * (g - 1.0))
        } else {
            p.theta(rho / r) * r.powf(g - 1.0)
        };
        base * ang
    };
    let hi = s + 13.0;
    let v = integrate(f, 0.0, hi, &[s, (s - 3.0).max(0.0), s + 3.0, r.min(hi), 1.0], 1e-11, 1e-300)?;
    Ok(2.0 * PI * v)
}

impl K2Table {
    pub fn new(p: &PotentialParams, smax: f64, rmax: f64) -> Result<Self> {
        let step = 0.025;
        let ns = (smax / step).ceil() as usize + 4;
        let nr = (rmax / step).ceil() as usize + 4;
        let values: Vec<f64> = (0..ns * nr)
            .into_par_iter()
            .map(|k| {
                let (is, ir) = (k / nr, k % nr);
                planar_t(is as f64 * step, ir as f64 * step, p)
            })
            .collect::<Result<_>>()?;
        Ok(Self { step, ns, nr, values, params: *p })
    }

    pub fn for_grid(grid: &VelocityGrid, p: &PotentialParams) -> Result<Self> {
        let r = grid.cutoff_radius * 3f64.sqrt();
        Self::new(p, r + 0.5, 2.0 * r + 0.5)
    }

    fn lookup(&self, s: f64, r: f64) -> Option<f64> {
        let (x, y) = (s / self.step, r / self.step);
        let (i, j) = (x.floor() as isize, y.floor() as isize);
        if i + 2 >= self.ns as isize || j + 2 >= self.nr as isize {
            return None;
        }
        // reflect across 0: T is even in s and, to the order resolved here, in r
        let idx = |a: isize, b: isize| self.values[a.unsigned_abs() * self.nr + b.unsigned_abs()];
        let w = |t: f64| -> [f64; 4] {
            [
                -t * (t - 1.0) * (t - 2.0) / 6.0,
                (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
                -(t + 1.0) * t * (t - 2.0) / 2.0,
                (t + 1.0) * t * (t - 1.0) / 6.0,
            ]
        };
        let (wx, wy) = (w(x - i as f64), w(y - j as f64));
        let mut acc = 0.0;
        for a in 0..4 {
            let mut row = 0.0;
            for b in 0..4 {
                row += wy[b] * idx(i - 1 + a as isize, j - 1 + b as isize);
            }
            acc += wx[a] * row;
        }
        Some(acc)
    }

    /// k₂(ξ, η) from the table (direct quadrature outside its range).
    pub fn k2(&self, xi: &[f64; 3], eta: &[f64; 3]) -> Result<f64> {
        let (r, xp, ep, s) = k2_geometry(xi, eta)?;
        let e = (-0.25 * (xp * xp + ep * ep)).exp();
        if e == 0.0 {
            return Ok(0.0);
        }
        let t = match self.lookup(s, r) {
            Some(t) => t,
            None => planar_t(s, r, &self.params)?,
        };
        Ok(e * t / (r * (2.0 * PI.powi(3)).sqrt()))
    }

    pub fn kernel(&self, xi: &[f64; 3], eta: &[f64; 3]) -> Result<f64> {
        Ok(self.k2(xi, eta)? - kernel_k1(xi, eta, &self.params))
    }
}

/// Leading behaviour k₂(ξ, ξ+rn) ≈ A_ξ(n)/r as r → 0, with
/// A_ξ(n) = c e^{−(ξ·n)²/2} H(|ξ − (ξ·n)n|) and
/// H(s) = ∫₀^∞ ρ^γ e^{−(ρ−s)²/2} I0e(ρs) dρ tabulated on a uniform grid.
#[derive(Debug, Clone)]
pub struct SingularProfile {
    coef: f64,
    ds: f64,
    table: Vec<f64>,
}

impl SingularProfile {
    pub fn new(p: &PotentialParams, smax: f64) -> Result<Self> {
        let ds = 0.004;
        let m = (smax / ds).ceil() as usize + 4;
        let g = p.gamma;
        let table = (0..m)
            .map(|k| {
                let s = k as f64 * ds;
                let f = |rho: f64| rho.powf(g) * (-0.5 * (rho - s) * (rho - s)).exp() * i0e(rho * s);
                integrate(f, 0.0, s + 13.0, &[s, (s - 3.0).max(0.0), s + 3.0, 1.0], 1e-12, 1e-300)
            })
            .collect::<Result<Vec<f64>>>()?;
        let cp = if p.angular.power == 1.0 { 2.0 } else { 1.0 };
        Ok(Self { coef: 2.0 * cp / (2.0 * PI).sqrt(), ds, table })
    }

    pub fn h(&self, s: f64) -> f64 {
        let x = s / self.ds;
        let k = (x.floor() as usize).clamp(1, self.table.len() - 3);
        let t = x - k as f64;
        let (a, b, c, d) = (self.table[k - 1], self.table[k], self.table[k + 1], self.table[k + 2]);
        // cubic Lagrange through k−1..k+2
        b + 0.5 * t * (c - a + t * (2.0 * a - 5.0 * b + 4.0 * c - d + t * (3.0 * (b - c) + d - a)))
    }

    pub fn amplitude(&self, xi: &[f64; 3], n: &[f64; 3]) -> f64 {
        let xn = xi[0] * n[0] + xi[1] * n[1] + xi[2] * n[2];
        let s2 = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] - xn * xn).max(0.0);
        self.coef * (-0.5 * xn * xn).exp() * self.h(s2.sqrt())
    }

    /// ∫_{S²} A_ξ(n) dΩ.
    pub fn sphere_integral(&self, xi: &[f64; 3]) -> f64 {
        let a = norm3(xi);
        let (mu, w) = gauss_legendre_on(64, -1.0, 1.0);
        mu.iter()
            .zip(&w)
            .map(|(&m, &wm)| {
                let xn = a * m;
                let s = a * (1.0 - m * m).max(0.0).sqrt();
                wm * self.coef * (-0.5 * xn * xn).exp() * self.h(s)
            })
            .sum::<f64>()
            * 2.0
            * PI
    }
}

/// Coefficient of the isotropic |η−ξ|^γ cusp of k = k₂ − k₁ at η = ξ.
fn cusp_coefficient(xi: &[f64; 3], p: &PotentialParams) -> f64 {
    let g = p.gamma;
    let m = (-0.5 * (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])).exp();
    let k1 = INV_2PI_32 * p.gamma0 * m;
    let k2 = if g < 1.0 && p.angular.power == 1.0 {
        -4.0 / ((g + 1.0) * (2.0 * PI).sqrt()) * m
    } else {
        0.0
    };
    k2 - k1
}

fn gamma_fn(x: f64) -> f64 {
    // Lanczos approximation, x > 0
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma_fn(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Diagonal weight ∫S − Σ_{m≠0} h³ S(hm) for the local model
/// S = [A(n)/r + c r^γ] e^{−r²/σ²} of the kernel near η = ξ.
pub fn corrected_diagonal(xi: &[f64; 3], h: f64, prof: &SingularProfile, p: &PotentialParams) -> f64 {
    let sigma = 3.0 * h;
    let rcut = 6.2 * sigma;
    let mmax = (rcut / h).ceil() as i64;
    let g = p.gamma;
    let cusp = cusp_coefficient(xi, p);
    let mut lattice = 0.0;
    for a in -mmax..=mmax {
        for b in -mmax..=mmax {
            for c in 0..=mmax {
                // half lattice; S is even in m
                if c == 0 && (b < 0 || (b == 0 && a <= 0)) {
                    continue;
                }
                let u = [a as f64 * h, b as f64 * h, c as f64 * h];
                let r = norm3(&u);
                if r > rcut {
                    continue;
                }
                let n = [u[0] / r, u[1] / r, u[2] / r];
                let local = prof.amplitude(xi, &n) / r + cusp * r.powf(g);
                lattice += 2.0 * local * (-(r * r) / (sigma * sigma)).exp();
            }
        }
    }
    let exact = 0.5 * sigma * sigma * prof.sphere_integral(xi)
        + cusp * 2.0 * PI * sigma.powf(3.0 + g) * gamma_fn(0.5 * (3.0 + g));
    exact - lattice * h * h * h
}

#[derive(Debug, Clone)]
pub struct KernelMatrixBundle {
    pub nu: Vec<f64>,
    /// Quadrature-weighted kernel matrix, `K[i][j] ≈ k(ξᵢ, ξⱼ)wⱼ`.
    pub k: Mat<f64>,
    pub params: PotentialParams,
    pub grid: VelocityGrid,
    pub assembly: Assembly,
}

/// Largest grid assembled in memory (n³ ≤ this).
pub const MAX_NODES: usize = 12_000;

fn shrunk_subcell(xi: &[f64; 3], h: f64, table: &K2Table) -> Result<f64> {
    let q = 4;
    let half = 0.25 * h;
    let step = 2.0 * half / q as f64;
    let off = |i: usize| -half + (i as f64 + 0.5) * step;
    let mut acc = 0.0;
    for a in 0..q {
        for b in 0..q {
            for c in 0..q {
                let eta = [xi[0] + off(a), xi[1] + off(b), xi[2] + off(c)];
                acc += table.kernel(xi, &eta)?;
            }
        }
    }
    Ok(acc / (q * q * q) as f64 * h * h * h)
}

/// Periodic cardinal function of an n-point grid with spacing h (period nh).
fn periodic_sinc(x: f64, n: usize, h: f64) -> f64 {
    if x.abs() < 1e-14 {
        return 1.0;
    }
    let period = n as f64 * h;
    (PI * x / h).sin() / (n as f64 * (PI * x / period).tan())
}

fn midpoint_rows(grid: &VelocityGrid, table: &K2Table, diag: impl Fn(usize) -> Result<f64> + Sync) -> Result<Mat<f64>> {
    let n = grid.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let xi = &grid.nodes[i];
            let mut row = vec![0.0; n - i];
            row[0] = diag(i)?;
            for j in (i + 1)..n {
                row[j - i] = table.kernel(xi, &grid.nodes[j])? * grid.weights[j];
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(Mat::from_fn(n, n, |i, j| if j >= i { rows[i][j - i] } else { rows[j][i - j] }))
}

fn refined_rows(
    grid: &VelocityGrid,
    table: &K2Table,
    prof: &SingularProfile,
    p: &PotentialParams,
    m: usize,
) -> Result<Mat<f64>> {
    let n = grid.points_per_axis;
    let nf = n * m;
    let h = grid.h;
    let hf = h / m as f64;
    let r = grid.cutoff_radius;
    let fine: Vec<f64> = (0..nf).map(|l| -r + (l as f64 + 0.5) * hf).collect();
    let coarse: Vec<f64> = (0..n).map(|k| -r + (k as f64 + 0.5) * h).collect();
    // q[l][k]: value at fine node l of the cardinal function of coarse node k
    let q: Vec<f64> = (0..nf * n).map(|t| periodic_sinc(fine[t / n] - coarse[t % n], n, h)).collect();
    let w = hf * hf * hf;
    let total = grid.len();
    let rows: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let xi = grid.nodes[i];
            let mut t = vec![0.0; nf * nf * nf];
            for a in 0..nf {
                for b in 0..nf {
                    for c in 0..nf {
                        let eta = [fine[a], fine[b], fine[c]];
                        let d = (eta[0] - xi[0]).abs() + (eta[1] - xi[1]).abs() + (eta[2] - xi[2]).abs();
                        if d > 1e-9 * h {
                            t[(a * nf + b) * nf + c] = table.kernel(&xi, &eta)? * w;
                        }
                    }
                }
            }
            // contract the three fine axes with q
            let mut t1 = vec![0.0; nf * nf * n];
            for ab in 0..nf * nf {
                for c in 0..nf {
                    let v = t[ab * nf + c];
                    if v != 0.0 {
                        for k in 0..n {
                            t1[ab * n + k] += v * q[c * n + k];
                        }
                    }
                }
            }
            let mut t2 = vec![0.0; nf * n * n];
            for a in 0..nf {
                for b in 0..nf {
                    for j in 0..n {
                        let qb = q[b * n + j];
                        for k in 0..n {
                            t2[(a * n + j) * n + k] += qb * t1[(a * nf + b) * n + k];
                        }
                    }
                }
            }
            let mut row = vec![0.0; n * n * n];
            for a in 0..nf {
                for ii in 0..n {
                    let qa = q[a * n + ii];
                    for jk in 0..n * n {
                        row[ii * n * n + jk] += qa * t2[a * n * n + jk];
                    }
                }
            }
            row[i] += corrected_diagonal(&xi, hf, prof, p);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let kr = Mat::from_fn(total, total, |i, j| rows[i][j]);
    Ok(symmetrize_on_invariants(&kr, &MacroBasis::new(grid), grid.weights[0]))
}

/// Symmetric part of `K` plus the symmetric rank-10 correction that restores
/// the action of `K` on the collision invariants (up to its skew moment part).
fn symmetrize_on_invariants(k: &Mat<f64>, basis: &MacroBasis, w: f64) -> Mat<f64> {
    let n = k.nrows();
    let s = Mat::from_fn(n, n, |i, j| 0.5 * (k[(i, j)] + k[(j, i)]));
    let x = Mat::from_fn(n, 5, |i, j| basis.chi[j][i] * w.sqrt());
    let y = k * &x;
    let c = x.transpose() * &y;
    let skew = Mat::from_fn(5, 5, |a, b| 0.5 * (c[(a, b)] - c[(b, a)]));
    let z = &y - &x * &skew - &s * &x;
    let xtz = x.transpose() * &z;
    let e = &z * x.transpose() + &x * z.transpose() - &x * (&xtz * x.transpose());
    // exact symmetry after rounding
    Mat::from_fn(n, n, |i, j| s[(i, j)] + 0.5 * (e[(i, j)] + e[(j, i)]))
}

impl KernelMatrixBundle {
    pub fn assemble(grid: &VelocityGrid, params: &PotentialParams, assembly: Assembly) -> Result<Self> {
        let n = grid.len();
        if n > MAX_NODES {
            return Err(Error::Resource(format!("{n} velocity nodes exceed the dense budget of {MAX_NODES}")));
        }
        if let Assembly::Refined { factor } = assembly {
            if factor % 2 == 0 || factor == 0 {
                return Err(Error::InvalidParameter(format!("refinement factor {factor} must be odd")));
            }
        }
        let nu: Vec<f64> = grid
            .nodes
            .par_iter()
            .map(|x| collision_frequency(x, params))
            .collect::<Result<_>>()?;
        let table = K2Table::for_grid(grid, params)?;
        let k = match assembly {
            Assembly::SubcellMidpoint => midpoint_rows(grid, &table, |i| shrunk_subcell(&grid.nodes[i], grid.h, &table))?,
            Assembly::CorrectedMidpoint => {
                let prof = SingularProfile::new(params, 3f64.sqrt() * grid.cutoff_radius + 1.0)?;
                midpoint_rows(grid, &table, |i| Ok(corrected_diagonal(&grid.nodes[i], grid.h, &prof, params)))?
            }
            Assembly::Refined { factor } => {
                let prof = SingularProfile::new(params, 3f64.sqrt() * grid.cutoff_radius + 1.0)?;
                refined_rows(grid, &table, &prof, params, factor)?
            }
        };
        Ok(Self { nu, k, params: *params, grid: grid.clone(), assembly })
    }

    /// Dense L = −diag(ν) + K.
    pub fn l_matrix(&self) -> Mat<f64> {
        let mut l = self.k.clone();
        for i in 0..self.nu.len() {
            l[(i, i)] -= self.nu[i];
        }
        l
    }

    pub fn apply_l(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        (0..n)
            .map(|i| {
                let mut s = -self.nu[i] * f[i];
                for j in 0..n {
                    s += self.k[(i, j)] * f[j];
                }
                s
            })
            .collect()
    }

    /// ‖K − Kᵀ‖_F / ‖K‖_F.
    pub fn asymmetry(&self) -> f64 {
        let n = self.nu.len();
        let (mut d, mut t) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let a = self.k[(i, j)];
                d += (a - self.k[(j, i)]).powi(2);
                t += a * a;
            }
        }
        (d / t).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_special_values() {
        let p0 = PotentialParams::new(0.0).unwrap();
        assert_eq!(collision_frequency(&[3.0, 1.0, 0.0], &p0).unwrap(), p0.gamma0);
        let p1 = PotentialParams::new(1.0).unwrap();
        let v = collision_frequency(&[0.0; 3], &p1).unwrap();
        assert!((v / p1.gamma0 - 2.0 * (2.0 / PI).sqrt()).abs() < 1e-9);
        // continuity across the small-argument branch
        let a = collision_frequency_radial(0.999_999, &p1).unwrap();
        let b = collision_frequency_radial(1.000_001, &p1).unwrap();
        assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn nu_matches_direct_cartesian_quadrature() {
        let p = PotentialParams::new(0.5).unwrap();
        let xi = [1.3, -0.4, 0.7];
        let (x, w) = gauss_legendre_on(60, -9.0, 9.0);
        let mut acc = 0.0;
        for (a, wa) in x.iter().zip(&w) {
            for (b, wb) in x.iter().zip(&w) {
                for (c, wc) in x.iter().zip(&w) {
                    let d = norm3(&[xi[0] - a, xi[1] - b, xi[2] - c]);
                    acc += wa * wb * wc * d.powf(0.5) * (-(a * a + b * b + c * c) / 2.0).exp();
                }
            }
        }
        let direct = INV_2PI_32 * p.gamma0 * acc;
        let v = collision_frequency(&xi, &p).unwrap();
        assert!((v - direct).abs() < 1e-5 * v, "{v} vs {direct}");
    }

    #[test]
    fn k1_values() {
        let p = PotentialParams::new(0.0).unwrap();
        assert!((kernel_k1(&[0.0; 3], &[0.0; 3], &p) - INV_2PI_32 * p.gamma0).abs() < 1e-15);
        let p = PotentialParams::new(0.5).unwrap();
        assert_eq!(kernel_k1(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &p), 0.0);
    }

    #[test]
    fn k2_matches_polar_quadrature_and_closed_form() {
        for gamma in [0.0, 0.5, 1.0] {
            let p = PotentialParams::new(gamma).unwrap();
            for (xi, eta) in [([0.3, -1.0, 0.5], [1.1, 0.2, -0.4]), ([2.0, 0.0, 0.0], [0.0, 1.5, 0.1])] {
                let a = kernel_k2(&xi, &eta, &p).unwrap();
                let b = kernel_k2_polar(&xi, &eta, &p, 1e-8).unwrap();
                assert!((a - b).abs() < 1e-6 * b.abs(), "gamma={gamma}: {a} vs {b}");
            }
        }
        let p = PotentialParams::new(1.0).unwrap();
        let (xi, eta): ([f64; 3], [f64; 3]) = ([0.3, -1.0, 0.5], [1.1, 0.2, -0.4]);
        let r2 = (0..3).map(|i| (eta[i] - xi[i]).powi(2)).sum::<f64>();
        let de = eta.iter().map(|x| x * x).sum::<f64>() - xi.iter().map(|x| x * x).sum::<f64>();
        let grad = 4.0 / (2.0 * PI).sqrt() / r2.sqrt() * (-(de * de / r2 + r2) / 8.0).exp();
        assert!((kernel_k2(&xi, &eta, &p).unwrap() - grad).abs() < 1e-12 * grad);
        assert!(kernel_k2(&xi, &xi, &p).is_err());
    }

    #[test]
    fn k2_table_matches_direct_quadrature() {
        for gamma in [0.0, 0.5, 1.0] {
            let p = PotentialParams::new(gamma).unwrap();
            let t = K2Table::new(&p, 6.0, 10.0).unwrap();
            // the first r-cell of the table only resolves T to ~1e-4: T has a
            // |r|-type kink at r = 0 for γ < 1
            for (xi, eta, tol) in [
                ([0.3, -1.0, 0.5], [1.1, 0.2, -0.4], 1e-6),
                ([2.0, 0.0, 0.0], [0.0, 1.5, 0.1], 1e-6),
                ([0.0, 0.0, 0.0], [0.01, 0.02, -0.01], 1e-3),
                ([3.0, -2.0, 1.0], [-2.5, 1.0, 0.5], 1e-6),
            ] {
                let a = t.k2(&xi, &eta).unwrap();
                let b = kernel_k2(&xi, &eta, &p).unwrap();
                assert!((a - b).abs() < tol * b.abs(), "gamma={gamma}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn periodic_sinc_is_cardinal() {
        let (n, h) = (12, 0.5);
        assert_eq!(periodic_sinc(0.0, n, h), 1.0);
        for k in 1..n {
            assert!(periodic_sinc(k as f64 * h, n, h).abs() < 1e-14);
        }
    }

    #[test]
    fn theta_hard_sphere_is_constant() {
        let p = PotentialParams::new(1.0).unwrap();
        for s in [0.0, 0.1, 1.0, 7.0] {
            assert!((p.theta(s) - 2.0).abs() < 1e-14);
        }
    }
}
