//! Slab geometry (x along e₃, period 2X): damped transport, the Duhamel
//! mixture ladder, full propagation and the particle/fluid split, plus the
//! weighted audits of the mixture operators.

use crate::audit::linear_fit;
use crate::error::{Error, Result};
use crate::kernels::{collision_frequency_radial, PotentialParams};
use crate::linalg::expm;
use crate::quadrature::gauss_legendre_on;
use crate::sector::ReducedSpace;
use faer::{c64, Mat};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Periodic slab [−X, X) resolved by `modes` Fourier modes; real fields keep
/// only k = 0..modes/2 − 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Slab {
    pub half_length: f64,
    pub modes: usize,
}

impl Slab {
    pub fn new(half_length: f64, modes: usize) -> Result<Self> {
        if !(half_length > 1.0) || modes < 4 || modes % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "slab needs X > 1 and an even mode count >= 4 (X = {half_length}, modes = {modes})"
            )));
        }
        Ok(Self { half_length, modes })
    }

    pub fn stored(&self) -> usize {
        self.modes / 2
    }

    pub fn eta(&self, k: usize) -> f64 {
        PI * k as f64 / self.half_length
    }
}

/// Fourier coefficients ĥ(η_k, ·) in sector coordinates: column k is mode k.
#[derive(Debug, Clone)]
pub struct ModeField {
    pub values: Mat<c64>,
    pub slab: Slab,
}

impl ModeField {
    pub fn zeros(dim: usize, slab: Slab) -> Self {
        Self { values: Mat::zeros(dim, slab.stored()), slab }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Sector coordinates of the real field at position x.
    pub fn at_x(&self, x: f64) -> Vec<f64> {
        let s = self.slab;
        let inv = 1.0 / (2.0 * s.half_length);
        let ph: Vec<c64> = (0..s.stored())
            .map(|k| {
                let a = s.eta(k) * x;
                c64::new(a.cos(), a.sin()) * if k == 0 { inv } else { 2.0 * inv }
            })
            .collect();
        (0..self.dim())
            .map(|i| (0..s.stored()).map(|k| (self.values[(i, k)] * ph[k]).re).sum())
            .collect()
    }

    /// Σ_a c_a² over x in L² (Parseval), per sector coordinate.
    pub fn l2x_squared(&self) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.slab.half_length);
        (0..self.dim())
            .map(|i| {
                (0..self.slab.stored())
                    .map(|k| self.values[(i, k)].norm_sqr() * if k == 0 { inv } else { 2.0 * inv })
                    .sum()
            })
            .collect()
    }

    pub fn add(&self, o: &ModeField) -> ModeField {
        ModeField { values: &self.values + &o.values, slab: self.slab }
    }

    pub fn sub(&self, o: &ModeField) -> ModeField {
        ModeField { values: &self.values - &o.values, slab: self.slab }
    }

    pub fn scale(&self, a: f64) -> ModeField {
        ModeField { values: Mat::from_fn(self.dim(), self.slab.stored(), |i, k| self.values[(i, k)] * a), slab: self.slab }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.slab.stored() {
            for i in 0..self.dim() {
                m = m.max(self.values[(i, k)].norm());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        (0..self.slab.stored()).all(|k| (0..self.dim()).all(|i| self.values[(i, k)].re.is_finite() && self.values[(i, k)].im.is_finite()))
    }
}

/// Linearized dynamics on the axisymmetric sector of a slab.
#[derive(Debug, Clone)]
pub struct SlabSystem {
    pub space: ReducedSpace,
    pub slab: Slab,
    k_re: Mat<f64>,
}

/// Ladder levels h⁽⁰⁾..h⁽ᴺ⁾ at time t and the remainder source Kh⁽ᴺ⁾.
#[derive(Debug, Clone)]
pub struct MixtureLadder {
    pub t: f64,
    pub levels: Vec<ModeField>,
    pub source: ModeField,
    pub time_steps: usize,
}

impl MixtureLadder {
    pub fn n(&self) -> usize {
        self.levels.len() - 1
    }

    /// 𝔾_* h₀ = Σ_{k≤N} h⁽ᵏ⁾.
    pub fn particle(&self) -> ModeField {
        let mut p = self.levels[0].clone();
        for l in &self.levels[1..] {
            p = p.add(l);
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct SplitSolution {
    pub t: f64,
    pub particle: ModeField,
    pub fluid: ModeField,
    pub full: ModeField,
    pub source: ModeField,
    pub n: usize,
}

/// C¹¹ bump (1 − x²)¹² supported in |x| ≤ 1.
pub fn default_bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - x * x).powi(12)
    }
}

impl SlabSystem {
    pub fn new(space: ReducedSpace, slab: Slab) -> Self {
        let k_re = space.k_matrix();
        Self { space, slab, k_re }
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Largest |ξ₃| on the grid.
    pub fn max_speed_x(&self) -> f64 {
        self.space.xi3.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Value carried at a grid node by a unit sector coordinate.
    pub fn node_scale(&self, a: usize) -> f64 {
        self.space.sector.node_scale(a)
    }

    /// ĥ₀ for h₀(x, ξ) = b(x) g(|ξ|) with b even and supported in |x| ≤ 1.
    pub fn initial_field(&self, bump: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> Result<ModeField> {
        let (xs, ws) = gauss_legendre_on(96, -1.0, 1.0);
        for probe in [1.0 + 1e-9, -1.0 - 1e-9, 1.5, -1.5] {
            if bump(probe) != 0.0 {
                return Err(Error::InvalidParameter("initial profile must vanish for |x| > 1".into()));
            }
        }
        let bhat: Vec<f64> = (0..self.slab.stored())
            .map(|k| {
                let e = self.slab.eta(k);
                xs.iter().zip(&ws).map(|(x, w)| w * bump(*x) * (e * x).cos()).sum()
            })
            .collect();
        // an orbit-invariant nodal value g has coordinate g/node_scale
        self.field_from(&bhat, |a| g(self.space.speed[a]) / self.node_scale(a))
    }

    /// Separable field with Fourier profile `bhat` and sector coordinates `coord(a)`.
    pub fn field_from(&self, bhat: &[f64], coord: impl Fn(usize) -> f64) -> Result<ModeField> {
        if bhat.len() != self.slab.stored() {
            return Err(Error::Dimension(format!("{} Fourier values for {} modes", bhat.len(), self.slab.stored())));
        }
        let c: Vec<f64> = (0..self.dim()).map(coord).collect();
        Ok(ModeField { values: Mat::from_fn(self.dim(), self.slab.stored(), |a, k| c64::new(c[a] * bhat[k], 0.0)), slab: self.slab })
    }

    /// S^t: multiply entry (a, k) by e^{−(ν + iξ₃η_k)t}.
    pub fn damped_transport(&self, f: &ModeField, t: f64) -> ModeField {
        let s = &self.space;
        ModeField {
            values: Mat::from_fn(self.dim(), self.slab.stored(), |a, k| {
                let z = c64::new(-s.nu[a] * t, -s.xi3[a] * self.slab.eta(k) * t);
                f.values[(a, k)] * z.exp()
            }),
            slab: self.slab,
        }
    }

    /// K applied to every mode.
    pub fn apply_k(&self, f: &ModeField) -> ModeField {
        let (d, m) = (self.dim(), self.slab.stored());
        let re = Mat::from_fn(d, m, |i, k| f.values[(i, k)].re);
        let im = Mat::from_fn(d, m, |i, k| f.values[(i, k)].im);
        let (a, b) = (&self.k_re * &re, &self.k_re * &im);
        ModeField { values: Mat::from_fn(d, m, |i, k| c64::new(a[(i, k)], b[(i, k)])), slab: self.slab }
    }

    /// Ladder levels on the lattice t_j = j·dt, returned at the steps listed
    /// in `record` (ascending). The Duhamel integrals use the composite
    /// trapezoid rule with S applied exactly.
    pub fn ladder_series(&self, h0: &ModeField, n: usize, dt: f64, record: &[usize]) -> Result<Vec<MixtureLadder>> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let last = record.iter().copied().max().unwrap_or(0);
        let s = &self.space;
        let phase = Mat::from_fn(self.dim(), self.slab.stored(), |a, k| {
            c64::new(-s.nu[a] * dt, -s.xi3[a] * self.slab.eta(k) * dt).exp()
        });
        let step = |f: &ModeField| ModeField {
            values: Mat::from_fn(f.dim(), f.slab.stored(), |a, k| f.values[(a, k)] * phase[(a, k)]),
            slab: f.slab,
        };
        let mut h: Vec<ModeField> = (0..=n).map(|m| if m == 0 { h0.clone() } else { ModeField::zeros(self.dim(), self.slab) }).collect();
        let mut kh: Vec<ModeField> = h.iter().map(|f| self.apply_k(f)).collect();
        let mut out = Vec::new();
        let mut next = 0;
        let mut push = |j: usize, h: &Vec<ModeField>, kh: &Vec<ModeField>, out: &mut Vec<MixtureLadder>| {
            while next < record.len() && record[next] == j {
                out.push(MixtureLadder { t: j as f64 * dt, levels: h.clone(), source: kh[n].clone(), time_steps: j });
                next += 1;
            }
        };
        push(0, &h, &kh, &mut out);
        for j in 0..last {
            let mut newh = Vec::with_capacity(n + 1);
            let mut newk: Vec<ModeField> = Vec::with_capacity(n + 1);
            newh.push(step(&h[0]));
            newk.push(self.apply_k(&newh[0]));
            for m in 1..=n {
                let a = step(&h[m].add(&kh[m - 1].scale(0.5 * dt)));
                let v = a.add(&newk[m - 1].scale(0.5 * dt));
                newk.push(self.apply_k(&v));
                newh.push(v);
            }
            h = newh;
            kh = newk;
            push(j + 1, &h, &kh, &mut out);
        }
        Ok(out)
    }

    /// h⁽⁰⁾..h⁽ᴺ⁾ at time t with `steps` trapezoid intervals.
    pub fn mixture_ladder(&self, h0: &ModeField, t: f64, n: usize, steps: usize) -> Result<MixtureLadder> {
        if steps < 8 {
            return Err(Error::InvalidParameter(format!("ladder needs at least 8 time steps, got {steps}")));
        }
        if t <= 0.0 {
            let k = self.apply_k(h0);
            let mut levels = vec![h0.clone()];
            levels.extend((0..n).map(|_| ModeField::zeros(self.dim(), self.slab)));
            let source = if n == 0 { k } else { ModeField::zeros(self.dim(), self.slab) };
            return Ok(MixtureLadder { t: 0.0, levels, source, time_steps: steps });
        }
        let mut r = self.ladder_series(h0, n, t / steps as f64, &[steps])?;
        Ok(r.pop().expect("one record"))
    }

    fn mode_matrix(&self, k: usize) -> Mat<c64> {
        let s = &self.space;
        let e = self.slab.eta(k);
        Mat::from_fn(self.dim(), self.dim(), |i, j| {
            let mut v = c64::new(s.l[(i, j)], 0.0);
            if i == j {
                v.im -= s.xi3[i] * e;
            }
            v
        })
    }

    /// Per-mode propagators e^{(−iξ₃η_k + L̃)t}.
    pub fn mode_propagators(&self, t: f64) -> Vec<Mat<c64>> {
        (0..self.slab.stored())
            .into_par_iter()
            .map(|k| {
                let a = self.mode_matrix(k);
                expm(&Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * t))
            })
            .collect()
    }

    fn apply_propagators(&self, props: &[Mat<c64>], f: &ModeField) -> ModeField {
        let d = self.dim();
        let cols: Vec<Vec<c64>> = (0..self.slab.stored())
            .into_par_iter()
            .map(|k| {
                let e = &props[k];
                (0..d).map(|i| (0..d).map(|j| e[(i, j)] * f.values[(j, k)]).sum()).collect()
            })
            .collect();
        ModeField { values: Mat::from_fn(d, self.slab.stored(), |i, k| cols[k][i]), slab: self.slab }
    }

    /// 𝔾ᵗh₀ mode by mode.
    pub fn full_green(&self, h0: &ModeField, t: f64) -> Result<ModeField> {
        if t < 0.0 {
            return Err(Error::InvalidParameter(format!("negative time {t}")));
        }
        Ok(self.apply_propagators(&self.mode_propagators(t), h0))
    }

    /// 𝔾^{j·dt}h₀ at the recorded steps.
    pub fn full_series(&self, h0: &ModeField, dt: f64, record: &[usize]) -> Vec<ModeField> {
        let props = self.mode_propagators(dt);
        let last = record.iter().copied().max().unwrap_or(0);
        let mut out = Vec::new();
        let mut h = h0.clone();
        let mut next = 0;
        for j in 0..=last {
            if j > 0 {
                h = self.apply_propagators(&props, &h);
            }
            while next < record.len() && record[next] == j {
                out.push(h.clone());
                next += 1;
            }
        }
        out
    }

    /// Particle and fluid parts at the recorded steps of the lattice j·dt.
    pub fn split_series(&self, h0: &ModeField, n: usize, dt: f64, record: &[usize]) -> Result<Vec<SplitSolution>> {
        if n < 1 {
            return Err(Error::InvalidParameter("particle/fluid split needs N >= 1".into()));
        }
        let ladders = self.ladder_series(h0, n, dt, record)?;
        let full = self.full_series(h0, dt, record);
        Ok(ladders
            .into_iter()
            .zip(full)
            .map(|(l, f)| {
                let p = l.particle();
                SplitSolution { t: l.t, fluid: f.sub(&p), particle: p, full: f, source: l.source, n }
            })
            .collect())
    }

    pub fn particle_fluid_split(&self, h0: &ModeField, t: f64, n: usize, steps: usize) -> Result<SplitSolution> {
        if steps < 8 {
            return Err(Error::InvalidParameter(format!("split needs at least 8 time steps, got {steps}")));
        }
        let mut r = self.split_series(h0, n, t / steps as f64, &[steps])?;
        Ok(r.pop().expect("one record"))
    }

    /// Largest x at which the field can be nonzero at time t.
    pub fn support_radius(&self, t: f64) -> f64 {
        1.0 + self.max_speed_x() * t
    }

    /// sup over nodes of ω(ξ)|f(x, ξ)| on the given positions.
    pub fn weighted_sup(&self, f: &ModeField, xs: &[f64], weight: impl Fn(usize) -> f64 + Sync, spatial: impl Fn(f64) -> f64 + Sync) -> f64 {
        xs.par_iter()
            .map(|&x| {
                let v = f.at_x(x);
                let sx = spatial(x);
                v.iter().enumerate().map(|(a, c)| c.abs() * self.node_scale(a) * weight(a) * sx).fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// ‖(1+|ξ|)ᴾ f‖_{L²_ξ L²_x}.
    pub fn weighted_l2(&self, f: &ModeField, p: f64) -> f64 {
        let s = f.l2x_squared();
        (s.iter().enumerate().map(|(a, v)| v * (1.0 + self.space.speed[a]).powf(2.0 * p)).sum::<f64>() * self.space.w).sqrt()
    }
}

/// Fitted exponential rate c of y ≈ C e^{−ct}, with RMS log residual.
pub fn exponential_rate(t: &[f64], y: &[f64]) -> (f64, f64) {
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (s, _, r) = linear_fit(t, &ly);
    (-s, r)
}

#[derive(Debug, Clone, Serialize)]
pub struct TradeoffCase {
    pub m: f64,
    pub p: f64,
    /// M(1−γ) + P − Q.
    pub excess: f64,
    /// Growth exponent of sup_{t,x} of the weighted value along the ξ-ray.
    pub fitted_exponent: f64,
    pub predicted_bounded: bool,
    pub observed_bounded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TradeoffAudit {
    pub gamma: f64,
    pub q: f64,
    pub c0: f64,
    pub cases: Vec<TradeoffCase>,
    /// Largest |fitted − excess| over the sweep.
    pub max_exponent_error: f64,
    /// Cases with |excess| ≥ margin where prediction and observation disagree.
    pub mismatches: usize,
    pub margin: f64,
}

/// sup over (t, x) of e^{c₀ν t}(1+|x|)ᴹ(1+|ξ|)ᴾ|h⁽⁰⁾| for the exact damped
/// transport of h₀ = b(x)(1+|ξ|)^{−Q} at |ξ| = v.
fn ray_sup(v: f64, nu: f64, m: f64, p: f64, q: f64, c0: f64) -> f64 {
    let (ys, _) = gauss_legendre_on(24, -1.0, 1.0);
    let tmax = 80.0 / nu;
    let mut best: f64 = 0.0;
    for j in 0..=600 {
        let t = tmax * (j as f64 / 600.0).powi(2);
        let damp = (-(1.0 - c0) * nu * t).exp();
        for &y in ys.iter().chain([0.0, 0.9].iter()) {
            let x = v * t + y;
            let val = damp * (1.0 + x.abs()).powf(m) * (1.0 + v).powf(p - q) * default_bump(y);
            best = best.max(val);
        }
    }
    best
}

/// N = 0 tradeoff law: along ξ-rays up to |ξ| = 10⁴ the weighted value stays
/// bounded exactly when M(1−γ) + P ≤ Q.
pub fn tradeoff_audit(params: &PotentialParams, q: f64, c0: f64, ms: &[f64], ps: &[f64]) -> Result<TradeoffAudit> {
    let speeds: Vec<f64> = (0..13).map(|k| 10f64.powf(2.0 + k as f64 / 6.0)).collect();
    let nus: Vec<f64> = speeds.iter().map(|&v| collision_frequency_radial(v, params)).collect::<Result<_>>()?;
    let margin = 0.25;
    let mut cases = Vec::new();
    for &m in ms {
        for &p in ps {
            let y: Vec<f64> = speeds.iter().zip(&nus).map(|(&v, &nu)| ray_sup(v, nu, m, p, q, c0).ln()).collect();
            let x: Vec<f64> = speeds.iter().map(|v| (1.0 + v).ln()).collect();
            let (slope, _, _) = linear_fit(&x, &y);
            let excess = m * (1.0 - params.gamma) + p - q;
            cases.push(TradeoffCase {
                m,
                p,
                excess,
                fitted_exponent: slope,
                predicted_bounded: excess <= 0.0,
                observed_bounded: slope <= 0.05,
            });
        }
    }
    let max_exponent_error = cases.iter().map(|c| (c.fitted_exponent - c.excess).abs()).fold(0.0, f64::max);
    let mismatches = cases.iter().filter(|c| c.excess.abs() >= margin && c.predicted_bounded != c.observed_bounded).count();
    Ok(TradeoffAudit { gamma: params.gamma, q, c0, cases, max_exponent_error, mismatches, margin })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecaySeries {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub rate: f64,
    pub residual: f64,
    /// Fit window [t_a, t_b].
    pub window: [f64; 2],
}

/// Exponential fit of a positive series over t ≥ `from`.
pub fn fit_decay_series(t: &[f64], values: &[f64], from: f64) -> DecaySeries {
    let (tt, vv): (Vec<f64>, Vec<f64>) = t.iter().zip(values).filter(|(a, v)| **a >= from && **v > 0.0).map(|(a, v)| (*a, *v)).unzip();
    let (rate, residual) = if tt.len() >= 2 { exponential_rate(&tt, &vv) } else { (f64::NAN, f64::NAN) };
    DecaySeries {
        window: [tt.first().copied().unwrap_or(f64::NAN), tt.last().copied().unwrap_or(f64::NAN)],
        t: t.to_vec(),
        values: values.to_vec(),
        rate,
        residual,
    }
}

/// Spatial lattice inside the characteristic support at time t.
pub fn support_lattice(sys: &SlabSystem, t: f64, count: usize) -> Vec<f64> {
    let r = sys.support_radius(t).min(sys.slab.half_length);
    (0..count).map(|j| r * j as f64 / (count - 1) as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PointwiseTable {
    pub n: usize,
    pub m: f64,
    pub p: f64,
    pub q: f64,
    pub c0: f64,
    pub t: Vec<f64>,
    /// sup over (x, ξ) of e^{c₀ν t}(1+|x|)ᴹ(1+|ξ|)ᴾ|h⁽ᴺ⁾| at each t.
    pub sup: Vec<f64>,
    /// Growth rate of the sup over the second half of the window (≤ 0 when bounded).
    pub late_growth_rate: f64,
    pub bounded: bool,
}

/// Weighted pointwise table of one ladder level over a recorded series.
pub fn pointwise_table(sys: &SlabSystem, series: &[MixtureLadder], level: usize, m: f64, p: f64, q: f64, c0: f64) -> PointwiseTable {
    let t: Vec<f64> = series.iter().map(|l| l.t).collect();
    let sup: Vec<f64> = series
        .iter()
        .map(|l| {
            let xs = support_lattice(sys, l.t, 161);
            let tt = l.t;
            sys.weighted_sup(
                &l.levels[level],
                &xs,
                |a| (c0 * sys.space.nu[a] * tt).exp() * (1.0 + sys.space.speed[a]).powf(p),
                |x| (1.0 + x.abs()).powf(m),
            )
        })
        .collect();
    let half = t[t.len() - 1] / 2.0;
    let fit = fit_decay_series(&t, &sup, half);
    let late_growth_rate = -fit.rate;
    let finite = sup.iter().all(|v| v.is_finite());
    PointwiseTable { n: level, m, p, q, c0, t, bounded: finite && late_growth_rate <= 0.0, sup, late_growth_rate }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToleratedWeight {
    /// −slope of log sup_{t,x}|f| against log(1+|ξ|) over |ξ| ≥ `from_speed`.
    pub weight: f64,
    pub residual: f64,
    pub from_speed: f64,
}

/// Velocity weight a time series tolerates: the decay power of its
/// velocity profile sup_{t,x}|f(t,x,ξ)| over the outer velocity shells.
pub fn tolerated_weight(sys: &SlabSystem, fields: &[(f64, &ModeField)], from_speed: f64) -> ToleratedWeight {
    let d = sys.dim();
    let mut prof = vec![0.0f64; d];
    for (t, f) in fields {
        let xs = support_lattice(sys, *t, 161);
        let vals: Vec<Vec<f64>> = xs.par_iter().map(|&x| f.at_x(x)).collect();
        for v in &vals {
            for a in 0..d {
                prof[a] = prof[a].max(v[a].abs() * sys.node_scale(a));
            }
        }
    }
    let rmax = sys.space.speed.iter().cloned().fold(0.0, f64::max);
    let cut = rmax.min(sys.space.xi3.iter().fold(0.0, |m: f64, v| m.max(v.abs())) + 0.5);
    let (x, y): (Vec<f64>, Vec<f64>) = (0..d)
        .filter(|&a| sys.space.speed[a] >= from_speed && sys.space.speed[a] <= cut && prof[a] > 0.0)
        .map(|a| ((1.0 + sys.space.speed[a]).ln(), prof[a].ln()))
        .unzip();
    let (s, _, r) = linear_fit(&x, &y);
    ToleratedWeight { weight: -s, residual: r, from_speed }
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureAuditConfig {
    pub levels: usize,
    pub weight_p: f64,
    pub q: f64,
    /// Candidate rates c₀ for the pointwise tables, tried in order.
    pub c0_candidates: Vec<f64>,
    pub t_final: f64,
    pub steps_per_unit: usize,
    pub record_every: usize,
    /// (M, P, N) combinations; each must satisfy N ≥ (P + M(1−γ) − Q)/2.
    pub combos: Vec<(f64, f64, usize)>,
}

impl Default for MixtureAuditConfig {
    fn default() -> Self {
        Self {
            levels: 6,
            weight_p: 2.0,
            q: 2.0,
            c0_candidates: vec![0.5, 0.25, 0.125, 0.0625],
            t_final: 5.0,
            steps_per_unit: 64,
            record_every: 16,
            combos: vec![(0.0, 2.0, 0), (4.0, 0.0, 0), (2.0, 3.0, 1), (4.0, 2.0, 1), (4.0, 4.0, 2), (0.0, 6.0, 2), (4.0, 6.0, 3)],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaDecay {
    pub theta: f64,
    pub decay: DecaySeries,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnhancedMixtureReport {
    pub gamma: f64,
    /// ‖(1+|ξ|)ᴾ M_N h₀‖_{L²} against t with its exponential fit.
    pub weighted_l2: DecaySeries,
    /// Largest candidate c₀ for which every table is bounded (NaN if none).
    pub c0: f64,
    pub tables: Vec<PointwiseTable>,
    pub tables_bounded: bool,
    /// sup ⟨x⟩^{θ/(1−γ)}(1+|ξ|)^{Q−θ}|h⁽ᴺ⁾| against t for θ ∈ {0, 1, 2}.
    pub prop_decay: Vec<ThetaDecay>,
    /// Tolerated velocity weight of each level h⁽⁰⁾..h⁽ᴺ⁾.
    pub level_weights: Vec<f64>,
    pub tradeoff: TradeoffAudit,
}

/// Ladder-based audits for h₀ = b(x)(1+|ξ|)^{−Q} with b supported in |x| ≤ 1.
pub fn enhanced_mixture_audit(sys: &SlabSystem, params: &PotentialParams, cfg: &MixtureAuditConfig) -> Result<EnhancedMixtureReport> {
    if cfg.levels > 8 {
        return Err(Error::InvalidParameter(format!("mixture depth {} exceeds the budget of 8", cfg.levels)));
    }
    let g = params.gamma;
    for &(m, p, n) in &cfg.combos {
        if (n as f64) < (p + m * (1.0 - g) - cfg.q) / 2.0 || n > cfg.levels {
            return Err(Error::InvalidParameter(format!("(M, P, N) = ({m}, {p}, {n}) violates N ≥ (P + M(1−γ) − Q)/2 or exceeds the depth")));
        }
    }
    if sys.support_radius(cfg.t_final) > sys.slab.half_length {
        return Err(Error::InvalidParameter(format!(
            "support 1 + {:.2}·{} exceeds the slab half-length {}",
            sys.max_speed_x(),
            cfg.t_final,
            sys.slab.half_length
        )));
    }
    let q = cfg.q;
    let h0 = sys.initial_field(default_bump, |v| (1.0 + v).powf(-q))?;
    let dt = 1.0 / cfg.steps_per_unit as f64;
    let total = (cfg.t_final * cfg.steps_per_unit as f64).round() as usize;
    let record: Vec<usize> = (0..=total).step_by(cfg.record_every).collect();
    let series = sys.ladder_series(&h0, cfg.levels, dt, &record)?;
    let t: Vec<f64> = series.iter().map(|l| l.t).collect();
    let n = cfg.levels;
    let l2: Vec<f64> = series.iter().map(|l| sys.weighted_l2(&l.levels[n], cfg.weight_p)).collect();
    let weighted_l2 = fit_decay_series(&t, &l2, 0.5 * cfg.t_final);
    let mut c0 = f64::NAN;
    let mut tables = Vec::new();
    for &c in &cfg.c0_candidates {
        tables = cfg.combos.iter().map(|&(m, p, lv)| pointwise_table(sys, &series, lv, m, p, q, c)).collect();
        if tables.iter().all(|t: &PointwiseTable| t.bounded) {
            c0 = c;
            break;
        }
    }
    let tables_bounded = c0.is_finite();
    let prop_decay = [0.0, 1.0, 2.0]
        .iter()
        .map(|&theta| {
            let vals: Vec<f64> = series
                .iter()
                .map(|l| {
                    let xs = support_lattice(sys, l.t, 161);
                    sys.weighted_sup(
                        &l.levels[n],
                        &xs,
                        |a| (1.0 + sys.space.speed[a]).powf(q - theta),
                        |x| (1.0 + x * x).sqrt().powf(theta / (1.0 - g)),
                    )
                })
                .collect();
            ThetaDecay { theta, decay: fit_decay_series(&t, &vals, 0.5 * cfg.t_final) }
        })
        .collect();
    let level_weights = (0..=n)
        .map(|lv| {
            let fields: Vec<(f64, &ModeField)> = series.iter().map(|l| (l.t, &l.levels[lv])).collect();
            tolerated_weight(sys, &fields, 3.0).weight
        })
        .collect();
    let tradeoff = tradeoff_audit(
        params,
        q,
        0.5,
        &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
    )?;
    Ok(EnhancedMixtureReport { gamma: g, weighted_l2, c0, tables, tables_bounded, prop_decay, level_weights, tradeoff })
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub n: usize,
    pub t: Vec<f64>,
    pub particle_sup: Vec<f64>,
    pub fluid_sup: Vec<f64>,
    pub particle_decay: DecaySeries,
    pub particle_weight: ToleratedWeight,
    pub fluid_weight: ToleratedWeight,
    /// max over recorded times of |full − particle − fluid| / |full|.
    pub partition_defect: f64,
}

/// Particle/fluid split of h₀ = b(x)(1+|ξ|)^{−Q} with decay and weight diagnostics.
pub fn split_audit(sys: &SlabSystem, q: f64, n: usize, t_final: f64, steps_per_unit: usize, record_every: usize) -> Result<SplitReport> {
    let h0 = sys.initial_field(default_bump, |v| (1.0 + v).powf(-q))?;
    let dt = 1.0 / steps_per_unit as f64;
    let total = (t_final * steps_per_unit as f64).round() as usize;
    let record: Vec<usize> = (0..=total).step_by(record_every).collect();
    let split = sys.split_series(&h0, n, dt, &record)?;
    let t: Vec<f64> = split.iter().map(|s| s.t).collect();
    let sup = |f: &ModeField, tt: f64| sys.weighted_sup(f, &support_lattice(sys, tt, 161), |_| 1.0, |_| 1.0);
    let particle_sup: Vec<f64> = split.iter().map(|s| sup(&s.particle, s.t)).collect();
    let fluid_sup: Vec<f64> = split.iter().map(|s| sup(&s.fluid, s.t)).collect();
    let partition_defect = split
        .iter()
        .map(|s| s.full.sub(&s.particle).sub(&s.fluid).max_abs() / s.full.max_abs())
        .fold(0.0, f64::max);
    let pf: Vec<(f64, &ModeField)> = split.iter().map(|s| (s.t, &s.particle)).collect();
    let ff: Vec<(f64, &ModeField)> = split.iter().map(|s| (s.t, &s.fluid)).collect();
    Ok(SplitReport {
        n,
        particle_decay: fit_decay_series(&t, &particle_sup, 0.5 * t_final),
        particle_weight: tolerated_weight(sys, &pf, 3.0),
        fluid_weight: tolerated_weight(sys, &ff, 3.0),
        t,
        particle_sup,
        fluid_sup,
        partition_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_is_compact() {
        assert_eq!(default_bump(1.0), 0.0);
        assert_eq!(default_bump(0.0), 1.0);
        assert!(default_bump(0.5) > 0.0);
    }

    #[test]
    fn slab_validation() {
        assert!(Slab::new(0.5, 16).is_err());
        assert!(Slab::new(10.0, 15).is_err());
        let s = Slab::new(10.0, 16).unwrap();
        assert_eq!(s.stored(), 8);
        assert!((s.eta(2) - PI / 5.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_rate_recovers_decay() {
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|s| 3.0 * (-1.7 * s).exp()).collect();
        let (c, r) = exponential_rate(&t, &y);
        assert!((c - 1.7).abs() < 1e-12 && r < 1e-12);
    }
}
