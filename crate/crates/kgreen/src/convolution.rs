//! Space-time convolutions of radial envelopes,
//! (E₁ ∗ E₂)(x, t) = ∫₀ᵗ∫_{ℝ³} E₁(x−y, t−τ) E₂(y, τ) dy dτ,
//! and the suite of interaction estimates they are compared against.

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::spectral::SOUND_SPEED;
use crate::waves::{Envelope, EnvelopeKind};
use rayon::prelude::*;
use serde::Serialize;
use std::cell::Cell;
use std::f64::consts::PI;

/// Relative tolerance of the nested adaptive quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvTolerance {
    pub rel: f64,
}

impl Default for ConvTolerance {
    fn default() -> Self {
        Self { rel: 1e-5 }
    }
}

impl ConvTolerance {
    pub fn refined(self) -> Self {
        Self { rel: self.rel * 1e-2 }
    }
}

fn has_closed_primitive(e: &Envelope) -> bool {
    !matches!(e.kind, EnvelopeKind::Huygens)
}

/// ∫_a^b (1+r²/T)^{−m} r dr.
fn diffusion_primitive(a: f64, b: f64, big_t: f64, m: f64) -> f64 {
    let (ua, ub) = (a * a / big_t, b * b / big_t);
    if (m - 1.0).abs() < 1e-12 {
        0.5 * big_t * ((ub - ua) / (1.0 + ua)).ln_1p()
    } else {
        // T/(2(1−m)) [(1+ub)^{1−m} − (1+ua)^{1−m}], written to avoid cancellation
        let q = (1.0 - m) * ((1.0 + ub) / (1.0 + ua)).ln();
        0.5 * big_t * (1.0 + ua).powf(1.0 - m) * q.exp_m1() / (1.0 - m)
    }
}

/// ∫_a^b (1+r)^{−p} r dr.
fn algebraic_primitive(a: f64, b: f64, p: f64) -> f64 {
    let g = |r: f64, q: f64| {
        if (q - 1.0).abs() < 1e-12 {
            (1.0 + r).ln()
        } else {
            (1.0 + r).powf(1.0 - q) / (1.0 - q)
        }
    };
    // r(1+r)^{−p} = (1+r)^{1−p} − (1+r)^{−p}
    (g(b, p - 1.0) - g(a, p - 1.0)) - (g(b, p) - g(a, p))
}

/// ∫_a^b E(r, t) r dr.
fn radial_primitive(e: &Envelope, t: f64, a: f64, mut b: f64, tol: f64, err: &Cell<Option<Error>>) -> f64 {
    if e.inside_cone {
        b = b.min(e.speed * t);
    }
    if b <= a {
        return 0.0;
    }
    let big_t = 1.0 + t;
    match e.kind {
        EnvelopeKind::Diffusion => big_t.powf(-e.time_power) * diffusion_primitive(a, b, big_t, e.profile_order),
        EnvelopeKind::StaticExp => (-e.time_power * t).exp() * algebraic_primitive(a, b, e.profile_order),
        EnvelopeKind::StaticAlg => big_t.powf(-e.time_power) * algebraic_primitive(a, b, e.profile_order),
        EnvelopeKind::Huygens => {
            let c = e.speed * t;
            let w = big_t.sqrt();
            let brk = [c - 3.0 * w, c - w, c, c + w, c + 3.0 * w];
            match integrate(|r| r * e.eval(r, t), a, b, &brk, tol, 0.0) {
                Ok(v) => v,
                Err(x) => {
                    err.set(Some(x));
                    f64::NAN
                }
            }
        }
    }
}

/// Spatial integral ∫ E₁(x−y, s₁) E₂(y, s₂) dy for radial envelopes, with the
/// primitive taken of `inner`: (2π/x)∫₀^∞ ρ E₂(ρ) ∫_{|x−ρ|}^{x+ρ} r E₁(r) dr dρ.
fn spatial_integral(
    inner: &Envelope,
    s1: f64,
    outer: &Envelope,
    s2: f64,
    x: f64,
    tol: f64,
    err: &Cell<Option<Error>>,
) -> f64 {
    let mut brk: Vec<f64> = outer.breakpoints(s2);
    brk.push(x);
    for b in inner.breakpoints(s1) {
        brk.extend([x + b, x - b, b - x]);
    }
    brk.retain(|v| *v > 0.0);
    let reach = brk.iter().cloned().fold(x + 1.0, f64::max) + 20.0 * (1.0 + s1.max(s2)).sqrt() + 20.0;
    let f = |rho: f64| -> f64 {
        if x < 1e-12 {
            4.0 * PI * rho * rho * inner.eval(rho, s1) * outer.eval(rho, s2)
        } else {
            2.0 * PI / x * rho * outer.eval(rho, s2) * radial_primitive(inner, s1, (x - rho).abs(), x + rho, tol, err)
        }
    };
    let near = match integrate(f, 0.0, reach, &brk, tol, 0.0) {
        Ok(v) => v,
        Err(e) => {
            err.set(Some(e));
            return f64::NAN;
        }
    };
    // tail ρ ∈ [reach, ∞) via ρ = reach/u
    let tail = integrate(|u: f64| if u <= 0.0 { 0.0 } else { f(reach / u) * reach / (u * u) }, 0.0, 1.0, &[], tol, 0.0);
    match tail {
        Ok(v) => near + v,
        Err(e) => {
            err.set(Some(e));
            f64::NAN
        }
    }
}

/// (E₁ ∗ E₂)(|x|, t).
pub fn conv_envelope(e1: &Envelope, e2: &Envelope, x: f64, t: f64, tol: ConvTolerance) -> Result<f64> {
    if !(t >= 0.0) || !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!("(x, t) = ({x}, {t})")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    // the primitive is taken of an envelope with a closed form when possible
    let swap = !has_closed_primitive(e1) && has_closed_primitive(e2);
    let err = Cell::new(None);
    let mut tb: Vec<f64> = vec![0.5 * t, 1.0, 5.0, t - 1.0, t - 5.0];
    for e in [e1, e2] {
        if e.speed > 0.0 {
            // times where a cone or ridge passes through |x|
            tb.extend([x / e.speed, t - x / e.speed]);
        }
    }
    tb.retain(|v| *v > 0.0 && *v < t);
    let g = |tau: f64| -> f64 {
        if swap {
            // ∫ E₂(x−y, τ') E₁(y, t−τ') dy with τ' = t − τ
            spatial_integral(e2, tau, e1, t - tau, x, tol.rel, &err)
        } else {
            spatial_integral(e1, t - tau, e2, tau, x, tol.rel, &err)
        }
    };
    let v = integrate(g, 0.0, t, &tb, tol.rel, 0.0)?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(v)
}

/// Sum of envelopes.
#[derive(Debug, Clone, Serialize)]
pub struct Bound(pub Vec<Envelope>);

impl Bound {
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        self.0.iter().map(|e| e.eval(x, t)).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvolutionCase {
    pub name: String,
    pub left: Envelope,
    pub right: Envelope,
    pub bound: Bound,
    /// Cone speed used to place the lattice.
    pub speed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticePoint {
    pub x: f64,
    pub t: f64,
    pub value: f64,
    pub bound: f64,
    pub ratio: f64,
    /// Relative change under tolerance refinement.
    pub refinement: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvolutionReport {
    pub name: String,
    pub points: Vec<LatticePoint>,
    pub sup_ratio: f64,
    /// Per-time sup of the ratio.
    pub ratio_by_time: Vec<(f64, f64)>,
    pub finite: bool,
    /// Log-log slopes of the per-time sup-ratio over the last decade of t.
    pub local_slopes: Vec<f64>,
    /// At the end of the last decade the sup-ratio is non-increasing, or its
    /// log-log slope has fallen at least 25% below its peak over the decade
    /// (saturating growth rather than a power-law excess).
    pub trend_stable: bool,
    pub max_refinement: f64,
}

/// Proof-region lattice: |x| ∈ {0, ct/2, ct−√(1+t), ct, ct+√(1+t), 2ct} ∪ fixed radii.
pub fn proof_lattice(t: f64, c: f64, fixed: &[f64]) -> Vec<f64> {
    let w = (1.0 + t).sqrt();
    let mut v = vec![0.0, 0.5 * c * t, c * t - w, c * t, c * t + w, 2.0 * c * t];
    v.extend_from_slice(fixed);
    v.retain(|x| *x >= 0.0);
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    v
}

/// Evaluate a case on the lattice at `times`; each point is also recomputed
/// at the refined tolerance.
pub fn run_case(case: &ConvolutionCase, times: &[f64], fixed: &[f64], tol: ConvTolerance) -> Result<ConvolutionReport> {
    let pts: Vec<(f64, f64)> =
        times.iter().flat_map(|&t| proof_lattice(t, case.speed, fixed).into_iter().map(move |x| (x, t))).collect();
    let points: Vec<LatticePoint> = pts
        .par_iter()
        .map(|&(x, t)| -> Result<LatticePoint> {
            let v = conv_envelope(&case.left, &case.right, x, t, tol)?;
            let vr = conv_envelope(&case.left, &case.right, x, t, tol.refined())?;
            let b = case.bound.eval(x, t);
            Ok(LatticePoint { x, t, value: vr, bound: b, ratio: vr / b, refinement: (v - vr).abs() / vr.abs().max(1e-300) })
        })
        .collect::<Result<_>>()?;
    let finite = points.iter().all(|p| p.ratio.is_finite());
    let sup_ratio = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    let ratio_by_time: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| (t, points.iter().filter(|p| p.t == t).map(|p| p.ratio).fold(0.0, f64::max)))
        .collect();
    let t_end = times.iter().cloned().fold(0.0, f64::max);
    let decade: Vec<(f64, f64)> = ratio_by_time.iter().copied().filter(|(t, _)| *t >= 0.1 * t_end).collect();
    let local_slopes: Vec<f64> =
        decade.windows(2).map(|w| (w[1].1 / w[0].1).ln() / ((1.0 + w[1].0) / (1.0 + w[0].0)).ln()).collect();
    let peak = local_slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let trend_stable = match local_slopes.last() {
        Some(&last) => last <= 1e-2 || last <= 0.75 * peak,
        None => true,
    };
    let max_refinement = points.iter().map(|p| p.refinement).fold(0.0, f64::max);
    Ok(ConvolutionReport {
        name: case.name.clone(),
        points,
        sup_ratio,
        ratio_by_time,
        finite,
        local_slopes,
        trend_stable,
        max_refinement,
    })
}

/// Parameters of the interaction suite.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SuiteParams {
    pub m: f64,
    pub k: u32,
    pub gamma: f64,
    /// Exponential rate of the static envelopes.
    pub rate: f64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self { m: 3.0, k: 3, gamma: 0.5, rate: 0.5 }
    }
}

impl SuiteParams {
    pub fn theta1(&self) -> f64 {
        6.0 * (1.0 - self.gamma) * (1.0 - 0.5f64.powi(self.k as i32))
    }
}

/// The five fluid interaction items, the two particle interaction items and
/// the two space-time lemmas.
pub fn interaction_cases(p: &SuiteParams) -> Vec<ConvolutionCase> {
    let c = SOUND_SPEED;
    let m = p.m;
    let rhs = Bound(vec![Envelope::diffusion(2.0, 1.5), Envelope::huygens(2.5, 1.0, c)]);
    let q = 1.0 - 0.5f64.powi(p.k as i32);
    let stat = Envelope::static_exp(p.rate, p.theta1() / (1.0 - p.gamma));
    let case = |name: &str, l: Envelope, r: Envelope, b: Bound, s: f64| ConvolutionCase {
        name: name.into(),
        left: l,
        right: r,
        bound: b,
        speed: s,
    };
    vec![
        case(
            "sharp-1",
            Envelope::diffusion(2.0, m),
            Envelope::diffusion(3.0, 3.0),
            Bound(vec![Envelope::diffusion(2.0, 3.0)]),
            c,
        ),
        case("sharp-2", Envelope::diffusion(2.0, 1.5).gated(c), Envelope::huygens(4.0, 2.0, c), rhs.clone(), c),
        case("sharp-3", Envelope::huygens(2.5, m, c), Envelope::diffusion(3.0, 3.0), rhs.clone(), c),
        case("sharp-4", Envelope::diffusion(2.0, m), Envelope::huygens(4.0, 2.0, c), rhs.clone(), c),
        case("sharp-5", Envelope::huygens(2.5, m, c), Envelope::huygens(4.0, 2.0, c), rhs, c),
        case(
            "star-1",
            stat,
            Envelope::diffusion(3.0, 3.0 * q),
            Bound(vec![Envelope::diffusion(3.0, 3.0 * q)]),
            c,
        ),
        case(
            "star-2",
            stat,
            Envelope::huygens(3.0 + q, 2.0 * q, c),
            Bound(vec![Envelope::huygens(3.0 + q, 2.0 * q, c)]),
            c,
        ),
        case(
            "lemma-diffusion",
            Envelope::diffusion(1.5, 1.5),
            Envelope::static_exp(p.rate, 5.0),
            Bound(vec![Envelope::diffusion(1.5, 1.5)]),
            1.0,
        ),
        case(
            "lemma-huygens",
            Envelope::huygens(2.0, 2.0, 1.0),
            Envelope::static_exp(p.rate, 5.0),
            Bound(vec![Envelope::huygens(2.0, 2.0, 1.0)]),
            1.0,
        ),
    ]
}

/// Default time samples: log-spaced on [1, 100].
pub fn default_times(count: usize) -> Vec<f64> {
    crate::waves::log_times(1.0, 100.0, count)
}

pub fn interaction_suite(p: &SuiteParams, times: &[f64], tol: ConvTolerance) -> Result<Vec<ConvolutionReport>> {
    interaction_cases(p).iter().map(|c| run_case(c, times, &[1.0, 5.0], tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    #[test]
    fn primitives_match_quadrature() {
        for (a, b, tt, m) in [(0.0, 3.0, 5.0, 2.5), (1.0, 7.0, 2.0, 1.0), (2.0, 2.5, 10.0, 0.5)] {
            let q = integrate(|r| r * (1.0 + r * r / tt).powf(-m), a, b, &[], 1e-12, 0.0).unwrap();
            assert!((diffusion_primitive(a, b, tt, m) - q).abs() < 1e-10 * q.abs().max(1.0));
        }
        for (a, b, p) in [(0.0, 4.0, 5.25), (1.0, 9.0, 1.0), (0.5, 3.0, 2.0)] {
            let q = integrate(|r| r * (1.0 + r).powf(-p), a, b, &[], 1e-12, 0.0).unwrap();
            assert!((algebraic_primitive(a, b, p) - q).abs() < 1e-10 * q.abs().max(1.0));
        }
    }

    #[test]
    fn zero_time_slice_vanishes() {
        let e = Envelope::diffusion(2.0, 3.0);
        assert_eq!(conv_envelope(&e, &e, 1.0, 0.0, ConvTolerance::default()).unwrap(), 0.0);
    }
}
