//! Audits of the assembled operator and of the continuum kernel bounds.

use crate::error::Result;
use crate::kernels::{kernel_k1, kernel_k2_tol, KernelMatrixBundle, PotentialParams};
use crate::linalg::symmetric_eigenvalues;
use crate::quadrature::integrate;
use crate::sector::projected_l;
use crate::velocity::{norm3, MacroBasis};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Least-squares slope and intercept of y against x, with the RMS residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let res = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, res)
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorReport {
    pub asymmetry: f64,
    /// ‖Lχⱼ‖/‖χⱼ‖ for j = 0..4.
    pub null_residuals: [f64; 5],
    /// max over random g of ⟨g, Lg⟩/‖g‖².
    pub max_rayleigh: f64,
    /// Smallest nonzero eigenvalue of D^{-1/2}(−L̃)D^{-1/2}, D = diag ν.
    pub coercivity: f64,
}

/// ‖Lχⱼ‖/‖χⱼ‖ in the discrete inner product.
pub fn null_residuals(bundle: &KernelMatrixBundle, basis: &MacroBasis) -> [f64; 5] {
    let g = &bundle.grid;
    std::array::from_fn(|j| {
        let lc = bundle.apply_l(&basis.chi[j]);
        g.norm(&lc) / g.norm(&basis.chi[j])
    })
}

/// Largest Rayleigh quotient ⟨g, Lg⟩/‖g‖² over `count` seeded Gaussian vectors.
pub fn max_rayleigh(bundle: &KernelMatrixBundle, count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = bundle.nu.len();
    let samples: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let (u, v): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
                    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
                })
                .collect()
        })
        .collect();
    samples
        .par_iter()
        .map(|g| {
            let lg = bundle.apply_l(g);
            bundle.grid.dot(g, &lg) / bundle.grid.dot(g, g)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Fitted coercivity constant ν̂₀: the sixth smallest eigenvalue of
/// D^{-1/2}(−L̃)D^{-1/2}, whose first five vanish on the invariants.
pub fn coercivity_constant(bundle: &KernelMatrixBundle, basis: &MacroBasis) -> Result<f64> {
    let l = projected_l(bundle, basis);
    let m = l.nrows();
    let s: Vec<f64> = bundle.nu.iter().map(|v| 1.0 / v.sqrt()).collect();
    let a = Mat::from_fn(m, m, |i, j| -l[(i, j)] * s[i] * s[j]);
    let ev = symmetric_eigenvalues(&a)?;
    Ok(ev[5])
}

pub fn operator_report(bundle: &KernelMatrixBundle, random_vectors: usize, seed: u64) -> Result<OperatorReport> {
    let basis = MacroBasis::new(&bundle.grid);
    Ok(OperatorReport {
        asymmetry: bundle.asymmetry(),
        null_residuals: null_residuals(bundle, &basis),
        max_rayleigh: max_rayleigh(bundle, random_vectors, seed),
        coercivity: coercivity_constant(bundle, &basis)?,
    })
}

/// Common Gaussian factor of the envelopes H⁽⁰⁾ and H⁽¹⁾.
fn envelope_core(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams) -> (f64, f64, f64) {
    let d = [eta[0] - xi[0], eta[1] - xi[1], eta[2] - xi[2]];
    let r = norm3(&d);
    let q = norm3(eta).powi(2) - norm3(xi).powi(2);
    let e = (-p.qprime / 8.0 * (q * q / (r * r) + r * r)).exp();
    let alg = (1.0 + norm3(xi) + norm3(eta)).powf(p.gamma - 1.0);
    let cross = [xi[1] * d[2] - xi[2] * d[1], xi[2] * d[0] - xi[0] * d[2], xi[0] * d[1] - xi[1] * d[0]];
    (r, e * alg, norm3(&cross) / r)
}

pub fn envelope_h0(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams) -> f64 {
    let (r, c, _) = envelope_core(xi, eta, p);
    c / r
}

pub fn envelope_h1(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams) -> f64 {
    let (r, c, perp) = envelope_core(xi, eta, p);
    (1.0 + perp) * c / (r * r)
}

fn k_tol(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams) -> Result<f64> {
    Ok(kernel_k2_tol(xi, eta, p, 1e-11)? - kernel_k1(xi, eta, p))
}

/// Largest of |∂_ξ k| and |∂_η k| by central differences.
fn gradient_norm(xi: &[f64; 3], eta: &[f64; 3], p: &PotentialParams) -> Result<f64> {
    let r = norm3(&[eta[0] - xi[0], eta[1] - xi[1], eta[2] - xi[2]]);
    let h = 1e-4 * r.min(1.0);
    let mut gx = 0.0;
    let mut ge = 0.0;
    for d in 0..3 {
        let (mut a, mut b) = (*xi, *xi);
        a[d] += h;
        b[d] -= h;
        gx += ((k_tol(&a, eta, p)? - k_tol(&b, eta, p)?) / (2.0 * h)).powi(2);
        let (mut a, mut b) = (*eta, *eta);
        a[d] += h;
        b[d] -= h;
        ge += ((k_tol(xi, &a, p)? - k_tol(xi, &b, p)?) / (2.0 * h)).powi(2);
    }
    Ok(gx.sqrt().max(ge.sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeAudit {
    pub samples: usize,
    /// Pairs where the envelope underflows and no ratio is formed.
    pub skipped: usize,
    pub sup_ratio_h0: f64,
    pub sup_ratio_h1: f64,
    /// sup |k|/H⁽⁰⁾ on the velocity shells |ξ| ∈ [0,4), [4,8), [8,12].
    pub shell_sup_h0: [f64; 3],
    pub shell_sup_h1: [f64; 3],
    pub finite: bool,
}

/// Seeded random pairs (ξ, η): |ξ| ≤ `radius`, log-uniform |η−ξ| in
/// [1e-3, 10], half of the directions concentrated where the Gaussian
/// factor of k is not negligible.
pub fn sample_pairs(count: usize, radius: f64, seed: u64) -> Vec<([f64; 3], [f64; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
        let s = (1.0 - z * z).sqrt();
        [s * phi.cos(), s * phi.sin(), z]
    };
    (0..count)
        .map(|k| {
            let a = radius * rng.gen::<f64>().cbrt();
            let xh = unit(&mut rng);
            let xi = [a * xh[0], a * xh[1], a * xh[2]];
            let r = 10f64.powf(rng.gen_range(-3.0..1.0));
            let mut n = unit(&mut rng);
            if k % 2 == 1 && a > 1e-8 {
                // ξ̂·n ≈ −r/(2|ξ|): the ridge of e^{−(ξ∥²+η∥²)/4}
                let z: f64 = rng.gen_range(-2.0..2.0);
                let u = ((-0.5 * r + z) / a).clamp(-1.0, 1.0);
                let t = unit(&mut rng);
                let tdot = t[0] * xh[0] + t[1] * xh[1] + t[2] * xh[2];
                let mut perp = [t[0] - tdot * xh[0], t[1] - tdot * xh[1], t[2] - tdot * xh[2]];
                let pn = norm3(&perp);
                perp.iter_mut().for_each(|x| *x /= pn);
                let s = (1.0 - u * u).sqrt();
                n = [u * xh[0] + s * perp[0], u * xh[1] + s * perp[1], u * xh[2] + s * perp[2]];
            }
            (xi, [xi[0] + r * n[0], xi[1] + r * n[1], xi[2] + r * n[2]])
        })
        .collect()
}

/// sup |k|/H⁽⁰⁾ and sup |∇k|/H⁽¹⁾ over seeded samples with |ξ| ≤ 12.
pub fn envelope_audit(p: &PotentialParams, count: usize, seed: u64) -> Result<EnvelopeAudit> {
    let pairs = sample_pairs(count, 12.0, seed);
    let rows: Vec<Option<(f64, f64, f64)>> = pairs
        .par_iter()
        .map(|(xi, eta)| -> Result<Option<(f64, f64, f64)>> {
            let h0 = envelope_h0(xi, eta, p);
            let h1 = envelope_h1(xi, eta, p);
            if !(h0 > 1e-280 && h1 > 1e-280) {
                return Ok(None);
            }
            let k = k_tol(xi, eta, p)?;
            let g = gradient_norm(xi, eta, p)?;
            Ok(Some((norm3(xi), k.abs() / h0, g / h1)))
        })
        .collect::<Result<_>>()?;
    let mut shell0 = [0.0f64; 3];
    let mut shell1 = [0.0f64; 3];
    let mut skipped = 0;
    let mut finite = true;
    for r in &rows {
        match r {
            None => skipped += 1,
            Some((a, r0, r1)) => {
                finite &= r0.is_finite() && r1.is_finite();
                let s = ((a / 4.0) as usize).min(2);
                shell0[s] = shell0[s].max(*r0);
                shell1[s] = shell1[s].max(*r1);
            }
        }
    }
    Ok(EnvelopeAudit {
        samples: count,
        skipped,
        sup_ratio_h0: shell0.iter().cloned().fold(0.0, f64::max),
        sup_ratio_h1: shell1.iter().cloned().fold(0.0, f64::max),
        shell_sup_h0: shell0,
        shell_sup_h1: shell1,
        finite,
    })
}

/// ∫|k(ξ,η)|⟨η⟩^τ dη at ξ = a e₃.
pub fn row_integral(a: f64, tau: f64, p: &PotentialParams) -> Result<f64> {
    let xi = [0.0, 0.0, a];
    let inner = |r: f64| -> Result<f64> {
        let f = |u: f64| {
            let s = (1.0 - u * u).max(0.0).sqrt();
            let eta = [r * s, 0.0, a + r * u];
            let k = k_tol(&xi, &eta, p).unwrap_or(f64::NAN);
            k.abs() * (1.0 + norm3(&eta).powi(2)).powf(0.5 * tau)
        };
        let c = if a > 0.0 { -0.5 * r / a } else { 0.0 };
        let w = if a > 0.0 { 4.0 / a } else { 1.0 };
        let br = [c - w, c - 0.25 * w, c, c + 0.25 * w, c + w];
        integrate(f, -1.0, 1.0, &br, 1e-7, 1e-300)
    };
    let outer = |r: f64| -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        inner(r).map(|v| v * r * r).unwrap_or(f64::NAN)
    };
    let v = integrate(outer, 0.0, 14.0, &[0.5, 2.0, 5.0], 1e-6, 1e-300)?;
    Ok(2.0 * PI * v)
}

#[derive(Debug, Clone, Serialize)]
pub struct RowIntegralFit {
    pub tau: f64,
    pub speeds: Vec<f64>,
    pub values: Vec<f64>,
    pub exponent: f64,
    pub expected: f64,
    pub residual: f64,
}

/// Fitted exponent of the row integral against ⟨ξ⟩ over |ξ| ∈ [10, 40].
pub fn row_integral_fit(p: &PotentialParams, tau: f64) -> Result<RowIntegralFit> {
    let speeds: Vec<f64> = (0..7).map(|k| 10.0 * 4f64.powf(k as f64 / 6.0)).collect();
    let values: Vec<f64> = speeds.par_iter().map(|&a| row_integral(a, tau, p)).collect::<Result<_>>()?;
    let x: Vec<f64> = speeds.iter().map(|a| 0.5 * (1.0 + a * a).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (exponent, _, residual) = linear_fit(&x, &y);
    Ok(RowIntegralFit { tau, speeds, values, exponent, expected: tau + p.gamma - 2.0, residual })
}

/// ∫|ξ−η|^ς exp(−a|ξ−η|² − b(|η|²−|ξ|²)²/|ξ−η|²) dη at |ξ| = `speed`.
pub fn caflisch_integral(speed: f64, varsigma: f64, a: f64, b: f64) -> Result<f64> {
    // η = ξ + r n, (|η|²−|ξ|²)/r = 2|ξ|u + r with u = ξ̂·n
    let inner = |r: f64| -> Result<f64> {
        let f = |u: f64| (-b * (2.0 * speed * u + r).powi(2)).exp();
        let c = if speed > 0.0 { -0.5 * r / speed } else { 0.0 };
        let w = if speed > 0.0 { 3.0 / (b.sqrt() * speed) } else { 1.0 };
        integrate(f, -1.0, 1.0, &[c - w, c, c + w], 1e-10, 1e-300)
    };
    let rmax = (40.0 / a).sqrt();
    let outer = |r: f64| -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        inner(r).map(|v| v * r.powf(varsigma + 2.0) * (-a * r * r).exp()).unwrap_or(f64::NAN)
    };
    Ok(2.0 * PI * integrate(outer, 0.0, rmax, &[1.0], 1e-9, 1e-300)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CaflischAudit {
    pub speeds: Vec<f64>,
    /// (1+|ξ|)·integral.
    pub products: Vec<f64>,
    pub sup_product: f64,
    /// Ratio of the product at the largest |ξ| to its maximum over |ξ| ≤ 10.
    pub tail_ratio: f64,
}

/// (1+|ξ|)·∫|ξ−η|^ς e^{...} dη over |ξ| ∈ [0, 15] with a = b = q′/8.
pub fn caflisch_audit(p: &PotentialParams, varsigma: f64) -> Result<CaflischAudit> {
    let a = p.qprime / 8.0;
    let speeds: Vec<f64> = (0..=30).map(|k| 0.5 * k as f64).collect();
    let products: Vec<f64> = speeds
        .par_iter()
        .map(|&s| caflisch_integral(s, varsigma, a, a).map(|v| v * (1.0 + s)))
        .collect::<Result<_>>()?;
    let sup = products.iter().cloned().fold(0.0, f64::max);
    let inner_max = products.iter().zip(&speeds).filter(|(_, &s)| s <= 10.0).map(|(v, _)| *v).fold(0.0, f64::max);
    Ok(CaflischAudit { tail_ratio: products[products.len() - 1] / inner_max, speeds, products, sup_product: sup })
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelBoundReport {
    pub gamma: f64,
    pub envelopes: EnvelopeAudit,
    pub row_integrals: Vec<RowIntegralFit>,
    pub caflisch: CaflischAudit,
}

pub fn audit_kernel_bounds(p: &PotentialParams, sample_size: usize, seed: u64) -> Result<KernelBoundReport> {
    Ok(KernelBoundReport {
        gamma: p.gamma,
        envelopes: envelope_audit(p, sample_size, seed)?,
        row_integrals: vec![row_integral_fit(p, 0.0)?, row_integral_fit(p, 2.0)?],
        caflisch: caflisch_audit(p, -1.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (s, c, r) = linear_fit(&x, &y);
        assert!((s + 0.5).abs() < 1e-14 && (c - 2.0).abs() < 1e-14 && r < 1e-14);
    }

    #[test]
    fn caflisch_at_origin_is_a_gaussian_moment() {
        // ξ = 0: ∫ r^{ς} e^{−(a+b) r²} dη = 2π Γ((ς+3)/2) / (a+b)^{(ς+3)/2}
        let (a, b) = (0.1, 0.2);
        let v = caflisch_integral(0.0, -1.0, a, b).unwrap();
        assert!((v - 2.0 * PI / (a + b)).abs() < 1e-8 * v, "{v}");
    }
}
