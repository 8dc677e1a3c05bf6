//! Gauss rules, adaptive Gauss–Kronrod integration, a 38-node sphere rule and
//! the exponentially scaled Bessel function `I0e`.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let d = h * XGK[j];
        let s = f(c - d) + f(c + d);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration over [a, b] split at `breaks`.
/// Converges when the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    let mut pts = vec![a];
    let mut bs: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    bs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    pts.extend(bs);
    pts.push(b);
    let mut segs: Vec<(f64, f64, f64, f64)> = Vec::new();
    for w in pts.windows(2) {
        if w[1] > w[0] {
            let (v, e) = gk15(&mut f, w[0], w[1]);
            segs.push((w[0], w[1], v, e));
        }
    }
    for _ in 0..4000 {
        let total: f64 = segs.iter().map(|s| s.2).sum();
        let err: f64 = segs.iter().map(|s| s.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || !err.is_finite() && total.is_finite() {
            return Ok(total);
        }
        if !total.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        let (k, _) = segs
            .iter()
            .enumerate()
            .max_by(|p, q| p.1 .3.partial_cmp(&q.1 .3).unwrap())
            .unwrap();
        let (l, r, _, _) = segs.swap_remove(k);
        let m = 0.5 * (l + r);
        let (v1, e1) = gk15(&mut f, l, m);
        let (v2, e2) = gk15(&mut f, m, r);
        segs.push((l, m, v1, e1));
        segs.push((m, r, v2, e2));
    }
    let total: f64 = segs.iter().map(|s| s.2).sum();
    let err: f64 = segs.iter().map(|s| s.3).sum();
    Err(Error::Quadrature(format!(
        "[{a}, {b}]: estimate {total:.6e}, error {err:.3e} after subdivision budget"
    )))
}

/// `e^{-x} I0(x)` for x ≥ 0.
pub fn i0e(x: f64) -> f64 {
    let x = x.abs();
    if x <= 30.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kk = (2 * k - 1) as f64;
            term *= kk * kk / (8.0 * x * k as f64);
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// Symmetric 38-node sphere rule, exact for polynomials of degree ≤ 9.
/// Weights sum to 4π.
pub fn sphere_rule_38() -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(38);
    let mut weights = Vec::with_capacity(38);
    let (a1, a2, a3) = (1.0 / 105.0, 9.0 / 280.0, 1.0 / 35.0);
    for k in 0..3 {
        for s in [-1.0, 1.0] {
            let mut v = [0.0; 3];
            v[k] = s;
            nodes.push(v);
            weights.push(a1);
        }
    }
    let c = 1.0 / 3f64.sqrt();
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            for s3 in [-1.0, 1.0] {
                nodes.push([s1 * c, s2 * c, s3 * c]);
                weights.push(a2);
            }
        }
    }
    let p: f64 = 0.459_700_843_380_983_1;
    let q = (1.0 - p * p).sqrt();
    for (i, j, k) in [(0, 1, 2), (1, 0, 2), (0, 2, 1), (2, 0, 1), (1, 2, 0), (2, 1, 0)] {
        for s1 in [-1.0, 1.0] {
            for s2 in [-1.0, 1.0] {
                let mut v = [0.0; 3];
                v[i] = s1 * p;
                v[j] = s2 * q;
                v[k] = 0.0;
                nodes.push(v);
                weights.push(a3);
            }
        }
    }
    let weights = weights.into_iter().map(|w| 4.0 * PI * w).collect();
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 5, 16, 64] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n).min(40) {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((s - exact).abs() < 1e-12, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn adaptive_gaussian_and_singular() {
        let g = integrate(|x| (-x * x / 2.0).exp(), -12.0, 12.0, &[0.0], 1e-12, 0.0).unwrap();
        assert!((g - (2.0 * PI).sqrt()).abs() < 1e-11);
        let s = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, &[], 1e-9, 0.0).unwrap();
        assert!((s - 2.0).abs() < 1e-7);
    }

    #[test]
    fn i0e_matches_integral_representation() {
        for &x in &[0.0, 0.3, 2.0, 10.0, 29.9, 30.1, 80.0, 500.0] {
            let v = integrate(|p: f64| (x * (p.cos() - 1.0)).exp() / PI, 0.0, PI, &[], 1e-13, 0.0).unwrap();
            assert!((i0e(x) - v).abs() < 1e-12 * v.max(1e-300) + 1e-15, "x={x}");
        }
    }

    #[test]
    fn sphere_rule_exact_to_degree_nine() {
        let (n, w) = sphere_rule_38();
        assert_eq!(n.len(), 38);
        let tot: f64 = w.iter().sum();
        assert!((tot - 4.0 * PI).abs() < 1e-13);
        // ∫ x^a y^b z^c dΩ over monomials up to degree 9
        let dfact = |k: i32| -> f64 { (1..=k).rev().step_by(2).map(|v| v as f64).product::<f64>().max(1.0) };
        for a in 0..=9 {
            for b in 0..=(9 - a) {
                for c in 0..=(9 - a - b) {
                    let s: f64 = n
                        .iter()
                        .zip(&w)
                        .map(|(v, w)| w * v[0].powi(a) * v[1].powi(b) * v[2].powi(c))
                        .sum();
                    let exact = if a % 2 == 1 || b % 2 == 1 || c % 2 == 1 {
                        0.0
                    } else {
                        4.0 * PI * dfact(a - 1) * dfact(b - 1) * dfact(c - 1) / dfact(a + b + c + 1)
                    };
                    assert!((s - exact).abs() < 1e-12, "{a} {b} {c}: {s} vs {exact}");
                }
            }
        }
    }
}
