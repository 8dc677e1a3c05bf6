//! Dense complex linear algebra helpers on top of faer.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::{c64, Mat};

pub fn to_complex(m: &Mat<f64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0))
}

pub fn identity(n: usize) -> Mat<c64> {
    Mat::from_fn(n, n, |i, j| if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) })
}

fn norm1(a: &Mat<c64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: &Mat<c64>) -> f64 {
    a.norm_l2()
}

fn axpy_into(out: &mut Mat<c64>, c: f64, a: &Mat<c64>) {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out[(i, j)] += a[(i, j)] * c;
        }
    }
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé approximant.
pub fn expm(a: &Mat<c64>) -> Mat<c64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let nrm = norm1(a);
    let s = if nrm > THETA13 { (nrm / THETA13).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(s);
    let a = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let mut t = Mat::<c64>::zeros(n, n);
    axpy_into(&mut t, B[13], &a6);
    axpy_into(&mut t, B[11], &a4);
    axpy_into(&mut t, B[9], &a2);
    let mut u_in = &a6 * &t;
    axpy_into(&mut u_in, B[7], &a6);
    axpy_into(&mut u_in, B[5], &a4);
    axpy_into(&mut u_in, B[3], &a2);
    axpy_into(&mut u_in, B[1], &id);
    let u = &a * &u_in;
    let mut t = Mat::<c64>::zeros(n, n);
    axpy_into(&mut t, B[12], &a6);
    axpy_into(&mut t, B[10], &a4);
    axpy_into(&mut t, B[8], &a2);
    let mut v = &a6 * &t;
    axpy_into(&mut v, B[6], &a6);
    axpy_into(&mut v, B[4], &a4);
    axpy_into(&mut v, B[2], &a2);
    axpy_into(&mut v, B[0], &id);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Eigen-decomposition `A = V diag(λ) V⁻¹` reused for many propagation times.
#[derive(Debug, Clone)]
pub struct EigenPropagator {
    pub values: Vec<c64>,
    pub vectors: Mat<c64>,
    pub inverse: Mat<c64>,
}

impl EigenPropagator {
    pub fn new(a: &Mat<c64>) -> Result<Self> {
        let e = a.eigen().map_err(|e| Error::LinAlg(format!("eigen-decomposition failed: {e:?}")))?;
        let values: Vec<c64> = (0..a.nrows()).map(|i| e.S()[i]).collect();
        let vectors = e.U().to_owned();
        let inverse = vectors.partial_piv_lu().solve(identity(a.nrows()));
        Ok(Self { values, vectors, inverse })
    }

    /// `e^{At}` as a dense matrix.
    pub fn exp(&self, t: f64) -> Mat<c64> {
        let n = self.values.len();
        let d: Vec<c64> = self.values.iter().map(|l| (l * t).exp()).collect();
        let vd = Mat::from_fn(n, n, |i, j| self.vectors[(i, j)] * d[j]);
        &vd * &self.inverse
    }

    /// `e^{At} x`.
    pub fn apply(&self, t: f64, x: &[c64]) -> Vec<c64> {
        let n = self.values.len();
        let y: Vec<c64> = (0..n)
            .map(|i| {
                let mut s = c64::new(0.0, 0.0);
                for j in 0..n {
                    s += self.inverse[(i, j)] * x[j];
                }
                s * (self.values[i] * t).exp()
            })
            .collect();
        (0..n)
            .map(|i| {
                let mut s = c64::new(0.0, 0.0);
                for j in 0..n {
                    s += self.vectors[(i, j)] * y[j];
                }
                s
            })
            .collect()
    }
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::LinAlg(format!("symmetric eigenvalues failed: {e:?}")))
}

pub fn eigenvalues(a: &Mat<c64>) -> Result<Vec<c64>> {
    a.eigenvalues().map_err(|e| Error::LinAlg(format!("eigenvalues failed: {e:?}")))
}

pub fn matvec(a: &Mat<c64>, x: &[c64]) -> Vec<c64> {
    (0..a.nrows())
        .map(|i| {
            let mut s = c64::new(0.0, 0.0);
            for j in 0..a.ncols() {
                s += a[(i, j)] * x[j];
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal_and_nilpotent() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { c64::new(-(i as f64) * 7.0, i as f64) } else { c64::new(0.0, 0.0) });
        let e = expm(&a);
        for i in 0..3 {
            let ex = (a[(i, i)]).exp();
            assert!((e[(i, i)] - ex).norm() < 1e-13);
        }
        let mut n = Mat::<c64>::zeros(3, 3);
        n[(0, 1)] = c64::new(2.0, 0.0);
        n[(1, 2)] = c64::new(3.0, 0.0);
        let e = expm(&n);
        assert!((e[(0, 2)] - c64::new(3.0, 0.0)).norm() < 1e-13);
        assert!((e[(0, 1)] - c64::new(2.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn eigen_propagator_matches_expm() {
        let n = 12;
        let a = Mat::from_fn(n, n, |i, j| {
            let s = ((i * 7 + j * 3) % 5) as f64 * 0.1 + ((i + j) % 3) as f64 * 0.05;
            let d = if i == j { -2.0 - i as f64 * 0.3 } else { 0.0 };
            c64::new(s + d, if i == j { 0.2 * i as f64 } else { 0.0 })
        });
        let p = EigenPropagator::new(&a).unwrap();
        let t = 1.7;
        let at = Mat::from_fn(n, n, |i, j| a[(i, j)] * t);
        let d = &p.exp(t) - &expm(&at);
        assert!(frobenius(&d) < 1e-10);
    }
}
