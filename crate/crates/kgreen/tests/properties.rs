use kgreen::cache::{decode, encode, CacheKey};
use kgreen::config::ExperimentConfig;
use kgreen::convolution::{conv_envelope, ConvTolerance};
use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::mixture::{Slab, SlabSystem};
use kgreen::nonlinear::{coupled_solve, BilinearQuadrature, GammaTensor, PicardConfig, WeightFunction};
use kgreen::sector::{ReducedSpace, SectorKind};
use kgreen::spectral::smooth_cutoff;
use kgreen::velocity::{MacroBasis, VelocityGrid};
use kgreen::waves::{b_profile, Envelope};
use kgreen::Error;
use proptest::prelude::*;
use std::sync::OnceLock;

struct Fixture {
    grid: VelocityGrid,
    bundle: KernelMatrixBundle,
    quad: BilinearQuadrature,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let grid = VelocityGrid::new(6, 6.0).unwrap();
        let p = PotentialParams::new(0.5).unwrap();
        let bundle = KernelMatrixBundle::assemble(&grid, &p, Assembly::default()).unwrap();
        let quad = BilinearQuadrature::new(&grid, &p);
        Fixture { grid, bundle, quad }
    })
}

fn sample(grid: &VelocityGrid, c: &[f64; 4]) -> Vec<f64> {
    grid.sample(|x| (c[0] + c[1] * x[0] + c[2] * x[1] * x[2] + c[3] * x[2]) * (-0.3 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp())
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gamma_is_bilinear_and_symmetric(c1 in prop::array::uniform4(-1.0..1.0f64), c2 in prop::array::uniform4(-1.0..1.0f64), a in -2.0..2.0f64) {
        let fx = fixture();
        let (f, g) = (sample(&fx.grid, &c1), sample(&fx.grid, &c2));
        let h = sample(&fx.grid, &[1.0, 0.2, 0.0, -0.3]);
        let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
        let lhs = fx.quad.gamma_bilinear(&comb, &h).unwrap();
        let (gf, gg) = (fx.quad.gamma_bilinear(&f, &h).unwrap(), fx.quad.gamma_bilinear(&g, &h).unwrap());
        let rhs: Vec<f64> = gf.iter().zip(&gg).map(|(x, y)| a * x + y).collect();
        prop_assert!(rel(&lhs, &rhs) < 1e-10);
        let swapped = fx.quad.gamma_bilinear(&h, &f).unwrap();
        prop_assert!(rel(&swapped, &gf) < 1e-12);
    }

    #[test]
    fn projected_gamma_conserves_invariants(c in prop::array::uniform4(-1.0..1.0f64)) {
        let fx = fixture();
        let f = sample(&fx.grid, &c);
        let g = fx.quad.gamma_bilinear(&f, &f).unwrap();
        let m = fx.quad.invariant_moments(&g);
        let n2 = fx.grid.dot(&f, &f);
        prop_assert!(m.iter().all(|v| v.abs() <= 1e-10 * n2), "{m:?}");
    }

    #[test]
    fn weight_is_positive_and_non_increasing(t in 0.0..30.0f64, x in 0.0..100.0f64, s in 0.0..15.0f64) {
        let w = WeightFunction::new(0.2, 2.0, 0.5).unwrap();
        let v = w.eval(t, x, s);
        prop_assert!(v > 0.0 && v.is_finite());
        let h = 1e-4;
        prop_assert!(w.eval(t + h, x, s) <= v * (1.0 + 1e-9));
        // continuity across the cutoff
        prop_assert!((w.eval(t, x + 1e-7, s) - v).abs() <= 1e-4 * v);
    }

    #[test]
    fn smooth_cutoff_is_monotone(a in 0.0..3.0f64, b in 0.0..3.0f64, delta in 0.1..2.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (u, v) = (smooth_cutoff(lo, delta), smooth_cutoff(hi, delta));
        prop_assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) && v <= u);
    }

    #[test]
    fn b_profile_decreases_away_from_origin(z in 0.0..20.0f64, dz in 0.0..5.0f64, t in 0.0..50.0f64, m in 0.5..4.0f64) {
        let (a, b) = (b_profile(z, t, m), b_profile(z + dz, t, m));
        prop_assert!(b <= a && b > 0.0 && a <= 1.0);
    }

    #[test]
    fn convolution_is_symmetric(x in 0.0..8.0f64, t in 0.5..8.0f64) {
        let (e1, e2) = (Envelope::diffusion(1.5, 2.0), Envelope::huygens(2.0, 2.0, 1.2));
        let tol = ConvTolerance::default();
        let a = conv_envelope(&e1, &e2, x, t, tol).unwrap();
        let b = conv_envelope(&e2, &e1, x, t, tol).unwrap();
        prop_assert!((a - b).abs() <= 1e-4 * a.abs());
    }

    #[test]
    fn invalid_gamma_is_reported(g in prop_oneof![-5.0..-0.01f64, 1.01..5.0f64]) {
        let mut cfg = ExperimentConfig::default();
        cfg.gamma = g;
        match cfg.validate() {
            Err(Error::Config(list)) => prop_assert!(list.iter().any(|m| m.starts_with("gamma"))),
            other => prop_assert!(false, "expected config error, got {other:?}"),
        }
    }
}

#[test]
fn static_convolution_matches_closed_form_at_origin() {
    // at x = 0 both factors depend on |y| only:
    // ∫₀ᵗ(1+t−τ)^{−a₁}(1+τ)^{−a₂}dτ · 4π∫₀^∞ r²(1+r)^{−B}dr, the latter 8π/((B−1)(B−2)(B−3))
    let (a1, b1, a2, b2, t) = (1.5, 3.0, 2.0, 2.5, 4.0);
    let e1 = Envelope::static_alg(a1, b1);
    let e2 = Envelope::static_alg(a2, b2);
    let big = b1 + b2;
    let spatial = 8.0 * std::f64::consts::PI / ((big - 1.0) * (big - 2.0) * (big - 3.0));
    let n = 20_000;
    let h = t / n as f64;
    let f = |s: f64| (1.0 + t - s).powf(-a1) * (1.0 + s).powf(-a2);
    let simpson: f64 = (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            w * f(k as f64 * h)
        })
        .sum::<f64>()
        * h
        / 3.0;
    let exact = simpson * spatial;
    let v = conv_envelope(&e1, &e2, 0.0, t, ConvTolerance::default().refined()).unwrap();
    assert!((v - exact).abs() < 1e-6 * exact, "{v} vs {exact}");
}

#[test]
fn gamma_tensor_matches_full_grid() {
    let fx = fixture();
    let basis = MacroBasis::new(&fx.grid);
    let space = ReducedSpace::new(&fx.bundle, &basis, SectorKind::Axisymmetric);
    let tensor = GammaTensor::build(&fx.quad, &space).unwrap();
    let c: Vec<f64> = (0..space.dim())
        .map(|a| (-0.3 * space.speed[a].powi(2)).exp() * (1.0 + space.xi3[a]) / space.sector.node_scale(a))
        .collect();
    let f = space.sector.lift(&c);
    let full = space.sector.restrict(&fx.quad.gamma_bilinear(&f, &f).unwrap());
    assert!(rel(&tensor.apply(&c, &c), &full) < 1e-10);
}

fn slab_fixture() -> (SlabSystem, GammaTensor) {
    let fx = fixture();
    let basis = MacroBasis::new(&fx.grid);
    let space = ReducedSpace::new(&fx.bundle, &basis, SectorKind::Axisymmetric);
    let tensor = GammaTensor::build(&fx.quad, &space).unwrap();
    (SlabSystem::new(space, Slab::new(10.0, 32).unwrap()), tensor)
}

#[test]
fn zero_amplitude_gives_zero_solution() {
    let (sys, tensor) = slab_fixture();
    let f0 = sys.initial_field(|x| if x.abs() < 1.0 { 1.0 - x * x } else { 0.0 }, |v| (-v * v / 4.0).exp()).unwrap();
    let cfg = PicardConfig { final_time: 2.0, ..PicardConfig::default() };
    let run = coupled_solve(&sys, &tensor, &f0, 0.0, &cfg).unwrap();
    assert!(run.full.iter().all(|f| f.max_abs() == 0.0));
    assert_eq!(run.correction(&sys), 0.0);
}

#[test]
fn large_amplitude_is_refused() {
    let (sys, tensor) = slab_fixture();
    let f0 = sys.initial_field(|x| if x.abs() < 1.0 { 1.0 - x * x } else { 0.0 }, |v| (-v * v / 4.0).exp()).unwrap();
    let cfg = PicardConfig { final_time: 5.0, ..PicardConfig::default() };
    assert!(matches!(coupled_solve(&sys, &tensor, &f0, 1e3, &cfg), Err(Error::Divergence { .. })));
}

#[test]
fn cache_detects_corruption_and_key_mismatch() {
    let fx = fixture();
    let bytes = encode(&fx.bundle);
    let key = CacheKey::of(&fx.bundle);
    let back = decode(&bytes, &key, &fx.bundle.params).unwrap();
    assert_eq!(back.nu, fx.bundle.nu);
    let mut bad = bytes.clone();
    let last = bad.len() - 1;
    bad[last] ^= 1;
    assert!(matches!(decode(&bad, &key, &fx.bundle.params), Err(Error::CacheMismatch(_))));
    let other = CacheKey { gamma: 0.25, ..key };
    assert!(matches!(decode(&bytes, &other, &fx.bundle.params), Err(Error::CacheMismatch(_))));
}

#[test]
fn fluid_reconstruction_is_even_for_isotropic_data() {
    use kgreen::spectral::FluidSpaces;
    use kgreen::waves::{default_spatial_profile, project_data, reconstruct_fluid_radial, FluidEigenTable, RhoQuadrature, VelocityData};
    let fx = fixture();
    let spaces = FluidSpaces::new(&fx.bundle);
    let table = FluidEigenTable::new(&spaces, 1.0, 16).unwrap();
    let data = VelocityData::isotropic(&spaces, |v| (-v * v / 3.0).exp(), false);
    let radial = project_data(&table, &data, default_spatial_profile, 0.0, RhoQuadrature { panels: 20, order: 8 }).unwrap();
    let zs = [-7.0, -2.5, 2.5, 7.0];
    let f = reconstruct_fluid_radial(&radial, 10.0, &zs).unwrap();
    let sup = f.values.iter().cloned().fold(0.0, f64::max);
    assert!(sup > 0.0);
    assert!((f.density[0] - f.density[3]).abs() <= 1e-10 * sup);
    assert!((f.density[1] - f.density[2]).abs() <= 1e-10 * sup);
    // momentum along e₃ is odd
    assert!((f.momentum[1] + f.momentum[2]).abs() <= 1e-10 * sup);
}
