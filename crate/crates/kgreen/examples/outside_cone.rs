//! Decay of the linear solution outside the sound cone, and the monotonicity
//! audit of the space-velocity weight.

use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::mixture::{ModeField, Slab, SlabSystem};
use kgreen::nonlinear::{default_weight_lattice, outside_cone_fit, weight_audit, WeightFunction};
use kgreen::sector::{ReducedSpace, SectorKind};
use kgreen::velocity::{MacroBasis, VelocityGrid};

fn main() -> kgreen::Result<()> {
    let (gamma, p, beta) = (0.5, 2.0, 2.0);
    let grid = VelocityGrid::new(8, 6.5)?;
    let bundle = KernelMatrixBundle::assemble(&grid, &PotentialParams::new(gamma)?, Assembly::default())?;
    let basis = MacroBasis::new(&grid);
    let sys = SlabSystem::new(ReducedSpace::new(&bundle, &basis, SectorKind::Axisymmetric), Slab::new(40.0, 512)?);
    let decay = p + beta + 0.5 * gamma;
    let f0 = sys.initial_field(|x| if x.abs() < 1.0 { (1.0 - x * x).powi(12) } else { 0.0 }, |v| (1.0 + v * v).powf(-0.5 * decay))?;
    let record: Vec<usize> = (1..=8).collect();
    let series = sys.full_series(&f0, 0.5, &record);
    let pairs: Vec<(f64, &ModeField)> = record.iter().zip(&series).map(|(&j, f)| (0.5 * j as f64, f)).collect();
    let fit = outside_cone_fit(&sys, &pairs, p, beta, gamma, 0.2, 0.9, 48, 1e-9)?;
    println!("outside-cone exponent {:.2} (bound {:.1})", fit.mean_exponent, fit.expected_exponent);

    let (ts, xs, speeds) = default_weight_lattice();
    let audit = weight_audit(&WeightFunction::new(0.2, p, gamma)?, &ts, &xs, &speeds)?;
    println!("∂_t w ≤ 0 on {} points: {} (c₁ = {})", audit.lattice_points, audit.passed, audit.weight.c1);
    Ok(())
}
