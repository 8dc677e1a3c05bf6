//! Coupled particle/fluid Picard iteration with the quadratic collision term,
//! and the ε² scaling of the nonlinear correction.

use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::mixture::{Slab, SlabSystem};
use kgreen::nonlinear::{coupled_solve, scaling_report, BilinearQuadrature, GammaTensor, PicardConfig};
use kgreen::sector::{ReducedSpace, SectorKind};
use kgreen::velocity::{MacroBasis, VelocityGrid};

fn main() -> kgreen::Result<()> {
    let p = PotentialParams::new(0.5)?;
    let grid = VelocityGrid::new(8, 6.5)?;
    let bundle = KernelMatrixBundle::assemble(&grid, &p, Assembly::default())?;
    let basis = MacroBasis::new(&grid);
    let sys = SlabSystem::new(ReducedSpace::new(&bundle, &basis, SectorKind::Axisymmetric), Slab::new(20.0, 64)?);
    let tensor = GammaTensor::build(&BilinearQuadrature::new(&grid, &p), &sys.space)?;
    let f0 = sys.initial_field(|x| if x.abs() < 1.0 { (1.0 - x * x).powi(4) } else { 0.0 }, |v| (-0.25 * v * v).exp())?;
    let cfg = PicardConfig { final_time: 10.0, ..PicardConfig::default() };
    let runs = [1e-4, 1e-3, 1e-2].iter().map(|&e| coupled_solve(&sys, &tensor, &f0, e, &cfg)).collect::<kgreen::Result<Vec<_>>>()?;
    let rep = scaling_report(&sys, &runs)?;
    for k in 0..runs.len() {
        println!("ε = {:.0e}: correction {:.3e}, {} iterations", rep.epsilons[k], rep.corrections[k], rep.iterations[k]);
    }
    println!("log-log slope {:.3}", rep.slope);
    Ok(())
}
