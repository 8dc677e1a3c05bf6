//! Split the slab Green's function into its particle and fluid parts and
//! check the Duhamel ladder's second-order time convergence.

use kgreen::harness::richardson;
use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::mixture::{split_audit, Slab, SlabSystem};
use kgreen::sector::{ReducedSpace, SectorKind};
use kgreen::velocity::{MacroBasis, VelocityGrid};

fn main() -> kgreen::Result<()> {
    let grid = VelocityGrid::new(8, 6.5)?;
    let bundle = KernelMatrixBundle::assemble(&grid, &PotentialParams::new(0.5)?, Assembly::default())?;
    let basis = MacroBasis::new(&grid);
    let sys = SlabSystem::new(ReducedSpace::new(&bundle, &basis, SectorKind::Axisymmetric), Slab::new(30.0, 256)?);
    let rep = split_audit(&sys, 2.0, 4, 4.0, 32, 8)?;
    for k in 0..rep.t.len() {
        println!("t = {:5.2}  particle {:.3e}  fluid {:.3e}", rep.t[k], rep.particle_sup[k], rep.fluid_sup[k]);
    }
    println!("particle decay rate {:.3}", rep.particle_decay.rate);
    println!("tolerated velocity weight: particle {:.2}, fluid {:.2}", rep.particle_weight.weight, rep.fluid_weight.weight);
    println!("Richardson ratios {:.3?}", richardson(&sys, 2.0, 3, &[16, 32, 64])?);
    Ok(())
}
