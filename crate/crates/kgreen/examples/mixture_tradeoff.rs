//! The velocity-for-space tradeoff of the damped transport, and the weighted
//! decay of a deep mixture ladder.

use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::mixture::{default_bump, fit_decay_series, tradeoff_audit, Slab, SlabSystem};
use kgreen::sector::{ReducedSpace, SectorKind};
use kgreen::velocity::{MacroBasis, VelocityGrid};

fn main() -> kgreen::Result<()> {
    let p = PotentialParams::new(0.5)?;
    let tr = tradeoff_audit(&p, 2.0, 0.5, &[0.0, 2.0, 4.0], &[0.0, 1.0, 2.0])?;
    for c in &tr.cases {
        println!("M={} P={}: excess {:+.2}, fitted growth {:+.3}, bounded {}", c.m, c.p, c.excess, c.fitted_exponent, c.observed_bounded);
    }
    println!("mismatches: {}", tr.mismatches);

    let grid = VelocityGrid::new(8, 6.5)?;
    let bundle = KernelMatrixBundle::assemble(&grid, &p, Assembly::default())?;
    let basis = MacroBasis::new(&grid);
    let sys = SlabSystem::new(ReducedSpace::new(&bundle, &basis, SectorKind::Axisymmetric), Slab::new(30.0, 256)?);
    let h0 = sys.initial_field(default_bump, |v| (1.0 + v).powf(-2.0))?;
    let record: Vec<usize> = (0..=8).map(|k| 8 * k).collect();
    let series = sys.ladder_series(&h0, 4, 1.0 / 32.0, &record)?;
    let t: Vec<f64> = series.iter().map(|l| l.t).collect();
    let l2: Vec<f64> = series.iter().map(|l| sys.weighted_l2(&l.levels[4], 2.0)).collect();
    let fit = fit_decay_series(&t, &l2, 1.0);
    println!("‖(1+|ξ|)² M₄h₀‖ decays at rate {:.3}", fit.rate);
    Ok(())
}
