//! Fit the small-|η| expansion of the five fluid eigenvalues.

use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::spectral::{default_samples, fit_dispersion, FluidSpaces, SOUND_SPEED};
use kgreen::velocity::VelocityGrid;

fn main() -> kgreen::Result<()> {
    let grid = VelocityGrid::new(10, 6.5)?;
    let bundle = KernelMatrixBundle::assemble(&grid, &PotentialParams::new(0.5)?, Assembly::default())?;
    let fit = fit_dispersion(&FluidSpaces::new(&bundle), &default_samples(), 0.5)?;
    println!("sound speed √(5/3) = {SOUND_SPEED:.5}");
    for j in 0..5 {
        println!("branch {j}: a = {:+.5}, A = {:.5}", fit.a[j], fit.diffusion[j]);
    }
    println!("fit residual {:.2e}", fit.fit_residual);
    Ok(())
}
