//! Reconstruct the fluid part of the 3D Green's function along a ray and fit
//! the diffusion-wave and Huygens-wave decay rates.

use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::spectral::FluidSpaces;
use kgreen::velocity::VelocityGrid;
use kgreen::waves::{default_spatial_profile, log_times, project_data, wave_sweep, FluidEigenTable, RhoQuadrature, VelocityData};

fn main() -> kgreen::Result<()> {
    let grid = VelocityGrid::new(10, 6.5)?;
    let bundle = KernelMatrixBundle::assemble(&grid, &PotentialParams::new(0.5)?, Assembly::default())?;
    let spaces = FluidSpaces::new(&bundle);
    let table = FluidEigenTable::new(&spaces, 1.5, 32)?;
    let data = VelocityData::isotropic(&spaces, |v| (-v * v / 3.0).exp(), false);
    let radial = project_data(&table, &data, default_spatial_profile, 0.0, RhoQuadrature::default())?;
    let (_, fit) = wave_sweep(&radial, &log_times(20.0, 200.0, 7), 0.25)?;
    println!("interior exponent {:.3} (residual {:.1e})", fit.interior_exponent, fit.interior_residual);
    println!("ridge speed {:.4}, ridge exponent {:.3}", fit.ridge_speed, fit.ridge_exponent);
    Ok(())
}
