//! Assemble the collision operator on a small grid and audit its structure
//! and the pointwise kernel bounds.

use kgreen::audit::{audit_kernel_bounds, operator_report};
use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::velocity::VelocityGrid;

fn main() -> kgreen::Result<()> {
    let p = PotentialParams::new(0.5)?;
    let grid = VelocityGrid::new(8, 6.5)?;
    let bundle = KernelMatrixBundle::assemble(&grid, &p, Assembly::default())?;
    let op = operator_report(&bundle, 20, 1)?;
    println!("‖K−Kᵀ‖/‖K‖      = {:.2e}", op.asymmetry);
    println!("‖Lχⱼ‖/‖χⱼ‖       = {:?}", op.null_residuals.map(|v| format!("{v:.2e}")));
    println!("max ⟨g,Lg⟩/‖g‖²  = {:.3}", op.max_rayleigh);
    println!("coercivity       = {:.4}", op.coercivity);
    let kb = audit_kernel_bounds(&p, 2000, 1)?;
    println!("envelope sup-ratios H0 {:.3}, H1 {:.3}", kb.envelopes.sup_ratio_h0, kb.envelopes.sup_ratio_h1);
    for f in &kb.row_integrals {
        println!("row integral τ={}: exponent {:.3} (expected {:.3})", f.tau, f.exponent, f.expected);
    }
    println!("Caflisch product sup {:.3}, tail ratio {:.3}", kb.caflisch.sup_product, kb.caflisch.tail_ratio);
    Ok(())
}
