//! Store an assembled operator in the matrix cache and read it back.

use kgreen::cache::{CacheKey, MatrixCache};
use kgreen::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use kgreen::velocity::VelocityGrid;

fn main() -> kgreen::Result<()> {
    let p = PotentialParams::new(0.5)?;
    let bundle = KernelMatrixBundle::assemble(&VelocityGrid::new(6, 6.5)?, &p, Assembly::default())?;
    let dir = std::env::temp_dir().join("kgreen-example-cache");
    let cache = MatrixCache::new(&dir);
    let path = cache.store(&bundle)?;
    let back = cache.load(&CacheKey::of(&bundle), &p)?.expect("entry just written");
    let same = bundle.nu == back.nu && (0..bundle.nu.len()).all(|i| (0..bundle.nu.len()).all(|j| bundle.k[(i, j)] == back.k[(i, j)]));
    println!("{} round-trips bit-identically: {same}", path.display());
    Ok(())
}
