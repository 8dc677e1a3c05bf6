//! Binary matrix cache for assembled operators.
//!
//! Layout (little-endian): magic `KGRN`, format version (u32), γ (f64),
//! n (u64), R (f64), angular id (u64), assembly id (u64), SHA-256 of the
//! payload (32 bytes), then the payload: ν (n³ f64) and K row-major (n⁶ f64).

use crate::error::{Error, Result};
use crate::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use crate::velocity::VelocityGrid;
use faer::Mat;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"KGRN";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 8 + 8 + 32;

/// Identity of an assembled operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheKey {
    pub gamma: f64,
    pub n: usize,
    pub r: f64,
    pub angular_id: u64,
    pub assembly_id: u64,
}

impl CacheKey {
    pub fn new(grid: &VelocityGrid, params: &PotentialParams, assembly: Assembly) -> Self {
        Self {
            gamma: params.gamma,
            n: grid.points_per_axis,
            r: grid.cutoff_radius,
            angular_id: params.angular.id(),
            assembly_id: assembly.id(),
        }
    }

    pub fn of(bundle: &KernelMatrixBundle) -> Self {
        Self::new(&bundle.grid, &bundle.params, bundle.assembly)
    }

    /// File name unique to the key.
    pub fn file_name(&self) -> String {
        format!(
            "kgrn_g{:016x}_n{}_r{:016x}_b{:016x}_a{}.bin",
            self.gamma.to_bits(),
            self.n,
            self.r.to_bits(),
            self.angular_id,
            self.assembly_id
        )
    }
}

fn payload(bundle: &KernelMatrixBundle) -> Vec<u8> {
    let m = bundle.nu.len();
    let mut out = Vec::with_capacity(8 * (m + m * m));
    for v in &bundle.nu {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..m {
        for j in 0..m {
            out.extend_from_slice(&bundle.k[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn encode(bundle: &KernelMatrixBundle) -> Vec<u8> {
    let key = CacheKey::of(bundle);
    let body = payload(bundle);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&key.gamma.to_le_bytes());
    out.extend_from_slice(&(key.n as u64).to_le_bytes());
    out.extend_from_slice(&key.r.to_le_bytes());
    out.extend_from_slice(&key.angular_id.to_le_bytes());
    out.extend_from_slice(&key.assembly_id.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&body));
    out.extend_from_slice(&body);
    out
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn read_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Decode a cache image, refusing anything whose header differs from `key`
/// or whose checksum fails.
pub fn decode(bytes: &[u8], key: &CacheKey, params: &PotentialParams) -> Result<KernelMatrixBundle> {
    if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
        return Err(Error::CacheMismatch("missing KGRN header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CacheMismatch(format!("format version {version} != {FORMAT_VERSION}")));
    }
    let found = CacheKey {
        gamma: read_f64(bytes, 8),
        n: read_u64(bytes, 16) as usize,
        r: read_f64(bytes, 24),
        angular_id: read_u64(bytes, 32),
        assembly_id: read_u64(bytes, 40),
    };
    if found.gamma.to_bits() != key.gamma.to_bits()
        || found.n != key.n
        || found.r.to_bits() != key.r.to_bits()
        || found.angular_id != key.angular_id
        || found.assembly_id != key.assembly_id
    {
        return Err(Error::CacheMismatch(format!("cache built for {found:?}, requested {key:?}")));
    }
    let body = &bytes[HEADER_LEN..];
    let m = key.n.pow(3);
    if body.len() != 8 * (m + m * m) {
        return Err(Error::CacheMismatch(format!("payload of {} bytes, expected {}", body.len(), 8 * (m + m * m))));
    }
    if Sha256::digest(body).as_slice() != &bytes[48..80] {
        return Err(Error::CacheMismatch("checksum mismatch".into()));
    }
    let nu: Vec<f64> = (0..m).map(|i| read_f64(body, 8 * i)).collect();
    let off = 8 * m;
    let k = Mat::from_fn(m, m, |i, j| read_f64(body, off + 8 * (i * m + j)));
    let grid = VelocityGrid::new(key.n, key.r)?;
    let assembly = Assembly::from_id(key.assembly_id)
        .ok_or_else(|| Error::CacheMismatch(format!("unknown assembly id {}", key.assembly_id)))?;
    if params.gamma.to_bits() != key.gamma.to_bits() || params.angular.id() != key.angular_id {
        return Err(Error::CacheMismatch("potential parameters differ from cache key".into()));
    }
    Ok(KernelMatrixBundle { nu, k, params: *params, grid, assembly })
}

/// Directory-backed cache with an advisory lock file around writes.
#[derive(Debug, Clone)]
pub struct MatrixCache {
    pub dir: PathBuf,
}

impl MatrixCache {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self { dir: dir.as_ref().to_path_buf() }
    }

    pub fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.file_name())
    }

    pub fn load(&self, key: &CacheKey, params: &PotentialParams) -> Result<Option<KernelMatrixBundle>> {
        let p = self.path(key);
        if !p.exists() {
            return Ok(None);
        }
        decode(&fs::read(p)?, key, params).map(Some)
    }

    pub fn store(&self, bundle: &KernelMatrixBundle) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let lock = self.dir.join(".kgrn.lock");
        let _guard = LockGuard::acquire(&lock)?;
        let key = CacheKey::of(bundle);
        let target = self.path(&key);
        let tmp = target.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(bundle))?;
        f.sync_all()?;
        fs::rename(&tmp, &target)?;
        Ok(target)
    }

    /// Load if present, otherwise assemble and store.
    pub fn get_or_assemble(
        &self,
        grid: &VelocityGrid,
        params: &PotentialParams,
        assembly: Assembly,
    ) -> Result<KernelMatrixBundle> {
        let key = CacheKey::new(grid, params, assembly);
        if let Some(b) = self.load(&key, params)? {
            return Ok(b);
        }
        let b = KernelMatrixBundle::assemble(grid, params, assembly)?;
        self.store(&b)?;
        Ok(b)
    }
}

struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(path: &Path) -> Result<Self> {
        for _ in 0..600 {
            match fs::OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(_) => return Ok(Self(path.to_path_buf())),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    std::thread::sleep(std::time::Duration::from_millis(100))
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::Resource(format!("cache lock {} held for over a minute", path.display())))
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}
