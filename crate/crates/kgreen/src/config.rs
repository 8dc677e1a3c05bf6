//! Experiment configuration: one TOML file with a section per pipeline,
//! validated as a whole before any computation starts.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    /// Load when present, otherwise assemble and store.
    Use,
    /// Always assemble and overwrite.
    Refresh,
    /// Assemble in memory only.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub dir: PathBuf,
    pub policy: CachePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelAuditConfig {
    pub envelope_samples: usize,
    pub random_vectors: usize,
}

impl Default for KernelAuditConfig {
    fn default() -> Self {
        Self { envelope_samples: 10_000, random_vectors: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Smallest and largest |η| of the log-spaced fit samples.
    pub eta_min: f64,
    pub eta_max: f64,
    pub samples: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { eta_min: 0.02, eta_max: 0.2, samples: 10 }
    }
}

/// Slab geometry shared by the transport pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlabConfig {
    pub half_length: f64,
    pub modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenConfig {
    pub slab: SlabConfig,
    pub levels: usize,
    /// Velocity decay (1+|ξ|)^{−q} of the initial data.
    pub q: f64,
    pub t_final: f64,
    pub steps_per_unit: usize,
    pub record_every: usize,
    /// Time steps of the ladder convergence study at t = 1.
    pub richardson_steps: [usize; 3],
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self {
            slab: SlabConfig { half_length: 40.0, modes: 1024 },
            levels: 6,
            q: 2.0,
            t_final: 6.0,
            steps_per_unit: 64,
            record_every: 16,
            richardson_steps: [16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    pub slab: SlabConfig,
    pub levels: usize,
    pub weight_p: f64,
    pub q: f64,
    pub c0_candidates: Vec<f64>,
    pub t_final: f64,
    pub steps_per_unit: usize,
    pub record_every: usize,
    /// (M, P, N) combinations for the pointwise tables.
    pub combos: Vec<(f64, f64, usize)>,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        let m = crate::mixture::MixtureAuditConfig::default();
        Self {
            slab: SlabConfig { half_length: 40.0, modes: 1024 },
            levels: m.levels,
            weight_p: m.weight_p,
            q: m.q,
            c0_candidates: m.c0_candidates,
            t_final: m.t_final,
            steps_per_unit: m.steps_per_unit,
            record_every: m.record_every,
            combos: m.combos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WavesConfig {
    pub delta: f64,
    pub chebyshev: usize,
    pub panels: usize,
    pub order: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub times: usize,
    pub step: f64,
    /// Also run with doubled ρ panels and report the change.
    pub refinement_check: bool,
}

impl Default for WavesConfig {
    fn default() -> Self {
        Self { delta: 1.5, chebyshev: 32, panels: 60, order: 10, t_min: 20.0, t_max: 200.0, times: 9, step: 0.25, refinement_check: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvolveConfig {
    pub times: usize,
    pub t_max: f64,
    pub fixed_radii: Vec<f64>,
    pub rel_tol: f64,
    pub m: f64,
    pub k: u32,
    pub rate: f64,
    /// Restrict to these case names (all when empty).
    pub cases: Vec<String>,
}

impl Default for ConvolveConfig {
    fn default() -> Self {
        Self { times: 13, t_max: 100.0, fixed_radii: vec![1.0, 5.0], rel_tol: 1e-5, m: 3.0, k: 3, rate: 0.5, cases: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearConfig {
    /// Velocity points per axis of the Picard run.
    pub n: usize,
    pub slab: SlabConfig,
    pub final_time: f64,
    pub dt: f64,
    pub epsilons: Vec<f64>,
    pub tolerance: f64,
    pub levels: usize,
    /// Random samples per τ in the Γ bound fit, split into two seeded batches.
    pub bound_samples: usize,
    /// Also evaluate Γ on the full grid of the main config (conservation check).
    pub full_grid_check: bool,
    pub cone: ConeConfig,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            n: 10,
            slab: SlabConfig { half_length: 20.0, modes: 128 },
            final_time: 40.0,
            dt: 0.25,
            epsilons: vec![1e-4, 3e-4, 1e-3],
            tolerance: 1e-8,
            levels: 3,
            bound_samples: 400,
            full_grid_check: true,
            cone: ConeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeConfig {
    pub p: f64,
    pub beta: f64,
    pub delta: f64,
    pub slab: SlabConfig,
    pub dt: f64,
    pub steps: usize,
    pub reach: f64,
    pub samples: usize,
    pub floor: f64,
}

impl Default for ConeConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            beta: 2.0,
            delta: 0.2,
            slab: SlabConfig { half_length: 40.0, modes: 1024 },
            dt: 0.5,
            steps: 12,
            reach: 0.9,
            samples: 48,
            floor: 1e-9,
        }
    }
}

/// Fully resolved experiment description; every report embeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub gamma: f64,
    pub grid: GridConfig,
    /// Cutoff of the fluid projection in the dispersion fit.
    pub delta: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub cache: CacheConfig,
    pub threads: Option<usize>,
    pub kernel_audit: KernelAuditConfig,
    pub spectrum: SpectrumConfig,
    pub green: GreenConfig,
    pub mixture: MixtureConfig,
    pub waves: WavesConfig,
    pub convolve: ConvolveConfig,
    pub nonlinear: NonlinearConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            grid: GridConfig { n: 12, r: 6.5 },
            delta: 0.5,
            seed: 7,
            out: PathBuf::from("kgreen-out"),
            cache: CacheConfig { dir: PathBuf::from("kgreen-cache"), policy: CachePolicy::Use },
            threads: None,
            kernel_audit: KernelAuditConfig::default(),
            spectrum: SpectrumConfig::default(),
            green: GreenConfig::default(),
            mixture: MixtureConfig::default(),
            waves: WavesConfig::default(),
            convolve: ConvolveConfig::default(),
            nonlinear: NonlinearConfig::default(),
        }
    }
}

fn check(errors: &mut Vec<String>, ok: bool, field: &str, msg: impl std::fmt::Display) {
    if !ok {
        errors.push(format!("{field}: {msg}"));
    }
}

fn check_slab(errors: &mut Vec<String>, s: &SlabConfig, field: &str) {
    check(errors, s.half_length > 1.0 && s.half_length.is_finite(), &format!("{field}.half_length"), format!("{} must exceed 1", s.half_length));
    check(errors, s.modes >= 4 && s.modes % 2 == 0, &format!("{field}.modes"), format!("{} must be even and >= 4", s.modes));
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Every offending field, or Ok.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        check(&mut e, (0.0..=1.0).contains(&self.gamma), "gamma", format!("{} outside [0, 1]", self.gamma));
        check(&mut e, self.grid.n >= 4, "grid.n", format!("{} < 4", self.grid.n));
        check(&mut e, positive(self.grid.r), "grid.r", format!("{} must be positive", self.grid.r));
        check(&mut e, self.grid.n.pow(3) <= crate::kernels::MAX_NODES, "grid.n", format!("{}³ nodes exceed the dense limit", self.grid.n));
        check(&mut e, positive(self.delta), "delta", format!("{} must be positive", self.delta));
        check(&mut e, self.threads != Some(0), "threads", "must be at least 1");
        let ka = &self.kernel_audit;
        check(&mut e, ka.envelope_samples >= 1, "kernel_audit.envelope_samples", "must be at least 1");
        check(&mut e, ka.random_vectors >= 1, "kernel_audit.random_vectors", "must be at least 1");
        let sp = &self.spectrum;
        check(&mut e, positive(sp.eta_min) && sp.eta_min < sp.eta_max, "spectrum.eta_min", "need 0 < eta_min < eta_max");
        check(&mut e, sp.eta_max <= self.delta, "spectrum.eta_max", format!("{} exceeds delta = {}", sp.eta_max, self.delta));
        check(&mut e, sp.samples >= 4, "spectrum.samples", "need at least 4");
        let g = &self.green;
        check_slab(&mut e, &g.slab, "green.slab");
        check(&mut e, g.levels >= 1, "green.levels", "need N >= 1");
        check(&mut e, positive(g.t_final), "green.t_final", "must be positive");
        check(&mut e, g.steps_per_unit >= 8 && g.record_every >= 1, "green.steps_per_unit", "need >= 8 steps per unit and record_every >= 1");
        check(&mut e, g.richardson_steps.iter().all(|&s| s >= 8) && g.richardson_steps.windows(2).all(|w| w[1] == 2 * w[0]), "green.richardson_steps", "need doubling step counts >= 8");
        let m = &self.mixture;
        check_slab(&mut e, &m.slab, "mixture.slab");
        check(&mut e, !m.c0_candidates.is_empty() && m.c0_candidates.iter().all(|&c| positive(c)), "mixture.c0_candidates", "need positive candidates");
        check(&mut e, positive(m.t_final) && m.steps_per_unit >= 8 && m.record_every >= 1, "mixture.t_final", "need positive time and >= 8 steps per unit");
        let w = &self.waves;
        check(&mut e, positive(w.delta), "waves.delta", "must be positive");
        check(&mut e, w.chebyshev >= 4, "waves.chebyshev", "need at least 4 nodes");
        check(&mut e, w.panels >= 1 && w.order >= 2, "waves.panels", "need panels >= 1 and order >= 2");
        check(&mut e, positive(w.t_min) && w.t_min < w.t_max && w.times >= 4, "waves.t_min", "need 0 < t_min < t_max and >= 4 times");
        check(&mut e, w.t_max >= 10.0 * w.t_min, "waves.t_max", "fit window must span a decade");
        check(&mut e, positive(w.step), "waves.step", "must be positive");
        let c = &self.convolve;
        check(&mut e, c.times >= 4 && c.t_max > 1.0, "convolve.times", "need >= 4 times and t_max > 1");
        check(&mut e, positive(c.rel_tol) && c.rel_tol < 1e-2, "convolve.rel_tol", "must lie in (0, 1e-2)");
        check(&mut e, c.fixed_radii.iter().all(|&r| r >= 0.0), "convolve.fixed_radii", "radii must be non-negative");
        check(&mut e, positive(c.m) && c.k >= 1 && positive(c.rate), "convolve.m", "need m > 0, k >= 1, rate > 0");
        let known: Vec<String> = crate::convolution::interaction_cases(&crate::convolution::SuiteParams::default()).into_iter().map(|c| c.name).collect();
        for name in &c.cases {
            check(&mut e, known.contains(name), "convolve.cases", format!("unknown case {name}"));
        }
        let nl = &self.nonlinear;
        check(&mut e, nl.n >= 4 && nl.n.pow(3) <= crate::kernels::MAX_NODES, "nonlinear.n", format!("{} out of range", nl.n));
        check_slab(&mut e, &nl.slab, "nonlinear.slab");
        check(&mut e, positive(nl.final_time) && positive(nl.dt) && nl.dt <= nl.final_time, "nonlinear.dt", "need 0 < dt <= final_time");
        check(&mut e, nl.epsilons.len() >= 2 && nl.epsilons.iter().all(|&x| positive(x)), "nonlinear.epsilons", "need at least two positive values");
        check(&mut e, positive(nl.tolerance) && nl.tolerance < 1e-2, "nonlinear.tolerance", "must lie in (0, 1e-2)");
        check(&mut e, nl.levels >= 1, "nonlinear.levels", "need N >= 1");
        check(&mut e, nl.bound_samples >= 4, "nonlinear.bound_samples", "need at least 4");
        check(&mut e, self.gamma < 1.0, "gamma", "the nonlinear weight needs gamma < 1");
        let co = &nl.cone;
        check(&mut e, positive(co.p) && co.beta >= 0.0 && positive(co.delta), "nonlinear.cone.p", "need p > 0, beta >= 0, delta > 0");
        check_slab(&mut e, &co.slab, "nonlinear.cone.slab");
        check(&mut e, positive(co.dt) && co.steps >= 1, "nonlinear.cone.dt", "need dt > 0 and steps >= 1");
        check(&mut e, co.reach > 0.0 && co.reach <= 1.0, "nonlinear.cone.reach", "must lie in (0, 1]");
        check(&mut e, co.samples >= 4 && co.floor >= 0.0, "nonlinear.cone.samples", "need >= 4 samples and floor >= 0");
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn validation_lists_every_offending_field() {
        let mut c = ExperimentConfig::default();
        c.gamma = 2.0;
        c.grid.n = 2;
        c.waves.times = 1;
        match c.validate() {
            Err(Error::Config(v)) => {
                assert!(v.iter().any(|m| m.starts_with("gamma")));
                assert!(v.iter().any(|m| m.starts_with("grid.n")));
                assert!(v.iter().any(|m| m.starts_with("waves.t_min")));
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("gamma = 0.5\nbogus = 1\n").is_err());
        let c = ExperimentConfig::from_toml("gamma = 0.0\n[grid]\nn = 8\nr = 6.0\n").unwrap();
        assert_eq!(c.grid.n, 8);
        assert_eq!(c.waves, WavesConfig::default());
    }
}
