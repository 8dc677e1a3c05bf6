//! Experiment orchestration: one pipeline per subcommand, each writing CSV
//! tables and a JSON summary with pass/flag checks under `out/<subcommand>/`.

use crate::audit::{audit_kernel_bounds, operator_report};
use crate::cache::{CacheKey, MatrixCache};
use crate::config::{CachePolicy, ExperimentConfig, SlabConfig};
use crate::convolution::{interaction_cases, run_case, ConvTolerance, SuiteParams};
use crate::error::{Error, Result};
use crate::kernels::{Assembly, KernelMatrixBundle, PotentialParams};
use crate::mixture::{enhanced_mixture_audit, split_audit, MixtureAuditConfig, ModeField, Slab, SlabSystem};
use crate::nonlinear::{
    bound_samples, conservation_report, coupled_solve, default_weight_lattice, field_norm, gamma_bound_fit,
    outside_cone_fit, scaling_report, weight_audit, BilinearQuadrature, GammaTensor, PicardConfig, WeightFunction,
};
use crate::sector::{ReducedSpace, SectorKind};
use crate::spectral::{fit_dispersion, FluidSpaces, SOUND_SPEED};
use crate::velocity::{MacroBasis, VelocityGrid};
use crate::waves::{
    default_spatial_profile, log_times, project_data, refinement_defect, wave_sweep, FluidEigenTable, RadialField,
    RhoQuadrature, VelocityData,
};
use serde::Serialize;
use serde_json::{json, Value};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    KernelAudit,
    Spectrum,
    Green,
    Mixture,
    Waves,
    Convolve,
    Nonlinear,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::KernelAudit,
        Subcommand::Spectrum,
        Subcommand::Green,
        Subcommand::Mixture,
        Subcommand::Waves,
        Subcommand::Convolve,
        Subcommand::Nonlinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::KernelAudit => "kernel-audit",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Green => "green",
            Subcommand::Mixture => "mixture",
            Subcommand::Waves => "waves",
            Subcommand::Convolve => "convolve",
            Subcommand::Nonlinear => "nonlinear",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown subcommand {s}")))
    }
}

/// One machine-checkable audit outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: String,
}

fn check(name: &str, value: f64, passed: bool, threshold: impl Into<String>) -> Check {
    Check { name: name.into(), passed: passed && !value.is_nan(), value, threshold: threshold.into() }
}

fn within(name: &str, value: f64, target: f64, tol: f64) -> Check {
    check(name, value, (value - target).abs() <= tol, format!("{target} ± {tol}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Flagged,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    /// SHA-256 of the canonical configuration.
    pub config_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub subcommand: Subcommand,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    /// CSV tables, relative to the report directory.
    pub tables: Vec<String>,
    pub summary: Value,
    pub checks: Vec<Check>,
    pub status: Status,
}

impl ReportBundle {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Collects tables while a pipeline runs.
struct Emitter {
    dir: PathBuf,
    tables: Vec<String>,
}

impl Emitter {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, tables: Vec::new() })
    }

    fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let file = format!("{name}.csv");
        let mut w = csv::Writer::from_path(self.dir.join(&file))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        self.tables.push(file);
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

struct Output {
    summary: Value,
    checks: Vec<Check>,
}

/// Run one pipeline and write its reports under `cfg.out/<subcommand>/`.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let dir = cfg.out.join(sub.name());
    let mut em = Emitter::new(dir.clone())?;
    let out = match sub {
        Subcommand::KernelAudit => kernel_audit(cfg, &mut em)?,
        Subcommand::Spectrum => spectrum(cfg, &mut em)?,
        Subcommand::Green => green(cfg, &mut em)?,
        Subcommand::Mixture => mixture(cfg, &mut em)?,
        Subcommand::Waves => waves(cfg, &mut em)?,
        Subcommand::Convolve => convolve(cfg, &mut em)?,
        Subcommand::Nonlinear => nonlinear(cfg, &mut em)?,
    };
    let status = if out.checks.iter().all(|c| c.passed) { Status::Pass } else { Status::Flagged };
    let bundle = ReportBundle {
        subcommand: sub,
        provenance: Provenance { config_hash: cfg.hash(), version: env!("CARGO_PKG_VERSION").into() },
        config: cfg.clone(),
        tables: em.tables,
        summary: out.summary,
        checks: out.checks,
        status,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&bundle)?)?;
    Ok(bundle)
}

fn params(cfg: &ExperimentConfig) -> Result<PotentialParams> {
    PotentialParams::new(cfg.gamma)
}

/// Operator on an n-point grid, honouring the cache policy.
pub fn load_bundle(cfg: &ExperimentConfig, n: usize) -> Result<KernelMatrixBundle> {
    let grid = VelocityGrid::new(n, cfg.grid.r)?;
    let p = params(cfg)?;
    let cache = MatrixCache::new(&cfg.cache.dir);
    match cfg.cache.policy {
        CachePolicy::Use => cache.get_or_assemble(&grid, &p, Assembly::default()),
        CachePolicy::Refresh => {
            let b = KernelMatrixBundle::assemble(&grid, &p, Assembly::default())?;
            cache.store(&b)?;
            Ok(b)
        }
        CachePolicy::Off => KernelMatrixBundle::assemble(&grid, &p, Assembly::default()),
    }
}

fn slab_system(bundle: &KernelMatrixBundle, slab: &SlabConfig) -> Result<SlabSystem> {
    let basis = MacroBasis::new(&bundle.grid);
    let space = ReducedSpace::new(bundle, &basis, SectorKind::Axisymmetric);
    Ok(SlabSystem::new(space, Slab::new(slab.half_length, slab.modes)?))
}

fn kernel_audit(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Output> {
    let bundle = load_bundle(cfg, cfg.grid.n)?;
    let op = operator_report(&bundle, cfg.kernel_audit.random_vectors, cfg.seed)?;
    let kb = audit_kernel_bounds(&bundle.params, cfg.kernel_audit.envelope_samples, cfg.seed)?;
    em.table("null_residuals", &["j", "residual"], op.null_residuals.iter().enumerate().map(|(j, r)| vec![j.to_string(), fmt(*r)]))?;
    em.table(
        "row_integrals",
        &["tau", "speed", "value"],
        kb.row_integrals.iter().flat_map(|f| f.speeds.iter().zip(&f.values).map(move |(s, v)| vec![fmt(f.tau), fmt(*s), fmt(*v)])),
    )?;
    em.table("caflisch", &["speed", "product"], kb.caflisch.speeds.iter().zip(&kb.caflisch.products).map(|(s, v)| vec![fmt(*s), fmt(*v)]))?;
    let max_null = op.null_residuals.iter().cloned().fold(0.0, f64::max);
    let mut checks = vec![
        check("asymmetry", op.asymmetry, op.asymmetry <= 1e-10, "<= 1e-10"),
        check("null_residual", max_null, max_null <= 1e-2, "<= 1e-2"),
        check("max_rayleigh", op.max_rayleigh, op.max_rayleigh <= 1e-8, "<= 1e-8"),
        check("coercivity", op.coercivity, op.coercivity > 0.0, "> 0"),
        check("envelope_h0", kb.envelopes.sup_ratio_h0, kb.envelopes.finite && kb.envelopes.sup_ratio_h0.is_finite(), "finite"),
        check("envelope_h1", kb.envelopes.sup_ratio_h1, kb.envelopes.finite && kb.envelopes.sup_ratio_h1.is_finite(), "finite"),
    ];
    for f in &kb.row_integrals {
        checks.push(within(&format!("row_integral_tau{}", f.tau), f.exponent, f.expected, 0.2));
    }
    checks.push(check("caflisch_tail", kb.caflisch.tail_ratio, kb.caflisch.sup_product.is_finite() && kb.caflisch.tail_ratio <= 1.0, "tail <= max over |ξ| <= 10"));
    Ok(Output { summary: json!({ "operator": op, "kernel_bounds": kb }), checks })
}

fn spectrum(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Output> {
    let bundle = load_bundle(cfg, cfg.grid.n)?;
    let spaces = FluidSpaces::new(&bundle);
    let s = &cfg.spectrum;
    let samples = log_times(s.eta_min, s.eta_max, s.samples);
    let fit = fit_dispersion(&spaces, &samples, cfg.delta)?;
    let mut header = vec!["eta".to_string()];
    for j in 0..5 {
        header.push(format!("re{j}"));
        header.push(format!("im{j}"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    em.table(
        "dispersion",
        &header,
        fit.samples.iter().map(|d| {
            let mut r = vec![fmt(d.eta_mag)];
            for j in 0..5 {
                r.push(fmt(d.re[j]));
                r.push(fmt(d.im[j]));
            }
            r
        }),
    )?;
    em.table("coefficients", &["branch", "a", "A"], (0..5).map(|j| vec![j.to_string(), fmt(fit.a[j]), fmt(fit.diffusion[j])]))?;
    let mut checks = vec![within("a0", fit.a[0], SOUND_SPEED, 0.01), within("a1", fit.a[1], -SOUND_SPEED, 0.01)];
    for j in 2..5 {
        checks.push(within(&format!("a{j}"), fit.a[j], 0.0, 0.01));
    }
    let min_a = fit.diffusion.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(check("diffusion_positive", min_a, min_a > 0.0, "> 0"));
    Ok(Output { summary: json!({ "dispersion": fit }), checks })
}

fn green(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Output> {
    let g = &cfg.green;
    let bundle = load_bundle(cfg, cfg.grid.n)?;
    let sys = slab_system(&bundle, &g.slab)?;
    let rep = split_audit(&sys, g.q, g.levels, g.t_final, g.steps_per_unit, g.record_every)?;
    em.table(
        "split",
        &["t", "particle_sup", "fluid_sup"],
        rep.t.iter().zip(&rep.particle_sup).zip(&rep.fluid_sup).map(|((t, p), f)| vec![fmt(*t), fmt(*p), fmt(*f)]),
    )?;
    let rich = richardson(&sys, g.q, g.levels.min(3), &g.richardson_steps)?;
    em.table("richardson", &["level", "ratio"], rich.iter().enumerate().map(|(l, r)| vec![(l + 1).to_string(), fmt(*r)]))?;
    let mut checks = vec![
        check("particle_decay_rate", rep.particle_decay.rate, rep.particle_decay.rate > 0.0, "> 0"),
        check(
            "weight_gain",
            rep.fluid_weight.weight - rep.particle_weight.weight,
            rep.fluid_weight.weight > rep.particle_weight.weight,
            "fluid weight > particle weight",
        ),
        check("partition_defect", rep.partition_defect, rep.partition_defect <= 1e-8, "<= 1e-8"),
    ];
    for (l, r) in rich.iter().enumerate() {
        checks.push(within(&format!("richardson_level{}", l + 1), *r, 4.0, 0.5));
    }
    Ok(Output { summary: json!({ "split": rep, "richardson": rich }), checks })
}

/// Ratio of successive step-halving differences of ladder levels 1..=`n` at t = 1.
pub fn richardson(sys: &SlabSystem, q: f64, n: usize, steps: &[usize; 3]) -> Result<Vec<f64>> {
    let h0 = sys.initial_field(crate::mixture::default_bump, |v| (1.0 + v).powf(-q))?;
    let l: Vec<_> = steps.iter().map(|&s| sys.mixture_ladder(&h0, 1.0, n, s)).collect::<Result<_>>()?;
    Ok((1..=n)
        .map(|m| l[0].levels[m].sub(&l[1].levels[m]).max_abs() / l[1].levels[m].sub(&l[2].levels[m]).max_abs())
        .collect())
}

fn mixture(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Output> {
    let m = &cfg.mixture;
    let bundle = load_bundle(cfg, cfg.grid.n)?;
    let sys = slab_system(&bundle, &m.slab)?;
    let audit = MixtureAuditConfig {
        levels: m.levels,
        weight_p: m.weight_p,
        q: m.q,
        c0_candidates: m.c0_candidates.clone(),
        t_final: m.t_final,
        steps_per_unit: m.steps_per_unit,
        record_every: m.record_every,
        combos: m.combos.clone(),
    };
    let rep = enhanced_mixture_audit(&sys, &bundle.params, &audit)?;
    em.table(
        "tradeoff",
        &["M", "P", "excess", "fitted_exponent", "predicted_bounded", "observed_bounded"],
        rep.tradeoff.cases.iter().map(|c| {
            vec![fmt(c.m), fmt(c.p), fmt(c.excess), fmt(c.fitted_exponent), c.predicted_bounded.to_string(), c.observed_bounded.to_string()]
        }),
    )?;
    em.table(
        "weighted_l2",
        &["t", "value"],
        rep.weighted_l2.t.iter().zip(&rep.weighted_l2.values).map(|(t, v)| vec![fmt(*t), fmt(*v)]),
    )?;
    em.table(
        "tables",
        &["M", "P", "N", "t", "sup"],
        rep.tables.iter().flat_map(|tb| tb.t.iter().zip(&tb.sup).map(move |(t, s)| vec![fmt(tb.m), fmt(tb.p), tb.n.to_string(), fmt(*t), fmt(*s)])),
    )?;
    let checks = vec![
        check("tradeoff_mismatches", rep.tradeoff.mismatches as f64, rep.tradeoff.mismatches == 0, "== 0"),
        check("weighted_l2_rate", rep.weighted_l2.rate, rep.weighted_l2.rate > 0.0, "> 0"),
        check("tables_bounded", rep.c0, rep.tables_bounded, "some c0 bounds every table"),
    ];
    Ok(Output { summary: json!({ "mixture": rep }), checks })
}

fn wave_table(em: &mut Emitter, name: &str, fields: &[RadialField]) -> Result<()> {
    em.table(
        name,
        &["t", "z", "norm", "density", "momentum", "energy"],
        fields.iter().flat_map(|f| {
            (0..f.radii.len())
                .map(move |i| vec![fmt(f.t), fmt(f.radii[i]), fmt(f.values[i]), fmt(f.density[i]), fmt(f.momentum[i]), fmt(f.energy[i])])
        }),
    )
}

fn waves(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Output> {
    let w = &cfg.waves;
    let bundle = load_bundle(cfg, cfg.grid.n)?;
    let spaces = FluidSpaces::new(&bundle);
    let table = FluidEigenTable::new(&spaces, w.delta, w.chebyshev)?;
    let times = log_times(w.t_min, w.t_max, w.times);
    let profile = |v: f64| (-v * v / 3.0).exp();
    let general = VelocityData::isotropic(&spaces, profile, false);
    let p1 = VelocityData::new(&spaces, profile, profile, true);
    let quad = RhoQuadrature { panels: w.panels, order: w.order };
    let (gf, gr) = wave_sweep(&project_data(&table, &general, default_spatial_profile, 0.0, quad)?, &times, w.step)?;
    let (pf, pr) = wave_sweep(&project_data(&table, &p1, default_spatial_profile, 0.0, quad)?, &times, w.step)?;
    wave_table(em, "general", &gf)?;
    wave_table(em, "p1", &pf)?;
    let mut checks = vec![
        within("interior_exponent", gr.interior_exponent, 1.5, 0.15),
        check("ridge_speed", gr.ridge_speed, (gr.ridge_speed / SOUND_SPEED - 1.0).abs() <= 0.03 && gr.ridge_detected, "√(5/3) ± 3%"),
        within("ridge_exponent", gr.ridge_exponent, 2.0, 0.2),
        within("p1_interior_exponent", pr.interior_exponent, 2.0, 0.2),
    ];
    let mut refinement = Value::Null;
    if w.refinement_check {
        let (ff, _) = wave_sweep(&project_data(&table, &general, default_spatial_profile, 0.0, quad.refined())?, &times, w.step)?;
        let d = refinement_defect(&gf, &ff);
        checks.push(check("rho_refinement", d, d <= 1e-2, "<= 1e-2"));
        refinement = json!(d);
    }
    Ok(Output { summary: json!({ "general": gr, "p1": pr, "rho_refinement": refinement }), checks })
}

fn convolve(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Output> {
    let c = &cfg.convolve;
    let params = SuiteParams { m: c.m, k: c.k, gamma: cfg.gamma, rate: c.rate };
    let times = log_times(1.0, c.t_max, c.times);
    let cases: Vec<_> = interaction_cases(&params).into_iter().filter(|k| c.cases.is_empty() || c.cases.contains(&k.name)).collect();
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    for case in &cases {
        let r = run_case(case, &times, &c.fixed_radii, ConvTolerance { rel: c.rel_tol })?;
        em.table(
            &format!("conv_{}", r.name),
            &["t", "x", "value", "bound", "ratio", "refinement"],
            r.points.iter().map(|p| vec![fmt(p.t), fmt(p.x), fmt(p.value), fmt(p.bound), fmt(p.ratio), fmt(p.refinement)]),
        )?;
        checks.push(check(&format!("{}_finite", r.name), r.sup_ratio, r.finite, "finite"));
        checks.push(check(&format!("{}_trend", r.name), r.local_slopes.last().copied().unwrap_or(0.0), r.trend_stable, "stable"));
        checks.push(check(&format!("{}_refinement", r.name), r.max_refinement, r.max_refinement <= 1e-2, "<= 1e-2"));
        reports.push(json!({
            "name": r.name,
            "sup_ratio": r.sup_ratio,
            "ratio_by_time": r.ratio_by_time,
            "local_slopes": r.local_slopes,
            "trend_stable": r.trend_stable,
            "max_refinement": r.max_refinement,
        }));
    }
    Ok(Output { summary: json!({ "params": params, "times": times, "cases": reports }), checks })
}

/// Smooth test function for the full-grid conservation audit.
pub fn conservation_probe(grid: &VelocityGrid) -> Vec<f64> {
    grid.sample(|x| (1.0 + x[0] - 0.3 * x[1] * x[2] + 0.2 * x[2]) * (-0.3 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp())
}

/// Compact bump (1 − x²)^k.
fn bump(k: i32) -> impl Fn(f64) -> f64 {
    move |x: f64| if x.abs() < 1.0 { (1.0 - x * x).powi(k) } else { 0.0 }
}

fn nonlinear(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Output> {
    let nl = &cfg.nonlinear;
    let p = params(cfg)?;
    let mut checks = Vec::new();
    let mut summary = serde_json::Map::new();

    // conservation on the full grid, coarse then main resolution
    if nl.full_grid_check {
        let mut reps = Vec::new();
        for n in [nl.n, cfg.grid.n] {
            let grid = VelocityGrid::new(n, cfg.grid.r)?;
            reps.push(conservation_report(&BilinearQuadrature::new(&grid, &p), &conservation_probe(&grid))?);
        }
        let last = &reps[reps.len() - 1];
        checks.push(check("conservation_projected", last.max_projected, last.max_projected <= 1e-6, "<= 1e-6"));
        if cfg.grid.n > nl.n {
            checks.push(check(
                "conservation_raw_refinement",
                last.max_raw / reps[0].max_raw,
                last.max_raw < reps[0].max_raw,
                "raw defect decreases under refinement",
            ));
        }
        em.table(
            "conservation",
            &["n", "j", "raw", "projected"],
            reps.iter().flat_map(|r| (0..5).map(move |j| vec![r.points_per_axis.to_string(), j.to_string(), fmt(r.raw[j]), fmt(r.projected[j])])),
        )?;
        summary.insert("conservation".into(), json!(reps));
    }

    let bundle = load_bundle(cfg, nl.n)?;
    let sys = slab_system(&bundle, &nl.slab)?;
    let quad = BilinearQuadrature::new(&bundle.grid, &p);
    let tensor = GammaTensor::build(&quad, &sys.space)?;

    let mut fits = Vec::new();
    for tau in [0.0, 2.0] {
        let hs = bound_samples(&sys.space, tau, nl.bound_samples / 2, cfg.seed);
        let fit = gamma_bound_fit(&tensor, &sys.space, &hs, tau)?;
        checks.push(check(&format!("gamma_bound_tau{tau}"), fit.spread, fit.constant.is_finite() && fit.spread <= 0.25, "batch spread <= 0.25"));
        fits.push(fit);
    }
    summary.insert("gamma_bound".into(), json!(fits));

    let f0 = sys.initial_field(bump(4), |v| (-0.25 * v * v).exp() * (1.0 + v * v))?;
    let picard = PicardConfig { final_time: nl.final_time, dt: nl.dt, tolerance: nl.tolerance, levels: nl.levels, ..PicardConfig::default() };
    let mut eps = nl.epsilons.clone();
    eps.sort_by(f64::total_cmp);
    let runs: Vec<_> = eps.iter().map(|&e| coupled_solve(&sys, &tensor, &f0, e, &picard)).collect::<Result<_>>()?;
    let scaling = scaling_report(&sys, &runs)?;
    em.table(
        "nonlinear_series",
        &["epsilon", "t", "full", "particle", "fluid", "linear"],
        runs.iter().flat_map(|r| {
            let sys = &sys;
            (0..r.times.len()).map(move |k| {
                vec![
                    fmt(r.epsilon),
                    fmt(r.times[k]),
                    fmt(field_norm(sys, &r.full[k])),
                    fmt(field_norm(sys, &r.particle[k])),
                    fmt(field_norm(sys, &r.fluid[k])),
                    fmt(r.epsilon * field_norm(sys, &r.linear[k])),
                ]
            })
        }),
    )?;
    em.table(
        "scaling",
        &["epsilon", "correction", "linear_defect", "contraction", "iterations"],
        (0..eps.len()).map(|k| {
            vec![
                fmt(scaling.epsilons[k]),
                fmt(scaling.corrections[k]),
                fmt(scaling.linear_defects[k]),
                fmt(scaling.contraction[k]),
                scaling.iterations[k].to_string(),
            ]
        }),
    )?;
    checks.push(within("correction_slope", scaling.slope, 2.0, 0.1));
    let d = &scaling.defect_over_epsilon;
    let spread = d.iter().cloned().fold(0.0, f64::max) / d.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(check("linear_defect_order", spread, spread.is_finite() && spread <= 1.5, "defect/ε varies by <= 1.5x"));
    summary.insert("scaling".into(), json!(scaling));

    let co = &nl.cone;
    let cone_bundle = if co.slab == nl.slab { None } else { Some(slab_system(&bundle, &co.slab)?) };
    let cone_sys = cone_bundle.as_ref().unwrap_or(&sys);
    let decay = co.p + co.beta + 0.5 * cfg.gamma;
    let c0 = cone_sys.initial_field(bump(12), |v| (1.0 + v * v).powf(-0.5 * decay))?;
    let record: Vec<usize> = (1..=co.steps).collect();
    let series = cone_sys.full_series(&c0, co.dt, &record);
    let pairs: Vec<(f64, &ModeField)> = record.iter().zip(&series).map(|(&j, f)| (co.dt * j as f64, f)).collect();
    let cone = outside_cone_fit(cone_sys, &pairs, co.p, co.beta, cfg.gamma, co.delta, co.reach, co.samples, co.floor)?;
    em.table(
        "cone_fit",
        &["t", "exponent", "residual"],
        (0..cone.times.len()).map(|k| vec![fmt(cone.times[k]), fmt(cone.exponents[k]), fmt(cone.residuals[k])]),
    )?;
    checks.push(check(
        "cone_decay_bound",
        cone.mean_exponent,
        !cone.insufficient_range && cone.mean_exponent <= cone.expected_exponent + 0.5,
        format!("<= {} + 0.5", cone.expected_exponent),
    ));
    summary.insert(
        "cone_two_sided".into(),
        json!({ "within_half": (cone.mean_exponent - cone.expected_exponent).abs() <= 0.5, "expected": cone.expected_exponent }),
    );
    summary.insert("cone".into(), json!(cone));

    let (ts, xs, speeds) = default_weight_lattice();
    let wa = weight_audit(&WeightFunction::new(co.delta, co.p, cfg.gamma)?, &ts, &xs, &speeds)?;
    checks.push(check("weight_monotone", wa.max_dt_relative, wa.passed, "∂_t w <= 0 and w > 0"));
    summary.insert("weight_audit".into(), json!(wa));
    Ok(Output { summary: Value::Object(summary), checks })
}

/// Bit-exact comparison of two cached operators.
pub fn cache_round_trip(bundle: &KernelMatrixBundle, dir: &Path) -> Result<bool> {
    let cache = MatrixCache::new(dir);
    cache.store(bundle)?;
    let back = cache
        .load(&CacheKey::of(bundle), &bundle.params)?
        .ok_or_else(|| Error::CacheMismatch("stored cache entry vanished".into()))?;
    let m = bundle.nu.len();
    let same_nu = bundle.nu.iter().zip(&back.nu).all(|(a, b)| a.to_bits() == b.to_bits());
    let same_k = (0..m).all(|i| (0..m).all(|j| bundle.k[(i, j)].to_bits() == back.k[(i, j)].to_bits()));
    Ok(same_nu && same_k)
}
