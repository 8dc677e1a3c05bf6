use clap::Parser;
use kgreen::config::ExperimentConfig;
use kgreen::harness::{run, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Command {
    KernelAudit,
    Spectrum,
    Green,
    Mixture,
    Waves,
    Convolve,
    Nonlinear,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::KernelAudit => Subcommand::KernelAudit,
            Command::Spectrum => Subcommand::Spectrum,
            Command::Green => Subcommand::Green,
            Command::Mixture => Subcommand::Mixture,
            Command::Waves => Subcommand::Waves,
            Command::Convolve => Subcommand::Convolve,
            Command::Nonlinear => Subcommand::Nonlinear,
        }
    }
}

/// Run one audit pipeline. Exit 0 when every check passes, 1 when a check is
/// flagged, 2 on error.
#[derive(Debug, Parser)]
#[command(name = "kgreen", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    grid_r: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn resolve(cli: &Cli) -> kgreen::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(g) = cli.gamma {
        cfg.gamma = g;
    }
    if let Some(n) = cli.grid_n {
        cfg.grid.n = n;
    }
    if let Some(r) = cli.grid_r {
        cfg.grid.r = r;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(c) = &cli.cache {
        cfg.cache.dir = c.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = resolve(&cli).and_then(|cfg| {
        if let Some(t) = cfg.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| kgreen::Error::Resource(e.to_string()))?;
        }
        run(cli.command.into(), &cfg)
    });
    match outcome {
        Ok(report) => {
            for c in &report.checks {
                println!("{} {} = {:.6e} ({})", if c.passed { "PASS" } else { "FLAG" }, c.name, c.value, c.threshold);
            }
            println!("report: {}", report.config.out.join(report.subcommand.name()).join("summary.json").display());
            ExitCode::from(if report.passed() { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
