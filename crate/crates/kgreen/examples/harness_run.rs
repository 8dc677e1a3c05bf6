//! Drive a pipeline through the harness from a TOML configuration.

use kgreen::config::ExperimentConfig;
use kgreen::harness::{run, Subcommand};

fn main() -> kgreen::Result<()> {
    let tmp = std::env::temp_dir();
    let text = format!(
        "gamma = 0.5\nout = {:?}\n[grid]\nn = 8\nr = 6.5\n[cache]\ndir = {:?}\npolicy = \"use\"\n",
        tmp.join("kgreen-example-out"),
        tmp.join("kgreen-example-cache")
    );
    let cfg = ExperimentConfig::from_toml(&text)?;
    let report = run(Subcommand::Spectrum, &cfg)?;
    for c in &report.checks {
        println!("{} {} = {:.5} ({})", if c.passed { "PASS" } else { "FLAG" }, c.name, c.value, c.threshold);
    }
    println!("config hash {}", report.provenance.config_hash);
    println!("tables {:?}", report.tables);
    Ok(())
}
