//! Space-time convolution of two wave envelopes against its claimed bound.

use kgreen::convolution::{default_times, interaction_cases, run_case, ConvTolerance, SuiteParams};

fn main() -> kgreen::Result<()> {
    let cases = interaction_cases(&SuiteParams::default());
    let case = cases.iter().find(|c| c.name == "sharp-4").expect("suite case");
    let rep = run_case(case, &default_times(7), &[1.0, 5.0], ConvTolerance::default())?;
    for (t, r) in &rep.ratio_by_time {
        println!("t = {t:7.2}: sup ratio {r:.4}");
    }
    println!("trend stable {}, refinement change {:.1e}", rep.trend_stable, rep.max_refinement);
    Ok(())
}
