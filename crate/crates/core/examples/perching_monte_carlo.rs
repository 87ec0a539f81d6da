//! Thirty perching attempts with aiming scatter; where the cups landed and
//! whether the drilling target stayed inside the gantry workspace.
//!
//! ```text
//! cargo run --release --example perching_monte_carlo -- [seed]
//! ```

use perchdrill::experiments::perching::{run_perching_mc, PerchingConfig};
use perchdrill::model::ParamSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let report = run_perching_mc(&ParamSet::default(), &PerchingConfig::default(), seed)?;
    for (k, v) in &report.summary {
        println!("{k:>24}: {v:.4}");
    }
    for c in &report.checks {
        println!("{:>24}: {:.4} in [{}, {}] {}", c.name, c.value, c.lo, c.hi, if c.pass { "ok" } else { "out of band" });
    }
    Ok(())
}
