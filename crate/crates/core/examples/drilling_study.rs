//! Nine holes in a 3x3 pattern, each drilled from a fresh perch with camera
//! alignment. Prints every hole's offset and the pattern statistics.
//!
//! ```text
//! cargo run --release --example drilling_study -- [seed] [--noiseless]
//! ```

use perchdrill::experiments::drilling::{run_drilling_study, DrillingConfig};
use perchdrill::model::ParamSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.iter().find_map(|a| a.parse().ok()).unwrap_or(3);
    let cfg = if args.iter().any(|a| a == "--noiseless") {
        DrillingConfig::noiseless()
    } else {
        DrillingConfig::default()
    };
    let report = run_drilling_study(&ParamSet::default(), &cfg, seed)?;
    if let Some(holes) = report.tables.iter().find(|t| t.file == "holes.csv") {
        print!("{}", holes.to_csv_string()?);
    }
    for (k, v) in &report.summary {
        println!("{k:>24}: {v:.3}");
    }
    println!("within bands: {}", report.passed());
    Ok(())
}
