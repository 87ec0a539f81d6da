//! Perch, tilt onto the wall, then take the robot off again. Prints the event
//! log of the detachment sequence.
//!
//! ```text
//! cargo run --release --example detachment_replay -- [--keep-valves-shut]
//! ```

use perchdrill::experiments::detachment::{run_detachment, DetachmentConfig};
use perchdrill::model::ParamSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shut = std::env::args().any(|a| a == "--keep-valves-shut");
    let cfg = DetachmentConfig {
        open_valves: !shut,
        horizon: if shut { 40.0 } else { 60.0 },
        ..DetachmentConfig::default()
    };
    let run = run_detachment(&ParamSet::default(), &cfg, 1)?;
    for e in &run.events {
        println!("{:>9.3}  {:<22} {}", e.time, e.kind.to_string(), e.detail);
    }
    match run.separated_at {
        Some(t) => println!("separated at {t:.3} s; release order ok: {}; clears wall: {}", run.ordered(), run.clears_wall(cfg.clearance_window)),
        None => println!("still attached after {:.1} s", cfg.horizon),
    }
    Ok(())
}
