//! Play a mission script and print the event log.
//!
//! ```text
//! cargo run --example scripted_mission -- [path/to/script.mission]
//! ```

use std::path::PathBuf;

use perchdrill::model::ParamSet;
use perchdrill::script::{MissionScript, ScriptRunner};
use perchdrill::sim::{mission_start, SimConfig, Simulator};
use perchdrill::telemetry::EventKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/missions/nominal.mission"));
    let script = MissionScript::load(&path)?;
    let params = ParamSet::default();
    let mut sim = Simulator::new(&params, SimConfig::default(), mission_start(&params))?;
    let outcome = ScriptRunner::new(script).run(&mut sim)?;

    for e in sim.events.iter().filter(|e| e.kind != EventKind::Accepted) {
        println!("{:>8.3}  {:<22} {}", e.time, e.kind.to_string(), e.detail);
    }
    for (line, r) in &outcome.rejections {
        println!("line {line}: {r}");
    }
    for h in &sim.holes {
        println!("hole at ({:.1}, {:.1}) mm, {:.1} mm deep", h.centre.x * 1e3, h.centre.y * 1e3, h.depth * 1e3);
    }
    println!(
        "{} after {:.1} s with {} telemetry records",
        if outcome.completed { "completed" } else { "timed out" },
        outcome.end_time,
        sim.telemetry.len()
    );
    Ok(())
}
