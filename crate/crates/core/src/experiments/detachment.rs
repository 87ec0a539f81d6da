//! Taking the robot off the wall: perch, tilt into Manipulation, then run
//! the detachment sequence and fly back into free flight.
//!
//! The report lists the sequence events with their times and checks that the
//! thrust ramp finishes before the pumps stop, the pumps stop before the
//! valves open, and the valves open before the cups let go. After separation
//! the distance to the wall must keep growing.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{num, operator, Check, ExperimentError, ExperimentReport, Table};
use crate::command::{OperationMode, OperatorCommand};
use crate::model::{ParamSet, Vec2};
use crate::sim::{hover_state, SimConfig, Simulator};
use crate::telemetry::{EventKind, EventRecord, TELEMETRY_PERIOD};

/// Events whose first occurrences must appear in this order.
pub const RELEASE_ORDER: [EventKind; 4] = [
    EventKind::ThrustRampComplete,
    EventKind::PumpsOff,
    EventKind::ValvesOpen,
    EventKind::Separation,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetachmentConfig {
    pub perch: Vec2,
    pub open_valves: bool,
    /// Simulated time allowed for the whole sequence once started, s.
    pub horizon: f64,
    /// Time after separation over which the wall distance must grow, s.
    pub clearance_window: f64,
}

impl Default for DetachmentConfig {
    fn default() -> Self {
        Self {
            perch: Vec2::new(0.0, 1.5),
            open_valves: true,
            horizon: 60.0,
            clearance_window: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetachmentRun {
    pub events: Vec<EventRecord>,
    /// (time, distance from the wall) sampled at the telemetry rate from the
    /// start of the sequence.
    pub wall_distance: Vec<(f64, f64)>,
    pub separated_at: Option<f64>,
    pub mode_trace: Vec<OperationMode>,
}

impl DetachmentRun {
    pub fn first(&self, kind: EventKind) -> Option<f64> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.time)
    }

    /// Whether the release events occurred, each strictly after the previous.
    pub fn ordered(&self) -> bool {
        let times: Vec<Option<f64>> = RELEASE_ORDER.iter().map(|k| self.first(*k)).collect();
        times.iter().all(Option::is_some) && times.windows(2).all(|w| w[0] < w[1])
    }

    /// Whether the wall distance rose at every sample within `window` after
    /// separation.
    pub fn clears_wall(&self, window: f64) -> bool {
        let Some(t0) = self.separated_at else {
            return false;
        };
        let after: Vec<f64> = self
            .wall_distance
            .iter()
            .filter(|(t, _)| *t >= t0 && *t <= t0 + window + 1e-9)
            .map(|(_, d)| *d)
            .collect();
        after.len() as f64 >= window / TELEMETRY_PERIOD && after.windows(2).all(|w| w[1] > w[0])
    }
}

pub fn run_detachment(params: &ParamSet, cfg: &DetachmentConfig, seed: u64) -> Result<DetachmentRun, ExperimentError> {
    let mut config = SimConfig {
        seed,
        record_telemetry: false,
        ..SimConfig::default()
    };
    config.detach.open_valves = cfg.open_valves;
    let start = operator::approach_start(params, &cfg.perch, 0.5);
    let mut sim = Simulator::new(params, config, hover_state(&params.robot, &params.environment, start))?;
    operator::perch(&mut sim)?;
    operator::tilt_to_wall(&mut sim)?;

    let first_event = sim.events.len();
    sim.command(&OperatorCommand::SetMode {
        mode: OperationMode::Detachment,
    })?;
    let t_start = sim.time();
    let sample_every = (TELEMETRY_PERIOD / sim.config.dt).round().max(1.0) as u64;
    let mut wall_distance = Vec::new();
    let mut separated_at = None;
    let mut tick = 0u64;
    let mut flight_sent = false;
    while sim.time() < t_start + cfg.horizon {
        if tick.is_multiple_of(sample_every) {
            wall_distance.push((sim.time(), sim.env().wall.distance(&sim.state.body_pose.position)));
        }
        if separated_at.is_none() && sim.state.attached.iter().all(|a| !a) {
            separated_at = Some(sim.time());
        }
        if !flight_sent && sim.detachment_done() {
            sim.command(&OperatorCommand::SetMode { mode: OperationMode::Flight })?;
            flight_sent = true;
        }
        if let Some(t) = separated_at {
            if flight_sent && sim.time() > t + cfg.clearance_window + 2.0 * TELEMETRY_PERIOD {
                break;
            }
        }
        sim.step()?;
        tick += 1;
    }
    Ok(DetachmentRun {
        events: sim.events[first_event..].to_vec(),
        wall_distance,
        separated_at,
        mode_trace: sim.mode_trace.clone(),
    })
}

pub fn run_detachment_replay(params: &ParamSet, cfg: &DetachmentConfig, seed: u64) -> Result<ExperimentReport, ExperimentError> {
    let run = run_detachment(params, cfg, seed)?;
    let mut report = ExperimentReport::new("detachment", seed);
    let mut table = Table::new("detachment_events.csv", &["time", "kind", "detail"]);
    for e in &run.events {
        table.push([num(e.time), e.kind.to_string(), e.detail.clone()]);
    }
    report.tables.push(table);
    let mut dist = Table::new("wall_distance.csv", &["time", "wall_distance_m"]);
    for (t, d) in &run.wall_distance {
        dist.push([num(*t), num(*d)]);
    }
    report.tables.push(dist);

    for k in RELEASE_ORDER {
        if let Some(t) = run.first(k) {
            report.summary.insert(format!("{k}_time"), t);
        }
    }
    report.records.push(json!({ "mode_trace": run.mode_trace, "separated_at": run.separated_at }));
    if cfg.open_valves {
        report.checks.push(Check::flag("release_order", run.ordered()));
        report.checks.push(Check::flag("clears_wall", run.clears_wall(cfg.clearance_window)));
    } else {
        report.checks.push(Check::flag("stays_attached", run.separated_at.is_none()));
    }
    Ok(report)
}
