//! Seeded, scripted experiments. Each produces an [`ExperimentReport`]
//! holding per-trial records, summary statistics and tolerance checks, and
//! can be written to disk as `report.json` plus CSV tables.

pub mod detachment;
pub mod drilling;
pub mod endurance;
pub mod force_power;
pub mod perching;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::command::{FeedDirection, OperationMode, OperatorCommand};
use crate::mission::Rejection;
use crate::model::{ParamSet, Provenance, Vec2, Vec3};
use crate::sim::{SimError, Simulator};

pub const EXPERIMENTS: [&str; 5] = ["force_power", "perching", "drilling", "detachment", "endurance"];

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("command rejected: {0}")]
    Rejected(#[from] Rejection),
    #[error("{stage} did not finish within {timeout} s")]
    Stalled { stage: &'static str, timeout: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown experiment `{0}`; available: {list}", list = EXPERIMENTS.join(", "))]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A value compared against a tolerance band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub unit: String,
    /// Origin of the band's reference value.
    pub reference: Provenance,
    pub pass: bool,
}

impl Check {
    pub fn within(name: &str, value: f64, lo: f64, hi: f64, unit: &str, reference: Provenance) -> Self {
        Self {
            name: name.into(),
            value,
            lo,
            hi,
            unit: unit.into(),
            reference,
            pass: value >= lo && value <= hi,
        }
    }

    pub fn around(name: &str, value: f64, nominal: f64, tol: f64, unit: &str, reference: Provenance) -> Self {
        Self::within(name, value, nominal - tol, nominal + tol, unit, reference)
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: f64::from(u8::from(ok)),
            lo: 1.0,
            hi: 1.0,
            unit: String::new(),
            reference: Provenance::Derived,
            pass: ok,
        }
    }
}

/// A CSV table carried by a report.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn to_csv_string(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub records: Vec<serde_json::Value>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    pub fn new(name: &str, seed: u64) -> Self {
        Self {
            name: name.into(),
            seed,
            ..Default::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String, ExperimentError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write `report.json` and every table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;
        for t in &self.tables {
            fs::write(dir.join(&t.file), t.to_csv_string()?)?;
        }
        Ok(())
    }
}

/// Mean and largest absolute deviation from the mean.
pub fn mean_max_dev(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let dev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    (mean, dev)
}

pub fn run_experiment(name: &str, params: &ParamSet, seed: u64) -> Result<ExperimentReport, ExperimentError> {
    match name {
        "force_power" => force_power::run_force_power_sweep(params),
        "perching" => perching::run_perching_mc(params, &perching::PerchingConfig::default(), seed),
        "drilling" => drilling::run_drilling_study(params, &drilling::DrillingConfig::default(), seed),
        "detachment" => detachment::run_detachment_replay(params, &detachment::DetachmentConfig::default(), seed),
        "endurance" => endurance::endurance_report(&endurance::EnduranceConfig::default()),
        other => Err(ExperimentError::Unknown(other.into())),
    }
}

/// Scripted operator actions shared by the experiments. Each step sends the
/// commands a pilot would and waits for the robot to respond.
pub mod operator {
    use nalgebra::UnitQuaternion;

    use super::*;

    pub const APPROACH_SPEED: f64 = 0.2;
    pub const PUSH_SPEED: f64 = 0.05;
    pub const ROTATE_THROTTLE: f64 = 0.5;
    /// Interval between pilot stick corrections, s.
    pub const PILOT_PERIOD: f64 = 0.1;
    /// Lateral correction per metre of drift, 1/s.
    pub const DRIFT_GAIN: f64 = 2.0;
    pub const MAX_CORRECTION: f64 = 0.1;

    fn wait(sim: &mut Simulator, stage: &'static str, timeout: f64, until: impl FnMut(&Simulator) -> bool) -> Result<(), ExperimentError> {
        if sim.run_while(timeout, until)? {
            Ok(())
        } else {
            Err(ExperimentError::Stalled { stage, timeout })
        }
    }

    fn send(sim: &mut Simulator, cmd: OperatorCommand) -> Result<(), ExperimentError> {
        Ok(sim.command(&cmd)?)
    }

    /// Fly at the wall with the pumps on, holding the starting point's
    /// wall coordinates, until both cups hold; then switch to Perching.
    pub fn perch(sim: &mut Simulator) -> Result<(), ExperimentError> {
        send(sim, OperatorCommand::Pumps { on: true })?;
        let aim = sim.env().wall.wall_coords(&sim.state.body_pose.position);
        fly_at_wall(sim, aim, APPROACH_SPEED, "approach", 30.0, |s| s.cups.iter().all(|c| c.contact))?;
        send(sim, OperatorCommand::SetMode { mode: OperationMode::Perching })?;
        fly_at_wall(sim, aim, PUSH_SPEED, "attach", 10.0, |s| s.perched())?;
        let heading = sim.env().wall_heading();
        send(
            sim,
            OperatorCommand::SetFlightRef {
                velocity: [0.0; 3],
                heading,
            },
        )?;
        Ok(())
    }

    /// Velocity command towards the wall at `speed` plus a proportional
    /// correction of drift away from `aim`, refreshed at the pilot's
    /// reaction period until `until` holds.
    fn fly_at_wall(
        sim: &mut Simulator,
        aim: Vec2,
        speed: f64,
        stage: &'static str,
        timeout: f64,
        mut until: impl FnMut(&Simulator) -> bool,
    ) -> Result<(), ExperimentError> {
        let heading = sim.env().wall_heading();
        let t_end = sim.time() + timeout;
        while !until(sim) {
            if sim.time() >= t_end {
                return Err(ExperimentError::Stalled { stage, timeout });
            }
            let wall = sim.env().wall.clone();
            let e = aim - wall.wall_coords(&sim.state.body_pose.position);
            let lateral = (e * DRIFT_GAIN).map(|v| v.clamp(-MAX_CORRECTION, MAX_CORRECTION));
            let v_w = wall.right() * lateral.x + wall.up() * lateral.y - wall.normal * speed;
            let v_h = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), -heading) * v_w;
            send(
                sim,
                OperatorCommand::SetFlightRef {
                    velocity: [v_h.x, v_h.y, v_h.z],
                    heading,
                },
            )?;
            let t_next = sim.time() + PILOT_PERIOD;
            sim.run_while(PILOT_PERIOD, |s| s.time() >= t_next - 1e-9 || until(s))?;
        }
        Ok(())
    }

    /// Ramp the rotors down, enter Rotation and tilt the tool table against
    /// its stop, ending in Manipulation.
    pub fn tilt_to_wall(sim: &mut Simulator) -> Result<(), ExperimentError> {
        sim.run_until(sim.time() + 0.5)?;
        send(sim, OperatorCommand::RampDownRotors)?;
        wait(sim, "ramp down", 10.0, |s| s.rotors_idle())?;
        send(sim, OperatorCommand::SetMode { mode: OperationMode::Rotation })?;
        wait(sim, "centre gantry", 20.0, |s| s.gantry.arrived())?;
        send(sim, OperatorCommand::RotationThrottle { value: ROTATE_THROTTLE })?;
        wait(sim, "rotation", 20.0, |s| s.tilted())?;
        send(
            sim,
            OperatorCommand::SetMode {
                mode: OperationMode::Manipulation,
            },
        )?;
        Ok(())
    }

    /// Camera-guided alignment: average a few frames, move the gantry to
    /// cancel the observed cross offset, repeat until the cross sits on the
    /// image centre.
    pub fn align(sim: &mut Simulator, frames: usize, max_iterations: usize) -> Result<usize, ExperimentError> {
        let pitch = sim.config.sensing.pixel_pitch;
        let frame_dt = sim.config.telemetry_period;
        for iteration in 0..max_iterations {
            wait(sim, "gantry move", 20.0, |s| s.gantry.arrived())?;
            let mut sum = Vec2::zeros();
            let mut seen = 0usize;
            for _ in 0..frames.max(1) {
                sim.run_until(sim.time() + frame_dt)?;
                if let Some(px) = sim.observe_laser() {
                    sum += px;
                    seen += 1;
                }
            }
            if seen == 0 {
                return Err(ExperimentError::Stalled {
                    stage: "laser cross out of view",
                    timeout: 0.0,
                });
            }
            let px = sum / seen as f64;
            let tolerance = if sim.config.sensing.quantize { 0.5 } else { 0.0 };
            if px.x.abs() <= tolerance && px.y.abs() <= tolerance {
                return Ok(iteration);
            }
            let delta = sim.wall_to_gantry(&(-px * pitch));
            let h = sim.gantry.workspace * 0.5;
            let t = sim.gantry.target + delta;
            let t = Vec2::new(t.x.clamp(-h.x, h.x), t.y.clamp(-h.y, h.y));
            send(sim, OperatorCommand::GantryTarget { x: t.x, y: t.y })?;
        }
        wait(sim, "gantry move", 20.0, |s| s.gantry.arrived())?;
        Ok(max_iterations)
    }

    /// Feed the tool onto the wall, drill to `depth`, stop and retract.
    pub fn drill(sim: &mut Simulator, throttle: f64, depth: f64) -> Result<(), ExperimentError> {
        send(
            sim,
            OperatorCommand::FeedThrottle {
                value: throttle,
                direction: FeedDirection::Advance,
            },
        )?;
        wait(sim, "tool contact", 10.0, |s| s.last_info.tool_contact_force > 0.0)?;
        send(sim, OperatorCommand::ToolPower { on: true })?;
        wait(sim, "drilling", 600.0, |s| s.state.drill_depth >= depth - 1e-9)?;
        send(sim, OperatorCommand::ToolPower { on: false })?;
        send(
            sim,
            OperatorCommand::FeedThrottle {
                value: 0.0,
                direction: FeedDirection::Advance,
            },
        )?;
        Ok(())
    }

    /// Run the detachment sequence and return to Flight, backing away.
    pub fn detach(sim: &mut Simulator) -> Result<(), ExperimentError> {
        send(sim, OperatorCommand::SetMode { mode: OperationMode::Detachment })?;
        wait(sim, "detachment", 120.0, |s| s.detachment_done() || s.detach.is_none())?;
        send(sim, OperatorCommand::SetMode { mode: OperationMode::Flight })?;
        Ok(())
    }

    /// Start position for an approach that perches with its cup centre at
    /// `perch` (wall coordinates) after flying `distance` towards the wall.
    pub fn approach_start(params: &ParamSet, perch: &Vec2, distance: f64) -> Vec3 {
        let wall = &params.environment.wall;
        let standoff = params.robot.attachment_offset[0] + distance;
        wall.from_wall_coords(perch) + wall.normal * standoff
    }
}
