//! Repeated perching attempts with pilot aiming scatter.
//!
//! The pilot lines the robot up with an intended perch point, but misses by a
//! truncated-normal offset in each wall axis. Each attempt flies the full
//! approach and records where the cups actually landed, and whether the
//! point the tool should reach still lies inside the gantry workspace seen
//! from the actual perch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{num, operator, Check, ExperimentError, ExperimentReport, Table};
use crate::model::{ParamSet, Provenance, Vec2};
use crate::sim::{hover_state, SimConfig, Simulator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerchingConfig {
    pub trials: usize,
    /// Aiming scatter per wall axis, m.
    pub scatter_sigma: f64,
    /// Samples beyond this distance per axis are redrawn, m.
    pub truncation: f64,
    /// Intended perch point, wall coordinates (right, up), m.
    pub intended: Vec2,
    pub approach_distance: f64,
}

impl Default for PerchingConfig {
    fn default() -> Self {
        Self {
            trials: 30,
            scatter_sigma: 0.05,
            truncation: 0.1,
            intended: Vec2::new(0.0, 1.5),
            approach_distance: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerchTrial {
    pub trial: usize,
    pub aim_offset: Vec2,
    /// Actual minus intended perch point, wall coordinates, m.
    pub offset: Vec2,
    pub reachable: bool,
}

/// Draw from a zero-mean normal, redrawing anything beyond `bound`.
pub fn truncated_normal<R: Rng + ?Sized>(sigma: f64, bound: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let x = n.sample(rng);
        if x.abs() <= bound {
            return x;
        }
    }
}

/// Gantry half-extents expressed along the wall (right, up) once the tool
/// faces the wall: body `y` spans the horizontal, body `x` the vertical.
pub fn workspace_half_extent_on_wall(params: &ParamSet) -> Vec2 {
    let w = params.robot.gantry_workspace;
    Vec2::new(0.5 * w[1], 0.5 * w[0])
}

/// Whether a tool point that sits at the workspace centre for a perfect perch
/// is still reachable when the perch is off by `offset`.
pub fn reachable(params: &ParamSet, offset: &Vec2) -> bool {
    let h = workspace_half_extent_on_wall(params);
    offset.x.abs() <= h.x && offset.y.abs() <= h.y
}

pub fn run_trials(params: &ParamSet, cfg: &PerchingConfig, seed: u64) -> Result<Vec<PerchTrial>, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let aim = Vec2::new(
            truncated_normal(cfg.scatter_sigma, cfg.truncation, &mut rng),
            truncated_normal(cfg.scatter_sigma, cfg.truncation, &mut rng),
        );
        let start = operator::approach_start(params, &(cfg.intended + aim), cfg.approach_distance);
        let config = SimConfig {
            seed: seed.wrapping_add(trial as u64),
            record_telemetry: false,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(params, config, hover_state(&params.robot, &params.environment, start))?;
        operator::perch(&mut sim)?;
        let anchor = sim.state.anchor.expect("perched").position;
        let offset = params.environment.wall.wall_coords(&anchor) - cfg.intended;
        out.push(PerchTrial {
            trial,
            aim_offset: aim,
            offset,
            reachable: reachable(params, &offset),
        });
    }
    Ok(out)
}

pub fn run_perching_mc(params: &ParamSet, cfg: &PerchingConfig, seed: u64) -> Result<ExperimentReport, ExperimentError> {
    let trials = run_trials(params, cfg, seed)?;
    let mut report = ExperimentReport::new("perching", seed);
    let mut table = Table::new(
        "perching_trials.csv",
        &["trial", "offset_right_mm", "offset_up_mm", "offset_norm_mm", "reachable"],
    );
    for t in &trials {
        table.push([
            t.trial.to_string(),
            num(t.offset.x * 1e3),
            num(t.offset.y * 1e3),
            num(t.offset.norm() * 1e3),
            t.reachable.to_string(),
        ]);
        report.records.push(json!(t));
    }
    report.tables.push(table);

    let n = trials.len().max(1) as f64;
    let max_axis = trials.iter().map(|t| t.offset.x.abs().max(t.offset.y.abs())).fold(0.0, f64::max);
    let fraction = trials.iter().filter(|t| t.reachable).count() as f64 / n;
    let mean = trials.iter().fold(Vec2::zeros(), |a, t| a + t.offset) / n;
    report.summary.insert("max_axis_offset_mm".into(), max_axis * 1e3);
    report.summary.insert("reachable_fraction".into(), fraction);
    report.summary.insert("mean_offset_right_mm".into(), mean.x * 1e3);
    report.summary.insert("mean_offset_up_mm".into(), mean.y * 1e3);
    report.checks.push(Check::within("max_axis_offset_mm", max_axis * 1e3, 0.0, 100.0, "mm", Provenance::Measured));
    report.checks.push(Check::within("reachable_fraction", fraction, 0.9, 1.0, "", Provenance::Derived));
    Ok(report)
}
