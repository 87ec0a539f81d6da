//! A 3x3 pattern of holes, one full mission per hole.
//!
//! Every run perches near the pattern (with aiming scatter), tilts the tool
//! onto the wall, aligns the laser cross with the hole target through the
//! camera, drills, and detaches. Holes where the cups slid more than the
//! exclusion limit while cutting are reported but left out of the
//! statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::perching::truncated_normal;
use super::{num, operator, Check, ExperimentError, ExperimentReport, Table};
use crate::dynamics::Dynamics;
use crate::model::{frame_pose, Frame, ParamSet, Provenance, Vec2, Vec3};
use crate::sim::{hover_state, SimConfig, Simulator};
use crate::tool::{hole_csv_row, hole_stats, HoleRecord, SensingModel, HOLE_CSV_HEADER};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrillingConfig {
    /// Perch point aimed at, wall coordinates (right, up), m.
    pub perch: Vec2,
    pub perch_scatter_sigma: f64,
    pub perch_truncation: f64,
    /// Distance between neighbouring holes, m.
    pub grid_spacing: f64,
    pub depth: f64,
    pub feed_throttle: f64,
    /// Camera frames averaged per alignment step.
    pub frames: usize,
    pub max_align_iterations: usize,
    pub sensing: SensingModel,
    pub thrust_scale_sigma: f64,
    pub slide_jitter_sigma: f64,
    pub table_deflection: bool,
    /// Run drilled on a cold wall, where the cups creep under the robot's
    /// weight.
    pub cold_run: Option<usize>,
    pub cold_temperature: f64,
    /// Cup slip while cutting above which a hole is excluded, m.
    pub slip_exclusion: f64,
    pub detach: bool,
}

impl Default for DrillingConfig {
    fn default() -> Self {
        Self {
            perch: Vec2::new(0.0, 1.5),
            perch_scatter_sigma: 0.015,
            perch_truncation: 0.03,
            grid_spacing: 0.04,
            depth: 0.02,
            feed_throttle: 3000.0 / 3500.0,
            frames: 5,
            max_align_iterations: 8,
            sensing: SensingModel::default(),
            thrust_scale_sigma: 0.03,
            slide_jitter_sigma: 0.0005,
            table_deflection: true,
            cold_run: Some(6),
            cold_temperature: 0.0,
            slip_exclusion: 0.002,
            detach: true,
        }
    }
}

impl DrillingConfig {
    /// Every random and systematic error source off except the laser offset.
    pub fn noiseless() -> Self {
        Self {
            perch_scatter_sigma: 0.0,
            sensing: SensingModel::default().noiseless(),
            thrust_scale_sigma: 0.0,
            slide_jitter_sigma: 0.0,
            table_deflection: false,
            cold_run: None,
            ..Self::default()
        }
    }

    /// Hole targets, row-major from the top left, wall coordinates.
    pub fn targets(&self, params: &ParamSet) -> Vec<Vec2> {
        let centre = tool_centre_on_wall(params, &self.perch);
        let s = self.grid_spacing;
        let mut out = Vec::with_capacity(9);
        for row in 0..3 {
            for col in 0..3 {
                out.push(centre + Vec2::new((col as f64 - 1.0) * s, (1.0 - row as f64) * s));
            }
        }
        out
    }
}

/// Where the tooltip meets the wall with the gantry centred, for a perch at
/// `perch`.
pub fn tool_centre_on_wall(params: &ParamSet, perch: &Vec2) -> Vec2 {
    let d = Dynamics::new(params.robot.clone(), params.environment.clone());
    let wall = &params.environment.wall;
    let s = d.perched_state(wall.from_wall_coords(perch), std::f64::consts::FRAC_PI_2, 0.0);
    let tip: Vec3 = frame_pose(&s, &params.robot, Frame::Tool).translation.vector;
    wall.wall_coords(&tip)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrillRun {
    pub record: HoleRecord,
    pub align_iterations: usize,
    pub cold: bool,
    pub mode_trace: Vec<crate::command::OperationMode>,
}

pub fn drill_one(params: &ParamSet, cfg: &DrillingConfig, run_id: usize, target: Vec2, seed: u64) -> Result<DrillRun, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scatter = Vec2::new(
        truncated_normal(cfg.perch_scatter_sigma, cfg.perch_truncation, &mut rng),
        truncated_normal(cfg.perch_scatter_sigma, cfg.perch_truncation, &mut rng),
    );
    let cold = cfg.cold_run == Some(run_id);
    let mut params = params.clone();
    if cold {
        params.environment.ambient_temperature = cfg.cold_temperature;
    }
    let start = operator::approach_start(&params, &(cfg.perch + scatter), 0.5);
    let config = SimConfig {
        seed,
        sensing: cfg.sensing,
        thrust_scale_sigma: cfg.thrust_scale_sigma,
        slide_jitter_sigma: cfg.slide_jitter_sigma,
        table_deflection: cfg.table_deflection,
        record_telemetry: false,
        ..SimConfig::default()
    };
    let mut sim = Simulator::new(&params, config, hover_state(&params.robot, &params.environment, start))?;
    sim.camera_target = Some(target);
    operator::perch(&mut sim)?;
    operator::tilt_to_wall(&mut sim)?;
    let align_iterations = operator::align(&mut sim, cfg.frames, cfg.max_align_iterations)?;
    operator::drill(&mut sim, cfg.feed_throttle, cfg.depth)?;
    if cfg.detach {
        operator::detach(&mut sim)?;
    }
    let hole = *sim.holes.last().ok_or(ExperimentError::Stalled {
        stage: "hole",
        timeout: 0.0,
    })?;
    Ok(DrillRun {
        record: HoleRecord {
            run_id,
            target,
            hole: hole.centre,
            excluded: hole.slip > cfg.slip_exclusion,
            slip: hole.slip,
        },
        align_iterations,
        cold,
        mode_trace: sim.mode_trace.clone(),
    })
}

pub fn run_drilling_study(params: &ParamSet, cfg: &DrillingConfig, seed: u64) -> Result<ExperimentReport, ExperimentError> {
    let mut report = ExperimentReport::new("drilling", seed);
    let mut table = Table::new("holes.csv", &HOLE_CSV_HEADER);
    let mut runs = Vec::new();
    for (i, target) in cfg.targets(params).into_iter().enumerate() {
        let run = drill_one(params, cfg, i, target, seed.wrapping_mul(1000).wrapping_add(i as u64))?;
        table.push(hole_csv_row(&run.record));
        report.records.push(json!(run));
        runs.push(run);
    }
    report.tables.push(table);

    let kept: Vec<Vec2> = runs.iter().filter(|r| !r.record.excluded).map(|r| r.record.offset()).collect();
    let all: Vec<Vec2> = runs.iter().map(|r| r.record.offset()).collect();
    let excluded = runs.len() - kept.len();
    report.summary.insert("excluded".into(), excluded as f64);
    if let Some(st) = hole_stats(&all) {
        report.summary.insert("accuracy_all_mm".into(), st.accuracy * 1e3);
        report.summary.insert("precision_all_mm".into(), st.precision * 1e3);
    }
    let stats = hole_stats(&kept);
    let (acc, prec) = stats.map(|s| (s.accuracy * 1e3, s.precision * 1e3)).unwrap_or((f64::NAN, f64::NAN));
    if let Some(s) = stats {
        report.summary.insert("mean_offset_right_mm".into(), s.mean_offset.x * 1e3);
        report.summary.insert("mean_offset_up_mm".into(), s.mean_offset.y * 1e3);
    }
    report.summary.insert("accuracy_mm".into(), acc);
    report.summary.insert("precision_mm".into(), prec);
    report.summary.insert("laser_offset_mm".into(), cfg.sensing.laser_offset.norm() * 1e3);
    report.checks.push(Check::within("accuracy_mm", acc, 7.0, 13.0, "mm", Provenance::Measured));
    report.checks.push(Check::within("precision_mm", prec, 0.0, 8.0, "mm", Provenance::Measured));

    let mut offsets = Table::new("hole_offsets_long.csv", &["run_id", "axis", "offset_mm", "excluded"]);
    for r in &runs {
        let o = r.record.offset();
        for (axis, v) in [("right", o.x), ("up", o.y)] {
            offsets.push([r.record.run_id.to_string(), axis.to_string(), num(v * 1e3), r.record.excluded.to_string()]);
        }
    }
    report.tables.push(offsets);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_form_a_grid() {
        let p = ParamSet::default();
        let cfg = DrillingConfig::default();
        let t = cfg.targets(&p);
        assert_eq!(t.len(), 9);
        assert!(((t[0] - t[8]).norm() - 2.0 * 2f64.sqrt() * cfg.grid_spacing).abs() < 1e-12);
        assert!((t[4] - tool_centre_on_wall(&p, &cfg.perch)).norm() < 1e-12);
    }
}
