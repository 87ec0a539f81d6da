//! Feed force and electrical power against rotor speed.

use serde_json::json;

use super::{num, Check, ExperimentError, ExperimentReport, Table};
use crate::attachment::HingeLockState;
use crate::command::FeedDirection;
use crate::control::feed_control;
use crate::dynamics::{ConstraintRegime, Dynamics, DEFAULT_DT};
use crate::model::{ParamSet, Provenance, Vec3};
use crate::rotor::{power_draw, NOMINAL_HOVER_POWER};

/// Rotor speeds of the sweep, rpm. The rotor speed limit is appended.
pub const SWEEP_RPM: [f64; 7] = [0.0, 500.0, 1000.0, 1500.0, 2000.0, 2500.0, 3000.0];

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForcePowerRow {
    pub rpm: f64,
    pub feed_force: f64,
    pub power: f64,
}

/// Steady feed force with the tool resting on the wall, perched and
/// rotation-locked, all four rotors at `rpm`.
pub fn steady_feed_force(params: &ParamSet, rpm: f64) -> f64 {
    let d = Dynamics::new(params.robot.clone(), params.environment.clone());
    let regime = ConstraintRegime::perched(HingeLockState::RotationLocked);
    let mut s = d.perched_state(Vec3::new(0.0, 0.0, 1.5), std::f64::consts::FRAC_PI_2, 0.0);
    s.hinge_slide = d.slide_at_contact(&s);
    s.rotor_speeds = [rpm; 4];
    let limit = params.robot.rotor_speed_limit;
    let cmds = feed_control(rpm / limit, FeedDirection::Advance, &regime, limit).expect("perched and rotation-locked");
    let mut force = 0.0;
    for _ in 0..(2.0 / DEFAULT_DT) as usize {
        let (next, info) = d.step(&s, cmds, &regime, DEFAULT_DT).expect("valid perched state");
        s = next;
        force = info.tool_contact_force;
    }
    force
}

pub fn sweep(params: &ParamSet) -> Vec<ForcePowerRow> {
    let d = Dynamics::new(params.robot.clone(), params.environment.clone());
    SWEEP_RPM
        .iter()
        .copied()
        .chain(std::iter::once(params.robot.rotor_speed_limit))
        .map(|rpm| ForcePowerRow {
            rpm,
            feed_force: steady_feed_force(params, rpm),
            power: power_draw(&[rpm; 4], &d.rotors),
        })
        .collect()
}

/// Power drawn at hover speed in free flight.
pub fn hover_power(params: &ParamSet) -> f64 {
    let d = Dynamics::new(params.robot.clone(), params.environment.clone());
    let w = d.rotors.hover_rpm(d.mass(), params.environment.gravity);
    power_draw(&[w; 4], &d.rotors)
}

pub fn run_force_power_sweep(params: &ParamSet) -> Result<ExperimentReport, ExperimentError> {
    let rows = sweep(params);
    let mut report = ExperimentReport::new("force_power", 0);
    let mut table = Table::new("force_power.csv", &["rpm", "feed_force_n", "power_w"]);
    for r in &rows {
        table.push([num(r.rpm), num(r.feed_force), num(r.power)]);
        report.records.push(json!(r));
    }
    report.tables.push(table);

    let at = |rpm: f64| rows.iter().find(|r| r.rpm == rpm).copied().expect("row present");
    let max = at(params.robot.rotor_speed_limit);
    let r3000 = at(3000.0);
    let hover = hover_power(params);
    let rel = (hover - r3000.power).abs() / hover.max(r3000.power);
    report.summary.insert("feed_force_max_rpm".into(), max.feed_force);
    report.summary.insert("feed_force_3000".into(), r3000.feed_force);
    report.summary.insert("hover_power".into(), hover);
    report.summary.insert("manipulation_power_3000".into(), r3000.power);
    report.summary.insert("power_relative_difference".into(), rel);

    report.checks.push(Check::around("feed_force_max_rpm", max.feed_force, 150.0, 5.0, "N", Provenance::Measured));
    report.checks.push(Check::around("feed_force_3000", r3000.feed_force, 110.0, 4.0, "N", Provenance::Measured));
    let p_tol = 0.1 * NOMINAL_HOVER_POWER;
    report.checks.push(Check::around("hover_power", hover, NOMINAL_HOVER_POWER, p_tol, "W", Provenance::Measured));
    report.checks.push(Check::around("manipulation_power_3000", r3000.power, NOMINAL_HOVER_POWER, p_tol, "W", Provenance::Measured));
    report.checks.push(Check::within("power_relative_difference", rel, 0.0, 0.1, "", Provenance::Measured));
    report.checks.push(Check::around("feed_force_0", at(0.0).feed_force, 0.0, 1e-9, "N", Provenance::Derived));
    Ok(report)
}
