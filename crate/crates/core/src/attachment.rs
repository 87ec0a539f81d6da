//! Suction cups and the three-state hinge lock.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{RobotParams, Vec3};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AttachmentError {
    #[error("holding wrench requested while cups are not attached")]
    NotAttached,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuctionCupState {
    pub pressure_deficit: f64,
    pub pump_on: bool,
    pub valve_open: bool,
    pub contact: bool,
    pub attached: bool,
    /// Distance the cup has slid along the wall, m.
    pub slip_accum: f64,
}

/// Pump, valve and contact constants for one cup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CupModel {
    pub vacuum_max: f64,
    pub pump_time_constant: f64,
    pub valve_time_constant: f64,
    pub attach_fraction: f64,
    pub contact_gap: f64,
    pub contact_speed: f64,
    pub area: f64,
}

impl CupModel {
    pub fn from_params(p: &RobotParams) -> Self {
        Self {
            vacuum_max: p.vacuum_max,
            pump_time_constant: p.pump_time_constant,
            valve_time_constant: p.valve_release_time_constant,
            attach_fraction: p.attach_fraction,
            contact_gap: p.contact_gap,
            contact_speed: p.contact_speed,
            area: p.cup_area(),
        }
    }

    pub fn attach_threshold(&self) -> f64 {
        self.attach_fraction * self.vacuum_max
    }
}

/// Advance both cups by `dt`.
///
/// `gaps` are the distances from each cup lip to the wall; `approach_speed` is
/// positive when moving towards the wall. A cup comes into contact when its gap
/// is within the contact distance and the approach is slow enough; it stays in
/// contact while the gap remains small. Pressure follows first-order dynamics:
/// rise with the pump, decay through an open valve, hold otherwise.
pub fn update_suction(
    cups: [SuctionCupState; 2],
    gaps: [f64; 2],
    approach_speed: f64,
    dt: f64,
    model: &CupModel,
) -> [SuctionCupState; 2] {
    let mut out = cups;
    for (cup, gap) in out.iter_mut().zip(gaps) {
        let near = gap <= model.contact_gap;
        cup.contact = near && (cup.contact || approach_speed <= model.contact_speed);
        if !cup.contact {
            cup.pressure_deficit = 0.0;
        } else if cup.valve_open {
            cup.pressure_deficit *= (-dt / model.valve_time_constant).exp();
        } else if cup.pump_on {
            let a = 1.0 - (-dt / model.pump_time_constant).exp();
            cup.pressure_deficit += (model.vacuum_max - cup.pressure_deficit) * a;
        }
        cup.pressure_deficit = cup.pressure_deficit.clamp(0.0, model.vacuum_max);
        cup.attached = cup.contact && cup.pressure_deficit >= model.attach_threshold();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldingResult {
    /// Normal force pressing the cups onto the wall, N.
    pub normal: f64,
    /// Magnitude of the in-plane load, N.
    pub shear: f64,
    pub slips: bool,
    pub pull_off: bool,
    /// Friction capacity over shear; infinite for zero shear.
    pub margin: f64,
}

/// Friction-cone check for the cup pair.
///
/// `load` is the force the robot applies to the attachment, in `A`:
/// `x` positive presses into the wall, `y`/`z` are shear. The two cups are
/// treated as one contact patch whose suction preload is the sum of
/// `pressure_deficit * area` over both cups.
pub fn holding_wrench(
    cups: &[SuctionCupState; 2],
    mu: f64,
    load: &Vec3,
    model: &CupModel,
) -> Result<HoldingResult, AttachmentError> {
    if !cups.iter().all(|c| c.attached) {
        return Err(AttachmentError::NotAttached);
    }
    let capacity: f64 = cups.iter().map(|c| c.pressure_deficit * model.area).sum();
    let pull_off = -load.x > capacity;
    let normal = (capacity + load.x).max(0.0);
    let shear = load.y.hypot(load.z);
    let slips = pull_off || shear > mu * normal;
    let margin = if shear > 0.0 { mu * normal / shear } else { f64::INFINITY };
    Ok(HoldingResult {
        normal,
        shear,
        slips,
        pull_off,
        margin,
    })
}

/// Sliding speed of a slipping cup pair under viscous creep.
pub fn slip_speed(result: &HoldingResult, mu: f64, damping: f64) -> f64 {
    if !result.slips || result.pull_off {
        return 0.0;
    }
    (result.shear - mu * result.normal).max(0.0) / damping
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeLockState {
    /// Pins fully extended: rotation and slide blocked.
    #[default]
    Locked,
    /// Pins retracted: rotation and slide free.
    Released,
    /// Pins partially extended: rotation blocked, slide free.
    RotationLocked,
}

impl HingeLockState {
    pub fn theta_free(self) -> bool {
        self == HingeLockState::Released
    }

    pub fn slide_free(self) -> bool {
        self != HingeLockState::Locked
    }
}

impl fmt::Display for HingeLockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HingeLockState::Locked => "locked",
            HingeLockState::Released => "released",
            HingeLockState::RotationLocked => "rotation_locked",
        })
    }
}

impl FromStr for HingeLockState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "locked" => Ok(Self::Locked),
            "released" => Ok(Self::Released),
            "rotation_locked" => Ok(Self::RotationLocked),
            other => Err(format!("unknown hinge state `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("hinge {from} -> {to} rejected: {reason}")]
pub struct LockRejection {
    pub from: HingeLockState,
    pub to: HingeLockState,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LockTolerance {
    pub angle: f64,
    pub slide: f64,
}

impl LockTolerance {
    pub fn from_params(p: &RobotParams) -> Self {
        Self {
            angle: p.hinge_angle_tolerance,
            slide: p.hinge_slide_tolerance,
        }
    }
}

/// Request a pin position. The pins travel continuously, so the lock can only
/// move one step along Locked - Released - RotationLocked at a time, and
/// engaging requires the hinge to be at the matching stop.
pub fn set_hinge_lock(
    state: HingeLockState,
    request: HingeLockState,
    theta: f64,
    slide: f64,
    tol: &LockTolerance,
) -> Result<HingeLockState, LockRejection> {
    use HingeLockState::*;
    let reject = |reason: String| LockRejection {
        from: state,
        to: request,
        reason,
    };
    match (state, request) {
        (a, b) if a == b => Ok(a),
        (Locked, Released) | (RotationLocked, Released) => Ok(Released),
        (Released, RotationLocked) => {
            let err = (theta - std::f64::consts::FRAC_PI_2).abs();
            if err <= tol.angle {
                Ok(RotationLocked)
            } else {
                Err(reject(format!(
                    "hinge at {:.1} deg, must be within {:.1} deg of 90",
                    theta.to_degrees(),
                    tol.angle.to_degrees()
                )))
            }
        }
        (Released, Locked) => {
            if theta.abs() > tol.angle {
                Err(reject(format!(
                    "hinge at {:.1} deg, must be within {:.1} deg of 0",
                    theta.to_degrees(),
                    tol.angle.to_degrees()
                )))
            } else if slide.abs() > tol.slide {
                Err(reject(format!(
                    "slide at {:.1} mm, must be within {:.1} mm of 0",
                    slide * 1e3,
                    tol.slide * 1e3
                )))
            } else {
                Ok(Locked)
            }
        }
        _ => Err(reject("pins must pass through the released position".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn model() -> CupModel {
        CupModel::from_params(&RobotParams::default())
    }

    fn held(deficit: f64) -> [SuctionCupState; 2] {
        let c = SuctionCupState {
            pressure_deficit: deficit,
            contact: true,
            attached: true,
            ..Default::default()
        };
        [c, c]
    }

    #[test]
    fn pump_converges_to_vacuum_max() {
        let m = model();
        let mut cups = [SuctionCupState { pump_on: true, ..Default::default() }; 2];
        for _ in 0..20_000 {
            cups = update_suction(cups, [0.0, 0.0], 0.1, 1e-3, &m);
        }
        for c in cups {
            assert_relative_eq!(c.pressure_deficit, m.vacuum_max, max_relative = 1e-4);
            assert!(c.attached);
        }
    }

    #[test]
    fn valve_release_decays_within_three_time_constants() {
        let m = model();
        let mut cups = held(m.vacuum_max);
        for c in cups.iter_mut() {
            c.valve_open = true;
        }
        let dt = 1e-3;
        let steps = (3.0 * m.valve_time_constant / dt).round() as usize;
        for _ in 0..steps {
            cups = update_suction(cups, [0.0, 0.0], 0.0, dt, &m);
        }
        assert!(cups[0].pressure_deficit < 0.05 * m.vacuum_max);
        assert!(!cups[0].attached);
    }

    #[test]
    fn release_timeline_detaches_only_after_valves_open() {
        // pumps off at 49 s, valves open at 54 s
        let m = model();
        let dt = 1e-3;
        let mut cups = [SuctionCupState { pump_on: true, ..Default::default() }; 2];
        let mut detach_time = None;
        for k in 0..60_000 {
            let t = k as f64 * dt;
            if t >= 49.0 {
                cups.iter_mut().for_each(|c| c.pump_on = false);
            }
            if t >= 54.0 {
                cups.iter_mut().for_each(|c| c.valve_open = true);
            }
            let was = cups[0].attached;
            cups = update_suction(cups, [0.0, 0.0], 0.0, dt, &m);
            if was && !cups[0].attached && detach_time.is_none() {
                detach_time = Some(t);
            }
        }
        let t = detach_time.expect("cups released");
        assert!(t > 54.0, "detached at {t}");
    }

    #[test]
    fn fast_approach_does_not_make_contact() {
        let m = model();
        let cups = update_suction([SuctionCupState::default(); 2], [0.0, 0.0], 0.8, 1e-3, &m);
        assert!(!cups[0].contact);
        let cups = update_suction([SuctionCupState::default(); 2], [0.001, 0.01], 0.2, 1e-3, &m);
        assert!(cups[0].contact && !cups[1].contact);
    }

    #[test]
    fn no_force_without_contact() {
        let m = model();
        let mut cups = [SuctionCupState { pump_on: true, pressure_deficit: 50_000.0, ..Default::default() }; 2];
        cups = update_suction(cups, [0.05, 0.05], 0.0, 1e-3, &m);
        assert!(cups.iter().all(|c| c.pressure_deficit == 0.0 && !c.attached));
        assert_eq!(holding_wrench(&cups, 0.5, &Vec3::zeros(), &m), Err(AttachmentError::NotAttached));
    }

    #[test]
    fn weight_only_shear_holds_with_margin() {
        let m = model();
        // 80 kPa on a 75 mm cup: 353 N each
        assert_relative_eq!(m.area, 4.418e-3, max_relative = 1e-3);
        let load = Vec3::new(0.0, 0.0, -108.9);
        let r = holding_wrench(&held(80_000.0), 0.5, &load, &m).unwrap();
        assert_relative_eq!(r.normal, 2.0 * 80_000.0 * m.area, epsilon = 1e-9);
        assert!(!r.slips);
        assert!((r.margin - 3.2).abs() < 0.1, "margin {}", r.margin);
    }

    #[test]
    fn cold_lips_slip_under_weight() {
        let m = model();
        let load = Vec3::new(0.0, 0.0, -108.9);
        let r = holding_wrench(&held(80_000.0), 0.14, &load, &m).unwrap();
        assert!(r.slips);
        let mu_crit = 108.9 / (2.0 * 80_000.0 * m.area);
        assert!((mu_crit - 0.154).abs() < 1e-3);
        assert!(slip_speed(&r, 0.14, 1e5) > 0.0);
    }

    #[test]
    fn zero_load_never_slips() {
        let r = holding_wrench(&held(30_000.0), 0.0, &Vec3::zeros(), &model()).unwrap();
        assert!(!r.slips && !r.pull_off);
    }

    #[test]
    fn tension_beyond_capacity_pulls_off() {
        let m = model();
        let cap = 2.0 * 80_000.0 * m.area;
        let r = holding_wrench(&held(80_000.0), 0.5, &Vec3::new(-(cap + 1.0), 0.0, 0.0), &m).unwrap();
        assert!(r.pull_off);
    }

    #[test]
    fn hinge_transitions() {
        use HingeLockState::*;
        let tol = LockTolerance::from_params(&RobotParams::default());
        assert_eq!(set_hinge_lock(Released, RotationLocked, FRAC_PI_2, 0.0, &tol), Ok(RotationLocked));
        assert!(set_hinge_lock(Released, RotationLocked, FRAC_PI_2 / 2.0, 0.0, &tol).is_err());
        assert_eq!(set_hinge_lock(Locked, Locked, 1.0, 0.1, &tol), Ok(Locked));
        assert!(set_hinge_lock(Locked, RotationLocked, FRAC_PI_2, 0.0, &tol).is_err());
        assert!(set_hinge_lock(RotationLocked, Locked, 0.0, 0.0, &tol).is_err());
        assert_eq!(set_hinge_lock(Released, Locked, 0.01, 0.001, &tol), Ok(Locked));
        assert!(set_hinge_lock(Released, Locked, 0.01, 0.01, &tol).is_err());
        assert_eq!(set_hinge_lock(RotationLocked, Released, 1.0, 0.1, &tol), Ok(Released));
    }

    #[test]
    fn hinge_freedoms() {
        use HingeLockState::*;
        assert!(!Locked.theta_free() && !Locked.slide_free());
        assert!(Released.theta_free() && Released.slide_free());
        assert!(!RotationLocked.theta_free() && RotationLocked.slide_free());
    }

    proptest! {
        #[test]
        fn larger_mu_never_turns_hold_into_slip(
            mu in 0.0f64..1.0, dmu in 0.0f64..1.0,
            fx in -800.0f64..800.0, fy in -400.0f64..400.0, fz in -400.0f64..400.0,
            deficit in 0.0f64..80_000.0,
        ) {
            let m = model();
            let cups = held(deficit);
            let load = Vec3::new(fx, fy, fz);
            let a = holding_wrench(&cups, mu, &load, &m).unwrap();
            let b = holding_wrench(&cups, mu + dmu, &load, &m).unwrap();
            prop_assert!(!(!a.slips && b.slips));
        }
    }
}
