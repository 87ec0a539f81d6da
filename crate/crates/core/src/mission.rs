//! Operation-mode state machine.
//!
//! Every operator command is checked against the current mode and a snapshot
//! of the robot ([`MissionView`]). Accepted commands produce a new mode and a
//! list of [`Action`]s for the simulator; rejected ones leave the mode
//! unchanged and carry a reason for the operator.
//!
//! Modes advance only in the order
//! Flight, Perching, Rotation, Manipulation, Detachment, Flight.

use serde::{Deserialize, Serialize};

use crate::attachment::{set_hinge_lock, HingeLockState, LockTolerance};
use crate::command::{FeedDirection, OperationMode, OperatorCommand};
use crate::model::Vec2;

/// Which degrees of freedom a mode keeps locked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockSet {
    pub theta_locked: bool,
    pub slide_locked: bool,
    pub gantry_locked: bool,
}

impl LockSet {
    const fn new(theta_locked: bool, slide_locked: bool, gantry_locked: bool) -> Self {
        Self {
            theta_locked,
            slide_locked,
            gantry_locked,
        }
    }

    /// Hinge pin state that realizes exactly this set of hinge freedoms.
    pub fn hinge_state(&self) -> HingeLockState {
        match (self.theta_locked, self.slide_locked) {
            (true, true) => HingeLockState::Locked,
            (true, false) => HingeLockState::RotationLocked,
            _ => HingeLockState::Released,
        }
    }

    /// Whether the pin state opens no freedom this set keeps locked.
    pub fn admits(&self, hinge: HingeLockState) -> bool {
        (!hinge.theta_free() || !self.theta_locked) && (!hinge.slide_free() || !self.slide_locked)
    }
}

/// Lock set of each mode. Detachment unwinds the hinge step by step, so it
/// leaves every freedom available and the pin state decides.
pub fn enforce_locks(mode: OperationMode) -> LockSet {
    match mode {
        OperationMode::Flight => LockSet::new(true, true, true),
        OperationMode::Perching => LockSet::new(true, true, true),
        OperationMode::Rotation => LockSet::new(false, false, true),
        OperationMode::Manipulation => LockSet::new(true, false, false),
        OperationMode::Detachment => LockSet::new(false, false, false),
    }
}

/// Robot quantities the guards look at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MissionView {
    pub hinge: HingeLockState,
    pub theta: f64,
    pub slide: f64,
    pub contact: [bool; 2],
    pub attached: [bool; 2],
    pub pumps_on: bool,
    pub drill_on: bool,
    pub rotor_speeds: [f64; 4],
    pub hover_rpm: f64,
    /// Total rotor thrust over weight.
    pub thrust_ratio: f64,
    pub gantry_pos: Vec2,
    pub gantry_arrived: bool,
    pub gantry_flight: Vec2,
    pub ramp_complete: bool,
    pub detachment_done: bool,
    pub lock_tolerance: LockTolerance,
}

impl MissionView {
    pub fn both_attached(&self) -> bool {
        self.attached.iter().all(|a| *a)
    }

    pub fn any_attached(&self) -> bool {
        self.attached.iter().any(|a| *a)
    }

    pub fn rotors_idle(&self) -> bool {
        self.rotor_speeds.iter().all(|w| w.abs() <= ROTOR_IDLE_FRACTION * self.hover_rpm)
    }

    pub fn gantry_at(&self, p: &Vec2) -> bool {
        (self.gantry_pos - p).norm() <= GANTRY_POSITION_TOL
    }
}

/// Rotor speed, as a fraction of hover speed, below which rotors count as
/// ramped down.
pub const ROTOR_IDLE_FRACTION: f64 = 0.05;
/// Thrust over weight needed before the cups may be released.
pub const RELEASE_THRUST_RATIO: f64 = 0.95;
pub const GANTRY_POSITION_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    FlightRef { velocity: [f64; 3], heading: f64 },
    FlightControl,
    RampDown,
    RampUp,
    Rotation { throttle: f64 },
    Feed { throttle: f64, direction: FeedDirection },
    SetPumps { on: bool },
    SetValves { open: bool },
    GantryTarget { x: f64, y: f64 },
    SetTool { on: bool },
    SetHinge { state: HingeLockState },
    StartDetachment,
    ResetEstimator,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[error("`{command}` rejected in {mode}: {reason}")]
pub struct Rejection {
    pub command: String,
    pub mode: OperationMode,
    pub reason: String,
}

pub type Outcome = Result<(OperationMode, Vec<Action>), Rejection>;

/// Apply one operator command.
pub fn handle(mode: OperationMode, command: &OperatorCommand, view: &MissionView) -> Outcome {
    use OperationMode::*;
    let reject = |reason: &str| Rejection {
        command: command.to_string(),
        mode,
        reason: reason.to_string(),
    };
    command.validate().map_err(|r| reject(&r))?;
    let locks = enforce_locks(mode);
    let stay = |actions: Vec<Action>| Ok((mode, actions));

    match command {
        OperatorCommand::SetMode { mode: target } => set_mode(mode, *target, view).map_err(|r| reject(&r)),

        OperatorCommand::SetFlightRef { velocity, heading } => {
            let act = Action::FlightRef {
                velocity: *velocity,
                heading: *heading,
            };
            match mode {
                Flight | Perching => stay(vec![act, Action::FlightControl]),
                Detachment if view.ramp_complete => stay(vec![act]),
                Detachment => Err(reject("rotors must be ramped up to hover first")),
                _ => Err(reject("velocity commands need flight control")),
            }
        }

        OperatorCommand::Pumps { on: true } => stay(vec![Action::SetPumps { on: true }]),
        OperatorCommand::Pumps { on: false } => match mode {
            _ if !view.any_attached() => stay(vec![Action::SetPumps { on: false }]),
            Flight | Detachment if view.thrust_ratio >= RELEASE_THRUST_RATIO && view.hinge == HingeLockState::Locked => {
                stay(vec![Action::SetPumps { on: false }])
            }
            Flight | Detachment => Err(reject("rotors must carry the weight before the pumps stop")),
            _ => Err(reject("pumps hold the robot on the wall in this mode")),
        },

        OperatorCommand::Valves { open: false } => stay(vec![Action::SetValves { open: false }]),
        OperatorCommand::Valves { open: true } => match mode {
            _ if !view.any_attached() => stay(vec![Action::SetValves { open: true }]),
            Flight | Detachment if view.thrust_ratio >= RELEASE_THRUST_RATIO && view.hinge == HingeLockState::Locked => {
                stay(vec![Action::SetValves { open: true }])
            }
            Flight | Detachment => Err(reject("rotors must carry the weight before the valves open")),
            _ => Err(reject("opening the valves would drop the robot off the wall")),
        },

        OperatorCommand::RotationThrottle { value } => match mode {
            Rotation | Detachment if view.hinge == HingeLockState::Released => {
                if mode == Rotation && !view.gantry_at(&Vec2::zeros()) && *value != 0.0 {
                    Err(reject("tool still moving to the workspace centre"))
                } else {
                    stay(vec![Action::Rotation { throttle: *value }])
                }
            }
            Rotation | Detachment => Err(reject("hinge pins are not released")),
            _ => Err(reject("rotation only in rotation or detachment mode")),
        },

        OperatorCommand::FeedThrottle { value, direction } => match mode {
            Manipulation | Detachment if view.hinge == HingeLockState::RotationLocked => stay(vec![Action::Feed {
                throttle: *value,
                direction: *direction,
            }]),
            Manipulation | Detachment => Err(reject("feed needs the hinge rotation-locked")),
            _ => Err(reject("feed only in manipulation or detachment mode")),
        },

        OperatorCommand::GantryTarget { x, y } => {
            if locks.gantry_locked {
                Err(reject("gantry is locked in this mode"))
            } else {
                stay(vec![Action::GantryTarget { x: *x, y: *y }])
            }
        }

        OperatorCommand::ToolPower { on: false } => stay(vec![Action::SetTool { on: false }]),
        OperatorCommand::ToolPower { on: true } => {
            if mode == Manipulation && view.hinge == HingeLockState::RotationLocked {
                stay(vec![Action::SetTool { on: true }])
            } else {
                Err(reject("tool may only run in manipulation mode with the hinge rotation-locked"))
            }
        }

        OperatorCommand::RampDownRotors => match mode {
            Flight | Perching if view.both_attached() => stay(vec![Action::RampDown]),
            Flight | Perching => Err(reject("ramping down in free flight")),
            _ => Err(reject("rotors are not under flight control")),
        },

        OperatorCommand::RampUpRotors => {
            if mode != Detachment {
                Err(reject("ramp up belongs to detachment"))
            } else if view.hinge != HingeLockState::Locked {
                Err(reject("lock the hinge before ramping up"))
            } else if !view.gantry_at(&view.gantry_flight) {
                Err(reject("move the tool to its flight position first"))
            } else {
                stay(vec![Action::RampUp])
            }
        }

        OperatorCommand::HingeLock { state } => {
            if mode != Detachment {
                return Err(reject("hinge pins are set by mode changes outside detachment"));
            }
            if view.drill_on {
                return Err(reject("tool is running"));
            }
            if *state == HingeLockState::Released && view.hinge == HingeLockState::RotationLocked && view.slide > view.lock_tolerance.slide {
                return Err(reject("retract the tool before releasing the pins"));
            }
            let granted = set_hinge_lock(view.hinge, *state, view.theta, view.slide, &view.lock_tolerance).map_err(|e| reject(&e.reason))?;
            stay(vec![Action::SetHinge { state: granted }])
        }
    }
}

fn set_mode(mode: OperationMode, target: OperationMode, view: &MissionView) -> Result<(OperationMode, Vec<Action>), String> {
    use OperationMode::*;
    if mode == target {
        return Ok((mode, vec![]));
    }
    match (mode, target) {
        (Flight, Perching) => {
            if !view.pumps_on {
                Err("pumps must be on".into())
            } else if !view.contact.iter().all(|c| *c) {
                Err("both cups must touch the wall".into())
            } else {
                Ok((Perching, vec![]))
            }
        }
        (Perching, Rotation) => {
            if !view.both_attached() {
                Err("both cups must be attached".into())
            } else if !view.rotors_idle() {
                Err("ramp the rotors down first".into())
            } else {
                Ok((
                    Rotation,
                    vec![
                        Action::GantryTarget { x: 0.0, y: 0.0 },
                        Action::SetHinge {
                            state: HingeLockState::Released,
                        },
                        Action::Rotation { throttle: 0.0 },
                    ],
                ))
            }
        }
        (Rotation, Manipulation) => {
            let granted = set_hinge_lock(view.hinge, HingeLockState::RotationLocked, view.theta, view.slide, &view.lock_tolerance)
                .map_err(|e| e.reason)?;
            Ok((
                Manipulation,
                vec![
                    Action::Rotation { throttle: 0.0 },
                    Action::SetHinge { state: granted },
                    Action::Feed {
                        throttle: 0.0,
                        direction: FeedDirection::Advance,
                    },
                ],
            ))
        }
        (Manipulation, Detachment) => {
            if view.drill_on {
                Err("switch the tool off first".into())
            } else {
                Ok((Detachment, vec![Action::StartDetachment]))
            }
        }
        (Detachment, Flight) => {
            if !view.detachment_done {
                Err("detachment sequence not finished".into())
            } else if view.any_attached() {
                Err("cups still attached".into())
            } else {
                Ok((Flight, vec![Action::FlightControl]))
            }
        }
        _ => Err(format!("no transition from {mode} to {target}")),
    }
}

/// Accepts exactly the mode traces `Flight (Perching Rotation Manipulation
/// Detachment Flight)*` and their prefixes.
pub fn is_valid_trace_prefix(trace: &[OperationMode]) -> bool {
    use OperationMode::*;
    let cycle = [Flight, Perching, Rotation, Manipulation, Detachment];
    trace.iter().enumerate().all(|(i, m)| *m == cycle[i % cycle.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RobotParams;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn view() -> MissionView {
        MissionView {
            hinge: HingeLockState::Locked,
            theta: 0.0,
            slide: 0.0,
            contact: [false; 2],
            attached: [false; 2],
            pumps_on: false,
            drill_on: false,
            rotor_speeds: [2985.0; 4],
            hover_rpm: 2985.0,
            thrust_ratio: 1.0,
            gantry_pos: Vec2::new(-0.105, 0.0),
            gantry_arrived: true,
            gantry_flight: Vec2::new(-0.105, 0.0),
            ramp_complete: false,
            detachment_done: false,
            lock_tolerance: LockTolerance::from_params(&RobotParams::default()),
        }
    }

    fn mode(m: OperationMode) -> OperatorCommand {
        OperatorCommand::SetMode { mode: m }
    }

    #[test]
    fn table_rows() {
        use OperationMode::*;
        assert_eq!(enforce_locks(Manipulation), LockSet::new(true, false, false));
        assert_eq!(enforce_locks(Flight), LockSet::new(true, true, true));
        assert_eq!(enforce_locks(Perching), LockSet::new(true, true, true));
        assert_eq!(enforce_locks(Rotation), LockSet::new(false, false, true));
        assert_eq!(enforce_locks(Rotation).hinge_state(), HingeLockState::Released);
        assert_eq!(enforce_locks(Manipulation).hinge_state(), HingeLockState::RotationLocked);
        assert!(enforce_locks(Flight).admits(HingeLockState::Locked));
        assert!(!enforce_locks(Flight).admits(HingeLockState::Released));
    }

    #[test]
    fn tool_rejected_in_flight() {
        let r = handle(OperationMode::Flight, &OperatorCommand::ToolPower { on: true }, &view());
        assert!(r.is_err());
        assert_eq!(r.unwrap_err().mode, OperationMode::Flight);
    }

    #[test]
    fn rotation_needs_ramp_down() {
        let mut v = view();
        v.attached = [true; 2];
        v.contact = [true; 2];
        v.pumps_on = true;
        let r = handle(OperationMode::Perching, &mode(OperationMode::Rotation), &v).unwrap_err();
        assert!(r.reason.contains("ramp"));
        v.rotor_speeds = [0.0; 4];
        let (m, acts) = handle(OperationMode::Perching, &mode(OperationMode::Rotation), &v).unwrap();
        assert_eq!(m, OperationMode::Rotation);
        assert!(acts.contains(&Action::GantryTarget { x: 0.0, y: 0.0 }));
    }

    #[test]
    fn perching_needs_pumps_and_contact() {
        let mut v = view();
        assert!(handle(OperationMode::Flight, &mode(OperationMode::Perching), &v).is_err());
        v.pumps_on = true;
        assert!(handle(OperationMode::Flight, &mode(OperationMode::Perching), &v).is_err());
        v.contact = [true; 2];
        assert_eq!(handle(OperationMode::Flight, &mode(OperationMode::Perching), &v).unwrap().0, OperationMode::Perching);
    }

    #[test]
    fn manipulation_needs_right_angle() {
        let mut v = view();
        v.hinge = HingeLockState::Released;
        v.theta = FRAC_PI_2 / 2.0;
        assert!(handle(OperationMode::Rotation, &mode(OperationMode::Manipulation), &v).is_err());
        v.theta = FRAC_PI_2 - 0.01;
        let (m, acts) = handle(OperationMode::Rotation, &mode(OperationMode::Manipulation), &v).unwrap();
        assert_eq!(m, OperationMode::Manipulation);
        assert!(acts.contains(&Action::SetHinge {
            state: HingeLockState::RotationLocked
        }));
    }

    #[test]
    fn valves_before_hover_thrust_refused() {
        let mut v = view();
        v.attached = [true; 2];
        v.thrust_ratio = 0.2;
        let r = handle(OperationMode::Detachment, &OperatorCommand::Valves { open: true }, &v).unwrap_err();
        assert!(r.reason.contains("weight"));
        v.thrust_ratio = 1.0;
        assert!(handle(OperationMode::Detachment, &OperatorCommand::Valves { open: true }, &v).is_ok());
        assert!(handle(OperationMode::Manipulation, &OperatorCommand::Valves { open: true }, &v).is_err());
    }

    #[test]
    fn illegal_transitions_rejected() {
        use OperationMode::*;
        let v = view();
        for (from, to) in [(Flight, Rotation), (Perching, Flight), (Rotation, Detachment), (Manipulation, Flight), (Detachment, Flight)] {
            assert!(handle(from, &mode(to), &v).is_err(), "{from} -> {to}");
        }
    }

    #[test]
    fn trace_language() {
        use OperationMode::*;
        assert!(is_valid_trace_prefix(&[Flight, Perching, Rotation, Manipulation, Detachment, Flight]));
        assert!(is_valid_trace_prefix(&[Flight, Perching]));
        assert!(!is_valid_trace_prefix(&[Flight, Rotation]));
        assert!(!is_valid_trace_prefix(&[Perching]));
    }
}
