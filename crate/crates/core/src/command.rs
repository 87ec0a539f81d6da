//! Operator commands and operation modes.
//!
//! Commands have two encodings that map one-to-one:
//!
//! * a JSON object tagged by `cmd`, used on the websocket;
//! * a single text line, used in mission scripts.
//!
//! | text                                   | JSON                                                        |
//! |----------------------------------------|-------------------------------------------------------------|
//! | `flight_ref <vx> <vy> <vz> <heading_deg>` | `{"cmd":"set_flight_ref","velocity":[vx,vy,vz],"heading":rad}` |
//! | `mode <flight\|perching\|rotation\|manipulation\|detachment>` | `{"cmd":"set_mode","mode":"rotation"}` |
//! | `pumps <on\|off>`                       | `{"cmd":"pumps","on":true}`                                 |
//! | `valves <open\|close>`                  | `{"cmd":"valves","open":true}`                              |
//! | `rotation_throttle <v>`                 | `{"cmd":"rotation_throttle","value":0.3}`                   |
//! | `feed <v> <advance\|retract>`           | `{"cmd":"feed_throttle","value":0.8,"direction":"advance"}` |
//! | `gantry <x> <y>`                        | `{"cmd":"gantry_target","x":0.01,"y":-0.02}`                |
//! | `tool <on\|off>`                        | `{"cmd":"tool_power","on":true}`                            |
//! | `ramp_down`                             | `{"cmd":"ramp_down_rotors"}`                                |
//! | `ramp_up`                               | `{"cmd":"ramp_up_rotors"}`                                  |
//! | `hinge <locked\|released\|rotation_locked>` | `{"cmd":"hinge_lock","state":"released"}`               |
//!
//! Velocities are m/s in the heading frame (x forward, y left, z up); gantry
//! targets are metres in the body `x`/`y` axes. A positive rotation throttle
//! tilts the tool table towards the wall, a negative one tilts it back.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attachment::HingeLockState;

/// Largest operator velocity reference, m/s.
pub const MAX_VELOCITY_REF: f64 = 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CommandParseError {
    #[error("empty command")]
    Empty,
    #[error("unknown command `{0}`")]
    Unknown(String),
    #[error("`{cmd}` expects {expected}")]
    Arity { cmd: String, expected: &'static str },
    #[error("bad value `{value}` for `{cmd}`: {reason}")]
    Value {
        cmd: String,
        value: String,
        reason: String,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationMode {
    #[default]
    Flight,
    Perching,
    Rotation,
    Manipulation,
    Detachment,
}

impl OperationMode {
    pub const ALL: [OperationMode; 5] = [
        OperationMode::Flight,
        OperationMode::Perching,
        OperationMode::Rotation,
        OperationMode::Manipulation,
        OperationMode::Detachment,
    ];
}

impl fmt::Display for OperationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperationMode::Flight => "flight",
            OperationMode::Perching => "perching",
            OperationMode::Rotation => "rotation",
            OperationMode::Manipulation => "manipulation",
            OperationMode::Detachment => "detachment",
        })
    }
}

impl FromStr for OperationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperationMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedDirection {
    Advance,
    Retract,
}

impl fmt::Display for FeedDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedDirection::Advance => "advance",
            FeedDirection::Retract => "retract",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum OperatorCommand {
    SetFlightRef { velocity: [f64; 3], heading: f64 },
    SetMode { mode: OperationMode },
    Pumps { on: bool },
    Valves { open: bool },
    RotationThrottle { value: f64 },
    FeedThrottle { value: f64, direction: FeedDirection },
    GantryTarget { x: f64, y: f64 },
    ToolPower { on: bool },
    RampDownRotors,
    RampUpRotors,
    HingeLock { state: HingeLockState },
}

impl OperatorCommand {
    /// Range checks that do not depend on the robot state.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be finite"))
            }
        };
        match self {
            OperatorCommand::SetFlightRef { velocity, heading } => {
                for v in velocity {
                    finite(*v, "velocity")?;
                }
                finite(*heading, "heading")?;
                let n = velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > MAX_VELOCITY_REF {
                    return Err(format!("velocity {n:.2} m/s above {MAX_VELOCITY_REF} m/s"));
                }
            }
            OperatorCommand::RotationThrottle { value } => {
                finite(*value, "throttle")?;
                if !(-1.0..=1.0).contains(value) {
                    return Err("rotation throttle must lie in [-1, 1]".into());
                }
            }
            OperatorCommand::FeedThrottle { value, .. } => {
                finite(*value, "throttle")?;
                if !(0.0..=1.0).contains(value) {
                    return Err("feed throttle must lie in [0, 1]".into());
                }
            }
            OperatorCommand::GantryTarget { x, y } => {
                finite(*x, "gantry x")?;
                finite(*y, "gantry y")?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorCommand::SetFlightRef { .. } => "flight_ref",
            OperatorCommand::SetMode { .. } => "mode",
            OperatorCommand::Pumps { .. } => "pumps",
            OperatorCommand::Valves { .. } => "valves",
            OperatorCommand::RotationThrottle { .. } => "rotation_throttle",
            OperatorCommand::FeedThrottle { .. } => "feed",
            OperatorCommand::GantryTarget { .. } => "gantry",
            OperatorCommand::ToolPower { .. } => "tool",
            OperatorCommand::RampDownRotors => "ramp_down",
            OperatorCommand::RampUpRotors => "ramp_up",
            OperatorCommand::HingeLock { .. } => "hinge",
        }
    }
}

impl fmt::Display for OperatorCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on_off = |b: bool| if b { "on" } else { "off" };
        match self {
            OperatorCommand::SetFlightRef { velocity, heading } => write!(
                f,
                "flight_ref {} {} {} {}",
                velocity[0],
                velocity[1],
                velocity[2],
                heading.to_degrees()
            ),
            OperatorCommand::SetMode { mode } => write!(f, "mode {mode}"),
            OperatorCommand::Pumps { on } => write!(f, "pumps {}", on_off(*on)),
            OperatorCommand::Valves { open } => write!(f, "valves {}", if *open { "open" } else { "close" }),
            OperatorCommand::RotationThrottle { value } => write!(f, "rotation_throttle {value}"),
            OperatorCommand::FeedThrottle { value, direction } => write!(f, "feed {value} {direction}"),
            OperatorCommand::GantryTarget { x, y } => write!(f, "gantry {x} {y}"),
            OperatorCommand::ToolPower { on } => write!(f, "tool {}", on_off(*on)),
            OperatorCommand::RampDownRotors => f.write_str("ramp_down"),
            OperatorCommand::RampUpRotors => f.write_str("ramp_up"),
            OperatorCommand::HingeLock { state } => write!(f, "hinge {state}"),
        }
    }
}

impl FromStr for OperatorCommand {
    type Err = CommandParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let (&cmd, args) = words.split_first().ok_or(CommandParseError::Empty)?;
        let arity = |n: usize, expected: &'static str| {
            if args.len() == n {
                Ok(())
            } else {
                Err(CommandParseError::Arity {
                    cmd: cmd.to_string(),
                    expected,
                })
            }
        };
        let bad = |value: &str, reason: String| CommandParseError::Value {
            cmd: cmd.to_string(),
            value: value.to_string(),
            reason,
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(s, e.to_string()));
        let flag = |s: &str, yes: &str, no: &str| match s {
            x if x == yes => Ok(true),
            x if x == no => Ok(false),
            _ => Err(bad(s, format!("expected `{yes}` or `{no}`"))),
        };
        let parsed = match cmd {
            "flight_ref" => {
                arity(4, "<vx> <vy> <vz> <heading_deg>")?;
                OperatorCommand::SetFlightRef {
                    velocity: [num(args[0])?, num(args[1])?, num(args[2])?],
                    heading: num(args[3])?.to_radians(),
                }
            }
            "mode" => {
                arity(1, "<mode>")?;
                OperatorCommand::SetMode {
                    mode: args[0].parse().map_err(|e| bad(args[0], e))?,
                }
            }
            "pumps" => {
                arity(1, "on|off")?;
                OperatorCommand::Pumps {
                    on: flag(args[0], "on", "off")?,
                }
            }
            "valves" => {
                arity(1, "open|close")?;
                OperatorCommand::Valves {
                    open: flag(args[0], "open", "close")?,
                }
            }
            "rotation_throttle" => {
                arity(1, "<value>")?;
                OperatorCommand::RotationThrottle { value: num(args[0])? }
            }
            "feed" => {
                arity(2, "<value> advance|retract")?;
                OperatorCommand::FeedThrottle {
                    value: num(args[0])?,
                    direction: if flag(args[1], "advance", "retract")? {
                        FeedDirection::Advance
                    } else {
                        FeedDirection::Retract
                    },
                }
            }
            "gantry" => {
                arity(2, "<x> <y>")?;
                OperatorCommand::GantryTarget {
                    x: num(args[0])?,
                    y: num(args[1])?,
                }
            }
            "tool" => {
                arity(1, "on|off")?;
                OperatorCommand::ToolPower {
                    on: flag(args[0], "on", "off")?,
                }
            }
            "ramp_down" => {
                arity(0, "no arguments")?;
                OperatorCommand::RampDownRotors
            }
            "ramp_up" => {
                arity(0, "no arguments")?;
                OperatorCommand::RampUpRotors
            }
            "hinge" => {
                arity(1, "locked|released|rotation_locked")?;
                OperatorCommand::HingeLock {
                    state: args[0].parse().map_err(|e| bad(args[0], e))?,
                }
            }
            other => return Err(CommandParseError::Unknown(other.to_string())),
        };
        parsed.validate().map_err(|reason| bad(line.trim(), reason))?;
        Ok(parsed)
    }
}
