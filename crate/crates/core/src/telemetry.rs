//! Telemetry records and the outbound message schema shared by CSV logs,
//! JSON-lines logs and the websocket stream.
//!
//! Every websocket frame and every JSON log line is one [`OutboundMessage`],
//! tagged by a `type` field:
//!
//! | `type`      | payload                                       |
//! |-------------|-----------------------------------------------|
//! | `hello`     | `schema_version`, `rate_hz`                   |
//! | `telemetry` | all fields of [`TelemetryRecord`]             |
//! | `event`     | `time`, `kind`, `detail`                      |
//! | `rejected`  | `time`, `command`, `mode`, `reason`           |
//! | `error`     | `message` (malformed or unparseable input)    |

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attachment::HingeLockState;
use crate::command::OperationMode;

/// Bumped whenever a field is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

/// Default interval between telemetry records, seconds.
pub const TELEMETRY_PERIOD: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One telemetry sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub time: f64,
    pub mode: OperationMode,
    pub hinge: HingeLockState,
    pub theta_deg: f64,
    pub slide_mm: f64,
    /// Body origin in `W`, metres.
    pub position: [f64; 3],
    /// Body orientation `W <- B` as `[w, x, y, z]`.
    pub orientation: [f64; 4],
    pub velocity: [f64; 3],
    pub rotor_rpm: [f64; 4],
    /// Vacuum under each cup, Pa.
    pub cup_pressure: [f64; 2],
    pub attached: [bool; 2],
    pub pumps_on: bool,
    pub valves_open: bool,
    pub feed_force_n: f64,
    pub power_w: f64,
    pub gantry_mm: [f64; 2],
    pub drill_on: bool,
    pub drill_depth_mm: f64,
    /// Laser cross in the camera image, pixels from the centre.
    pub laser_px: Option<[f64; 2]>,
    pub slip_mm: f64,
    pub last_rejection: Option<String>,
}

/// Frozen column order of telemetry CSV files.
pub const CSV_HEADER: [&str; 36] = [
    "time",
    "mode",
    "hinge",
    "theta_deg",
    "slide_mm",
    "pos_x",
    "pos_y",
    "pos_z",
    "quat_w",
    "quat_x",
    "quat_y",
    "quat_z",
    "vel_x",
    "vel_y",
    "vel_z",
    "rpm_fl",
    "rpm_fr",
    "rpm_bl",
    "rpm_br",
    "cup_pressure_right",
    "cup_pressure_left",
    "attached_right",
    "attached_left",
    "pumps_on",
    "valves_open",
    "feed_force_n",
    "power_w",
    "gantry_x_mm",
    "gantry_y_mm",
    "drill_on",
    "drill_depth_mm",
    "laser_px_x",
    "laser_px_y",
    "slip_mm",
    "last_rejection",
    "schema_version",
];

impl TelemetryRecord {
    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v}");
        let b = |v: bool| (v as u8).to_string();
        let mut row = vec![f(self.time), self.mode.to_string(), self.hinge.to_string(), f(self.theta_deg), f(self.slide_mm)];
        row.extend(self.position.iter().map(|v| f(*v)));
        row.extend(self.orientation.iter().map(|v| f(*v)));
        row.extend(self.velocity.iter().map(|v| f(*v)));
        row.extend(self.rotor_rpm.iter().map(|v| f(*v)));
        row.extend(self.cup_pressure.iter().map(|v| f(*v)));
        row.extend(self.attached.iter().map(|v| b(*v)));
        row.push(b(self.pumps_on));
        row.push(b(self.valves_open));
        row.push(f(self.feed_force_n));
        row.push(f(self.power_w));
        row.extend(self.gantry_mm.iter().map(|v| f(*v)));
        row.push(b(self.drill_on));
        row.push(f(self.drill_depth_mm));
        match self.laser_px {
            Some([x, y]) => {
                row.push(f(x));
                row.push(f(y));
            }
            None => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        row.push(f(self.slip_mm));
        row.push(self.last_rejection.clone().unwrap_or_default());
        row.push(SCHEMA_VERSION.to_string());
        row
    }
}

pub fn write_telemetry_csv<W: Write>(out: W, records: &[TelemetryRecord]) -> Result<(), TelemetryError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Accepted,
    Rejected,
    ModeChange,
    Contact,
    Attached,
    RotorsRampedDown,
    ThrustRampComplete,
    PumpsOn,
    PumpsOff,
    ValvesOpen,
    ValvesClosed,
    Separation,
    PullOff,
    SlipStart,
    HingeLock,
    ToolOn,
    ToolOff,
    Hole,
    DetachPhase,
    DetachAbort,
    ActuationStopped,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| std::fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutboundMessage {
    Hello { schema_version: u32, rate_hz: f64 },
    Telemetry(TelemetryRecord),
    Event(EventRecord),
    Rejected {
        time: f64,
        command: String,
        mode: OperationMode,
        reason: String,
    },
    Error { message: String },
}

impl OutboundMessage {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("outbound messages always serialize")
    }
}

pub fn write_json_lines<W: Write>(mut out: W, messages: &[OutboundMessage]) -> Result<(), TelemetryError> {
    for m in messages {
        writeln!(out, "{}", m.to_json_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> TelemetryRecord {
        TelemetryRecord {
            time: 1.25,
            mode: OperationMode::Manipulation,
            hinge: HingeLockState::RotationLocked,
            theta_deg: 90.0,
            slide_mm: 131.5,
            position: [0.7, 0.1, 1.5],
            orientation: [0.5, 0.5, 0.5, 0.5],
            velocity: [0.0; 3],
            rotor_rpm: [3000.0, 3000.0, 0.0, 0.0],
            cup_pressure: [79000.0, 79100.0],
            attached: [true, true],
            pumps_on: true,
            valves_open: false,
            feed_force_n: 100.0,
            power_w: 900.0,
            gantry_mm: [12.0, -3.0],
            drill_on: true,
            drill_depth_mm: 4.2,
            laser_px: None,
            slip_mm: 0.0,
            last_rejection: Some("tool power on rejected".into()),
        }
    }

    #[test]
    fn csv_row_matches_header() {
        assert_eq!(sample().csv_row().len(), CSV_HEADER.len());
        let mut buf = Vec::new();
        write_telemetry_csv(&mut buf, &[sample()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,mode,hinge,theta_deg"));
        assert!(text.contains(",manipulation,rotation_locked,90,"));
    }

    #[test]
    fn json_tagged_by_type() {
        let line = OutboundMessage::Telemetry(sample()).to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "telemetry");
        assert_eq!(v["mode"], "manipulation");
        let back: OutboundMessage = serde_json::from_str(&line).unwrap();
        assert_eq!(back, OutboundMessage::Telemetry(sample()));
        let err = OutboundMessage::Error { message: "bad".into() }.to_json_line();
        assert_eq!(err, r#"{"type":"error","message":"bad"}"#);
    }
}
