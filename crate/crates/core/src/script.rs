//! Mission scripts: timed or conditional operator commands, one per line.
//!
//! ```text
//! # comments start with '#'
//! @target 0.02 -0.01        # camera target on the wall (right, up), m
//! @hold 2                   # keep simulating this long after the last command, s
//! @timeout 400              # give up after this much simulated time, s
//! at 0.5 pumps on           # absolute time
//! after 1.0 mode perching   # relative to the previous command
//! when contact mode perching
//! when tilted mode manipulation
//! ```
//!
//! Commands fire strictly in file order. Conditions are flags (`contact`,
//! `attached`, `perched`, `detached`, `rotors_idle`, `tilted`, `gantry_arrived`,
//! `ramp_complete`, `detachment_done`), `mode=<mode>`, or a comparison
//! `<quantity><op><value>` over `time`, `theta_deg`, `slide_mm`, `depth_mm`,
//! `wall_distance`, `feed_force` with `op` one of `>=`, `<=`, `>`, `<`.

use std::path::Path;
use std::str::FromStr;

use crate::command::{OperationMode, OperatorCommand};
use crate::mission::Rejection;
use crate::model::Vec2;
use crate::sim::{SimError, Simulator};

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Quantity {
    Time,
    ThetaDeg,
    SlideMm,
    DepthMm,
    WallDistance,
    FeedForce,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Comparison {
    Ge,
    Le,
    Gt,
    Lt,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    Contact,
    Attached,
    Perched,
    Detached,
    RotorsIdle,
    Tilted,
    GantryArrived,
    RampComplete,
    DetachmentDone,
    Mode(OperationMode),
    Compare(Quantity, Comparison, f64),
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let flag = match s {
            "contact" => Some(Condition::Contact),
            "attached" => Some(Condition::Attached),
            "perched" => Some(Condition::Perched),
            "detached" => Some(Condition::Detached),
            "rotors_idle" => Some(Condition::RotorsIdle),
            "tilted" => Some(Condition::Tilted),
            "gantry_arrived" => Some(Condition::GantryArrived),
            "ramp_complete" => Some(Condition::RampComplete),
            "detachment_done" => Some(Condition::DetachmentDone),
            _ => None,
        };
        if let Some(c) = flag {
            return Ok(c);
        }
        if let Some(m) = s.strip_prefix("mode=") {
            return m.parse().map(Condition::Mode);
        }
        let ops = [(">=", Comparison::Ge), ("<=", Comparison::Le), (">", Comparison::Gt), ("<", Comparison::Lt)];
        for (tok, op) in ops {
            if let Some((lhs, rhs)) = s.split_once(tok) {
                let q = match lhs {
                    "time" => Quantity::Time,
                    "theta_deg" => Quantity::ThetaDeg,
                    "slide_mm" => Quantity::SlideMm,
                    "depth_mm" => Quantity::DepthMm,
                    "wall_distance" => Quantity::WallDistance,
                    "feed_force" => Quantity::FeedForce,
                    other => return Err(format!("unknown quantity `{other}`")),
                };
                let v: f64 = rhs.parse().map_err(|_| format!("bad number `{rhs}`"))?;
                return Ok(Condition::Compare(q, op, v));
            }
        }
        Err(format!("unknown condition `{s}`"))
    }
}

impl Condition {
    pub fn holds(&self, sim: &Simulator) -> bool {
        match self {
            Condition::Contact => sim.cups.iter().all(|c| c.contact),
            Condition::Attached => sim.state.both_attached(),
            Condition::Perched => sim.perched(),
            Condition::Detached => sim.state.attached.iter().all(|a| !a),
            Condition::RotorsIdle => sim.rotors_idle(),
            Condition::Tilted => sim.tilted(),
            Condition::GantryArrived => sim.gantry.arrived(),
            Condition::RampComplete => sim.ramp_complete,
            Condition::DetachmentDone => sim.detachment_done(),
            Condition::Mode(m) => sim.mode == *m,
            Condition::Compare(q, op, v) => {
                let x = match q {
                    Quantity::Time => sim.time(),
                    Quantity::ThetaDeg => sim.state.hinge_theta.to_degrees(),
                    Quantity::SlideMm => sim.state.hinge_slide * 1e3,
                    Quantity::DepthMm => sim.state.drill_depth * 1e3,
                    Quantity::WallDistance => sim.env().wall.distance(&sim.state.body_pose.position),
                    Quantity::FeedForce => sim.last_info.tool_contact_force,
                };
                match op {
                    Comparison::Ge => x >= *v,
                    Comparison::Le => x <= *v,
                    Comparison::Gt => x > *v,
                    Comparison::Lt => x < *v,
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Trigger {
    At(f64),
    After(f64),
    When(Condition),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptEntry {
    pub line: usize,
    pub trigger: Trigger,
    pub command: OperatorCommand,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissionScript {
    pub entries: Vec<ScriptEntry>,
    pub camera_target: Option<Vec2>,
    pub hold: f64,
    pub timeout: f64,
}

impl Default for MissionScript {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            camera_target: None,
            hold: 2.0,
            timeout: 600.0,
        }
    }
}

impl MissionScript {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut script = MissionScript::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ScriptError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (head, rest) = content.split_once(char::is_whitespace).unwrap_or((content, ""));
            let rest = rest.trim();
            let number = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            match head {
                "@target" => {
                    let v: Vec<&str> = rest.split_whitespace().collect();
                    if v.len() != 2 {
                        return Err(err("@target takes <right> <up>".into()));
                    }
                    script.camera_target = Some(Vec2::new(number(v[0])?, number(v[1])?));
                }
                "@hold" => script.hold = number(rest)?,
                "@timeout" => script.timeout = number(rest)?,
                "at" | "after" | "when" => {
                    let (arg, cmd) = rest
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| err(format!("`{head}` needs an argument and a command")))?;
                    let trigger = match head {
                        "at" => Trigger::At(number(arg)?),
                        "after" => Trigger::After(number(arg)?),
                        _ => Trigger::When(arg.parse().map_err(err)?),
                    };
                    let command = cmd.trim().parse().map_err(|e: crate::command::CommandParseError| err(e.to_string()))?;
                    script.entries.push(ScriptEntry { line, trigger, command });
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// How a scripted run ended.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptOutcome {
    /// Every entry fired before the timeout.
    pub completed: bool,
    pub fired: usize,
    pub rejections: Vec<(usize, Rejection)>,
    pub end_time: f64,
}

/// Feeds script entries to a simulator as their triggers come due.
#[derive(Clone, Debug)]
pub struct ScriptRunner {
    script: MissionScript,
    next: usize,
    last_fire: f64,
    stop_on_rejection: bool,
    pub rejections: Vec<(usize, Rejection)>,
}

impl ScriptRunner {
    pub fn new(script: MissionScript) -> Self {
        Self {
            script,
            next: 0,
            last_fire: 0.0,
            stop_on_rejection: false,
            rejections: Vec::new(),
        }
    }

    /// Stop at the first rejected command instead of carrying on.
    pub fn strict(mut self) -> Self {
        self.stop_on_rejection = true;
        self
    }

    /// Number of entries fired so far.
    pub fn fired(&self) -> usize {
        self.next
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.script.entries
    }

    pub fn finished(&self) -> bool {
        self.next >= self.script.entries.len()
    }

    /// Fire every entry that is due now.
    pub fn poll(&mut self, sim: &mut Simulator) {
        while let Some(e) = self.script.entries.get(self.next) {
            let due = match &e.trigger {
                Trigger::At(t) => sim.time() >= t - 1e-9,
                Trigger::After(dt) => sim.time() >= self.last_fire + dt - 1e-9,
                Trigger::When(c) => c.holds(sim),
            };
            if !due {
                return;
            }
            if let Err(r) = sim.command(&e.command) {
                self.rejections.push((e.line, r));
                if self.stop_on_rejection {
                    self.next += 1;
                    return;
                }
            }
            self.last_fire = sim.time();
            self.next += 1;
        }
    }

    /// Run the script to completion plus the hold time, or until timeout.
    pub fn run(mut self, sim: &mut Simulator) -> Result<ScriptOutcome, SimError> {
        if let Some(t) = self.script.camera_target {
            sim.camera_target = Some(t);
        }
        let timeout = self.script.timeout;
        loop {
            self.poll(sim);
            let aborted = self.stop_on_rejection && !self.rejections.is_empty();
            if aborted {
                return Ok(ScriptOutcome {
                    completed: false,
                    fired: self.next,
                    rejections: self.rejections,
                    end_time: sim.time(),
                });
            }
            if self.finished() || sim.time() >= timeout {
                break;
            }
            sim.step()?;
        }
        let completed = self.finished();
        if completed {
            sim.run_until((sim.time() + self.script.hold).min(timeout.max(sim.time())))?;
        }
        Ok(ScriptOutcome {
            completed,
            fired: self.next,
            rejections: self.rejections,
            end_time: sim.time(),
        })
    }
}
