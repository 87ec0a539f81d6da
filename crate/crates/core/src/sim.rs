//! The simulator: dynamics, suction, tool, controller and mission logic
//! advanced together on a fixed tick.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attachment::{holding_wrench, slip_speed, update_suction, CupModel, HingeLockState, LockTolerance, SuctionCupState};
use crate::command::{FeedDirection, OperationMode, OperatorCommand};
use crate::control::{
    feed_control, rotate_back_control, rotation_control, ControlError, ControllerGains, DetachConfig, DetachView, DetachmentSequence,
    FlightController, FlightReference, Mixer, Odometry, OdometryNoise,
};
use crate::dynamics::{ConstraintRegime, Dynamics, DynamicsError, StepInfo, DEFAULT_DT};
use crate::mission::{enforce_locks, handle, Action, MissionView, Rejection};
use crate::model::{frame_pose, Environment, Frame, ModelError, ParamSet, Pose, RobotParams, SimState, Twist, Vec2, Vec3};
use crate::rotor::{power_draw, rotor_wrench};
use crate::telemetry::{EventKind, EventRecord, TelemetryRecord, TELEMETRY_PERIOD};
use crate::tool::{drill_step, gantry_step, observe_laser_cross, BoreTracker, GantryState, SensingModel, ToolKind, ToolSpec};

use nalgebra::UnitQuaternion;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub telemetry_period: f64,
    pub record_telemetry: bool,
    pub record_events: bool,
    pub gains: ControllerGains,
    pub odometry: OdometryNoise,
    pub sensing: SensingModel,
    pub tool: ToolKind,
    pub detach: DetachConfig,
    /// Duration of rotor ramps on the wall, s.
    pub ramp_duration: f64,
    /// Per-rotor thrust scatter drawn once per run (relative sigma).
    pub thrust_scale_sigma: f64,
    /// Lateral play of the slide carriage, drawn once per run, m.
    pub slide_jitter_sigma: f64,
    /// Bend the tool table under rotor torque while cutting.
    pub table_deflection: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            telemetry_period: TELEMETRY_PERIOD,
            record_telemetry: true,
            record_events: true,
            gains: ControllerGains::default(),
            odometry: OdometryNoise::default(),
            sensing: SensingModel::default(),
            tool: ToolKind::HammerDrill,
            detach: DetachConfig::default(),
            ramp_duration: 3.0,
            thrust_scale_sigma: 0.0,
            slide_jitter_sigma: 0.0,
            table_deflection: true,
            seed: 0,
        }
    }
}

/// What currently drives the rotors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Actuation {
    Flight,
    Ramp {
        from: [f64; 4],
        to: [f64; 4],
        start: f64,
        duration: f64,
        /// Hand over to flight control when the ramp ends.
        then_flight: bool,
    },
    Rotation { throttle: f64 },
    Feed { throttle: f64, direction: FeedDirection },
    Idle,
}

/// A finished hole, in wall coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrilledHole {
    pub centre: Vec2,
    pub depth: f64,
    /// Cup slip accumulated while the bit was in the wall, m.
    pub slip: f64,
    pub time: f64,
}

#[derive(Clone)]
pub struct Simulator {
    pub dynamics: Dynamics,
    pub config: SimConfig,
    pub state: SimState,
    pub mode: OperationMode,
    pub hinge: HingeLockState,
    pub cups: [SuctionCupState; 2],
    pub gantry: GantryState,
    pub tool: ToolSpec,
    pub drill_on: bool,
    pub actuation: Actuation,
    pub flight_ref: FlightReference,
    pub ramp_complete: bool,
    pub detach: Option<DetachmentSequence>,
    detach_finished: bool,
    pub camera_target: Option<Vec2>,
    pub events: Vec<EventRecord>,
    pub telemetry: Vec<TelemetryRecord>,
    pub mode_trace: Vec<OperationMode>,
    pub holes: Vec<DrilledHole>,
    pub rejections: usize,
    pub last_rejection: Option<Rejection>,
    pub last_info: StepInfo,
    pub slip_total: f64,
    controller: FlightController,
    odometry: Odometry,
    cup_model: CupModel,
    mu: f64,
    rng: ChaCha8Rng,
    display_rng: ChaCha8Rng,
    bore: BoreTracker,
    bore_slip_start: f64,
    tick: u64,
    telemetry_every: u64,
    slipping: bool,
    slide_play: Vec2,
}

/// Wall point (right, up) the default mission starts in front of, m.
pub const MISSION_START_ON_WALL: [f64; 2] = [0.0, 1.5];
/// Gap between the cups and the wall at the start of a mission, m.
pub const MISSION_START_GAP: f64 = 0.5;

/// Hover in front of the wall, cups `MISSION_START_GAP` from it.
pub fn mission_start(params: &ParamSet) -> SimState {
    let wall = &params.environment.wall;
    let on_wall = wall.from_wall_coords(&Vec2::from(MISSION_START_ON_WALL));
    let position = on_wall + wall.normal * (params.robot.attachment_offset[0] + MISSION_START_GAP);
    hover_state(&params.robot, &params.environment, position)
}

/// Body hovering at `position` with the cups facing the wall.
pub fn hover_state(params: &RobotParams, env: &Environment, position: Vec3) -> SimState {
    let dynamics = Dynamics::new(params.clone(), env.clone());
    let w = dynamics.rotors.hover_rpm(dynamics.mass() + params.tether_linear_density * env.tether_length, env.gravity);
    SimState {
        body_pose: Pose::new(position, UnitQuaternion::from_axis_angle(&Vec3::z_axis(), env.wall_heading())),
        body_twist: Twist::default(),
        hinge_theta: 0.0,
        hinge_slide: 0.0,
        hinge_rates: [0.0; 2],
        rotor_speeds: [w; 4],
        cup_pressures: [0.0; 2],
        attached: [false; 2],
        gantry_pos: params.gantry_flight_position(),
        drill_depth: 0.0,
        time: 0.0,
        anchor: None,
    }
}

impl Simulator {
    pub fn new(params: &ParamSet, config: SimConfig, initial: SimState) -> Result<Self, SimError> {
        params.robot.validate()?;
        params.environment.validate()?;
        initial.validate(&params.robot)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut dynamics = Dynamics::new(params.robot.clone(), params.environment.clone());
        if config.thrust_scale_sigma > 0.0 {
            let n = Normal::new(1.0, config.thrust_scale_sigma).expect("positive sigma");
            for s in dynamics.rotors.thrust_scale.iter_mut() {
                *s = n.sample(&mut rng);
            }
        }
        let slide_play = if config.slide_jitter_sigma > 0.0 {
            let n = Normal::new(0.0, config.slide_jitter_sigma).expect("positive sigma");
            Vec2::new(n.sample(&mut rng), n.sample(&mut rng))
        } else {
            Vec2::zeros()
        };
        let robot = &params.robot;
        let env = &params.environment;
        let mass = dynamics.mass() + robot.tether_linear_density * env.tether_length;
        let controller = FlightController::new(config.gains, dynamics.rotors.clone(), mass, env.gravity, Vec3::from(robot.inertia))?;
        let mut initial = initial;
        let hovering = initial.anchor.is_none() && initial.rotor_speeds.iter().all(|w| *w > 0.0 && *w == initial.rotor_speeds[0]);
        if config.thrust_scale_sigma > 0.0 && hovering {
            // a robot that has been hovering is already trimmed for its rotors
            let trimmed = Mixer::new(&dynamics.rotors)?.speeds(mass * env.gravity, &Vec3::zeros());
            initial.rotor_speeds = trimmed;
        }
        let odometry = Odometry::new(config.odometry, config.seed.wrapping_add(1));
        let tool = match config.tool {
            ToolKind::HammerDrill => ToolSpec::hammer_drill(&env.material),
            ToolKind::ImpactWrench => ToolSpec::impact_wrench(&env.material),
        };
        let telemetry_every = ((config.telemetry_period / config.dt).round() as u64).max(1);
        let gantry = GantryState::new(robot, initial.gantry_pos);
        let mut sim = Self {
            cup_model: CupModel::from_params(robot),
            mu: robot.friction_mu(env.ambient_temperature),
            dynamics,
            state: initial,
            mode: OperationMode::Flight,
            hinge: HingeLockState::Locked,
            cups: [SuctionCupState::default(); 2],
            gantry,
            tool,
            drill_on: false,
            actuation: Actuation::Flight,
            flight_ref: FlightReference::new(Vec3::zeros(), env.wall_heading()),
            ramp_complete: false,
            detach: None,
            detach_finished: false,
            camera_target: None,
            events: Vec::new(),
            telemetry: Vec::new(),
            mode_trace: vec![OperationMode::Flight],
            holes: Vec::new(),
            rejections: 0,
            last_rejection: None,
            last_info: StepInfo::default(),
            slip_total: 0.0,
            controller,
            odometry,
            display_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_cafe),
            rng,
            bore: BoreTracker::default(),
            bore_slip_start: 0.0,
            tick: 0,
            telemetry_every,
            slipping: false,
            slide_play,
            config,
        };
        for (cup, p) in sim.cups.iter_mut().zip(sim.state.cup_pressures) {
            cup.pressure_deficit = p;
        }
        Ok(sim)
    }

    pub fn params(&self) -> &RobotParams {
        &self.dynamics.params
    }

    pub fn env(&self) -> &Environment {
        &self.dynamics.env
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn perched(&self) -> bool {
        self.state.anchor.is_some() && self.state.both_attached()
    }

    pub fn regime(&self) -> ConstraintRegime {
        let base = if self.perched() {
            ConstraintRegime::perched(self.hinge)
        } else {
            ConstraintRegime::free_flight()
        };
        base.with_drill(self.drill_on)
    }

    pub fn weight(&self) -> f64 {
        (self.dynamics.mass() + self.params().tether_linear_density * self.env().tether_length) * self.env().gravity
    }

    pub fn hover_rpm(&self) -> f64 {
        self.dynamics.rotors.hover_rpm(self.weight() / self.env().gravity, self.env().gravity)
    }

    /// Vertical rotor thrust over weight.
    pub fn thrust_ratio(&self) -> f64 {
        let f = rotor_wrench(&self.state.rotor_speeds, &self.dynamics.rotors).force;
        (self.state.body_pose.orientation * f).z / self.weight()
    }

    /// Tool table rotated fully against its stop, facing the wall.
    pub fn tilted(&self) -> bool {
        self.state.hinge_theta >= std::f64::consts::FRAC_PI_2
    }

    pub fn rotors_idle(&self) -> bool {
        self.view().rotors_idle()
    }

    pub fn detachment_done(&self) -> bool {
        self.detach_finished
    }

    pub fn view(&self) -> MissionView {
        MissionView {
            hinge: self.hinge,
            theta: self.state.hinge_theta,
            slide: self.state.hinge_slide,
            contact: [self.cups[0].contact, self.cups[1].contact],
            attached: self.state.attached,
            pumps_on: self.cups.iter().all(|c| c.pump_on),
            drill_on: self.drill_on,
            rotor_speeds: self.state.rotor_speeds,
            hover_rpm: self.hover_rpm(),
            thrust_ratio: self.thrust_ratio(),
            gantry_pos: self.state.gantry_pos,
            gantry_arrived: self.gantry.arrived(),
            gantry_flight: self.params().gantry_flight_position(),
            ramp_complete: self.ramp_complete,
            detachment_done: self.detach_finished,
            lock_tolerance: LockTolerance::from_params(self.params()),
        }
    }

    fn log(&mut self, kind: EventKind, detail: impl Into<String>) {
        if self.config.record_events {
            self.events.push(EventRecord {
                time: self.state.time,
                kind,
                detail: detail.into(),
            });
        }
    }

    /// Submit an operator command. Accepted commands take effect on the next
    /// tick.
    pub fn command(&mut self, cmd: &OperatorCommand) -> Result<(), Rejection> {
        let result = handle(self.mode, cmd, &self.view()).and_then(|(mode, actions)| {
            for a in &actions {
                if let Action::GantryTarget { x, y } = a {
                    if !self.gantry.contains(&Vec2::new(*x, *y)) {
                        return Err(Rejection {
                            command: cmd.to_string(),
                            mode: self.mode,
                            reason: format!("gantry target ({x:.4}, {y:.4}) outside the workspace"),
                        });
                    }
                }
            }
            Ok((mode, actions))
        });
        match result {
            Ok((mode, actions)) => {
                self.log(EventKind::Accepted, cmd.to_string());
                if mode != self.mode {
                    self.log(EventKind::ModeChange, format!("{} -> {}", self.mode, mode));
                    self.mode = mode;
                    self.mode_trace.push(mode);
                }
                for a in actions {
                    self.apply(a);
                }
                Ok(())
            }
            Err(r) => {
                self.rejections += 1;
                self.log(EventKind::Rejected, r.to_string());
                self.last_rejection = Some(r.clone());
                Err(r)
            }
        }
    }

    fn apply(&mut self, action: Action) {
        let t = self.state.time;
        match action {
            Action::FlightRef { velocity, heading } => {
                self.flight_ref = FlightReference::new(Vec3::from(velocity), heading);
            }
            Action::FlightControl => {
                if self.actuation != Actuation::Flight {
                    self.controller.reset();
                    self.actuation = Actuation::Flight;
                }
            }
            Action::RampDown => {
                self.ramp_complete = false;
                self.actuation = Actuation::Ramp {
                    from: self.state.rotor_speeds,
                    to: [0.0; 4],
                    start: t,
                    duration: self.config.ramp_duration,
                    then_flight: false,
                };
            }
            Action::RampUp => {
                self.ramp_complete = false;
                let w = self.hover_rpm();
                self.flight_ref = FlightReference::new(Vec3::zeros(), self.env().wall_heading());
                self.actuation = Actuation::Ramp {
                    from: self.state.rotor_speeds,
                    to: [w; 4],
                    start: t,
                    duration: self.config.ramp_duration,
                    then_flight: true,
                };
            }
            Action::Rotation { throttle } => {
                self.actuation = if throttle == 0.0 { Actuation::Idle } else { Actuation::Rotation { throttle } };
            }
            Action::Feed { throttle, direction } => {
                self.actuation = if throttle == 0.0 {
                    Actuation::Idle
                } else {
                    Actuation::Feed { throttle, direction }
                };
            }
            Action::SetPumps { on } => {
                for c in &mut self.cups {
                    c.pump_on = on;
                }
                self.log(if on { EventKind::PumpsOn } else { EventKind::PumpsOff }, "");
            }
            Action::SetValves { open } => {
                for c in &mut self.cups {
                    c.valve_open = open;
                }
                self.log(if open { EventKind::ValvesOpen } else { EventKind::ValvesClosed }, "");
            }
            Action::GantryTarget { x, y } => {
                self.gantry
                    .set_target(Vec2::new(x, y))
                    .expect("target checked before the command was accepted");
            }
            Action::SetTool { on } => {
                if on && !self.drill_on {
                    self.bore = BoreTracker::default();
                    self.bore_slip_start = self.slip_total;
                    self.log(EventKind::ToolOn, "");
                }
                if !on && self.drill_on {
                    self.finish_hole();
                    self.log(EventKind::ToolOff, "");
                }
                self.drill_on = on;
            }
            Action::SetHinge { state } => {
                if state != self.hinge {
                    self.log(EventKind::HingeLock, format!("{} -> {}", self.hinge, state));
                }
                self.hinge = state;
                if !state.theta_free() {
                    self.state.hinge_rates[0] = 0.0;
                }
                if !state.slide_free() {
                    self.state.hinge_rates[1] = 0.0;
                }
            }
            Action::StartDetachment => {
                self.detach = Some(DetachmentSequence::new(self.config.detach));
                self.detach_finished = false;
            }
            Action::ResetEstimator => self.odometry.reset(),
        }
    }

    fn finish_hole(&mut self) {
        if let Some(centre) = self.bore.centroid() {
            let hole = DrilledHole {
                centre,
                depth: self.state.drill_depth,
                slip: self.slip_total - self.bore_slip_start,
                time: self.state.time,
            };
            self.log(
                EventKind::Hole,
                format!("({:.2}, {:.2}) mm depth {:.1} mm", centre.x * 1e3, centre.y * 1e3, hole.depth * 1e3),
            );
            self.holes.push(hole);
        }
        self.bore = BoreTracker::default();
    }

    /// Tooltip in wall coordinates (right, up), m.
    pub fn tool_on_wall(&self) -> Vec2 {
        let tip = frame_pose(&self.state, self.params(), Frame::Tool).translation.vector;
        self.env().wall.wall_coords(&tip)
    }

    /// Gantry displacement that moves the tooltip by `delta` in wall
    /// coordinates at the current attitude.
    pub fn wall_to_gantry(&self, delta: &Vec2) -> Vec2 {
        let wall = &self.env().wall;
        let d_w = wall.right() * delta.x + wall.up() * delta.y;
        let d_b = self.state.body_pose.orientation.inverse() * d_w;
        Vec2::new(d_b.x, d_b.y)
    }

    /// Laser cross as the operator camera sees it, if a target is set.
    pub fn observe_laser(&mut self) -> Option<Vec2> {
        let target = self.camera_target?;
        observe_laser_cross(&(self.tool_on_wall() - target), &self.config.sensing, &mut self.rng)
    }

    /// Tool deflection in wall coordinates from rotor torque flexing the
    /// table.
    fn tool_deflection(&self, info: &StepInfo) -> Vec2 {
        let Some(anchor) = self.state.anchor.filter(|_| self.config.table_deflection) else {
            return Vec2::zeros();
        };
        let rot = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), self.state.hinge_theta);
        let tau = rot * info.wrench.torque;
        let lever = self.params().tooltip_offset().norm();
        let c = self.params().hinge_compliance * lever;
        let d_a = Vec3::new(0.0, c * tau.z, -c * tau.y);
        let d_w = anchor.orientation * d_a;
        let wall = &self.env().wall;
        Vec2::new(d_w.dot(&wall.right()), d_w.dot(&wall.up()))
    }

    fn rotor_commands(&mut self, regime: &ConstraintRegime) -> [f64; 4] {
        let limit = self.params().rotor_speed_limit;
        let dt = self.config.dt;
        let t = self.state.time;
        match self.actuation {
            Actuation::Flight => {
                let odo = self.odometry.measure(&self.state, dt);
                self.controller.update(&odo, &self.flight_ref, dt).speeds
            }
            Actuation::Ramp {
                from,
                to,
                start,
                duration,
                then_flight,
            } => {
                let s = ((t - start) / duration).clamp(0.0, 1.0);
                let mut out = [0.0; 4];
                for i in 0..4 {
                    out[i] = from[i] + (to[i] - from[i]) * s;
                }
                if s >= 1.0 {
                    if then_flight {
                        self.controller.reset();
                        self.actuation = Actuation::Flight;
                        self.ramp_complete = true;
                        self.log(EventKind::ThrustRampComplete, "");
                    } else {
                        self.actuation = Actuation::Idle;
                        self.log(EventKind::RotorsRampedDown, "");
                    }
                }
                out
            }
            Actuation::Rotation { throttle } => {
                let r = if throttle > 0.0 {
                    rotation_control(throttle, regime, limit)
                } else {
                    rotate_back_control(-throttle, regime, limit)
                };
                self.or_idle(r)
            }
            Actuation::Feed { throttle, direction } => {
                let r = feed_control(throttle, direction, regime, limit);
                self.or_idle(r)
            }
            Actuation::Idle => [0.0; 4],
        }
    }

    fn or_idle(&mut self, r: Result<[f64; 4], ControlError>) -> [f64; 4] {
        r.unwrap_or_else(|e| {
            self.log(EventKind::ActuationStopped, e.to_string());
            self.actuation = Actuation::Idle;
            [0.0; 4]
        })
    }

    fn run_detachment(&mut self) {
        let Some(mut seq) = self.detach.take() else { return };
        let v = DetachView {
            time: self.state.time,
            theta: self.state.hinge_theta,
            slide: self.state.hinge_slide,
            hinge: self.hinge,
            gantry_pos: self.gantry.drive,
            gantry_flight: self.params().gantry_flight_position(),
            ramp_complete: self.ramp_complete,
            attached: self.state.attached,
            drill_on: self.drill_on,
        };
        let before = seq.log.len();
        let cmds = seq.next_commands(&v);
        for (_, phase) in seq.log[before..].iter() {
            self.log(EventKind::DetachPhase, phase.to_string());
        }
        match cmds {
            Ok(cmds) => {
                for c in cmds {
                    if let Err(r) = self.command(&c) {
                        let abort = seq.abort(r.reason);
                        self.log(EventKind::DetachAbort, abort.to_string());
                        return;
                    }
                }
                if seq.done() {
                    self.detach_finished = true;
                } else {
                    self.detach = Some(seq);
                }
            }
            Err(abort) => self.log(EventKind::DetachAbort, abort.to_string()),
        }
    }

    /// Advance one tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        let dt = self.config.dt;
        self.run_detachment();

        let regime = self.regime();
        let cmds = self.rotor_commands(&regime);
        let (mut next, info) = self.dynamics.step(&self.state, cmds, &regime, dt)?;

        // gantry
        if !self.gantry.arrived() {
            self.gantry = gantry_step(&self.gantry, dt);
        }
        next.gantry_pos = self.gantry.position;

        // cutting
        if info.cutting {
            next.drill_depth = drill_step(info.tool_contact_force, &self.tool, next.drill_depth, dt);
        }

        self.state = next;
        if self.perched() {
            self.dynamics.sync_body_from_hinge(&mut self.state);
        }
        if self.drill_on && info.cutting {
            let p = self.tool_on_wall() + self.tool_deflection(&info) + self.slide_play;
            self.bore.record(&p);
        }

        self.update_cups(dt, &info);
        self.last_info = info;
        self.tick += 1;
        if self.config.record_telemetry && self.tick.is_multiple_of(self.telemetry_every) {
            let rec = self.telemetry_record();
            self.telemetry.push(rec);
        }
        Ok(())
    }

    fn update_cups(&mut self, dt: f64, info: &StepInfo) {
        let was_perched = self.state.anchor.is_some();
        let (gaps, approach) = if was_perched {
            ([0.0; 2], 0.0)
        } else {
            let a = frame_pose(&self.state, self.params(), Frame::Attachment);
            let cups = self.params().cup_positions();
            let wall = &self.env().wall;
            let g = [0, 1].map(|i| wall.distance(&a.transform_point(&cups[i].into()).coords).max(0.0));
            (g, -self.state.body_twist.linear.dot(&wall.normal))
        };
        let had_contact = [self.cups[0].contact, self.cups[1].contact];
        self.cups = update_suction(self.cups, gaps, approach, dt, &self.cup_model);
        for i in 0..2 {
            self.state.cup_pressures[i] = self.cups[i].pressure_deficit;
            self.state.attached[i] = self.cups[i].attached;
        }
        if !had_contact.iter().all(|c| *c) && self.cups.iter().all(|c| c.contact) {
            self.log(EventKind::Contact, "");
        }

        if !was_perched && self.state.both_attached() {
            self.snap_to_wall();
            return;
        }
        if was_perched && !self.state.both_attached() {
            self.state.anchor = None;
            if self.hinge != HingeLockState::Locked {
                self.hinge = HingeLockState::Locked;
                self.log(EventKind::PullOff, "hinge not locked at separation");
            }
            self.state.hinge_rates = [0.0; 2];
            self.log(EventKind::Separation, "");
            return;
        }
        if was_perched {
            self.apply_slip(dt, &info.attachment_load);
        }
    }

    fn snap_to_wall(&mut self) {
        let env = self.env().clone();
        let a = frame_pose(&self.state, self.params(), Frame::Attachment);
        let origin = a.translation.vector;
        let on_wall = origin - env.wall.normal * env.wall.distance(&origin);
        self.state.anchor = Some(Pose::new(on_wall, env.perch_orientation()));
        self.state.body_twist = Twist::default();
        self.state.hinge_rates = [0.0; 2];
        self.dynamics.sync_body_from_hinge(&mut self.state);
        let w = env.wall.wall_coords(&on_wall);
        self.log(EventKind::Attached, format!("({:.1}, {:.1}) mm", w.x * 1e3, w.y * 1e3));
    }

    fn apply_slip(&mut self, dt: f64, load: &Vec3) {
        let Ok(hold) = holding_wrench(&self.cups, self.mu, load, &self.cup_model) else {
            return;
        };
        if hold.pull_off {
            for c in &mut self.cups {
                c.attached = false;
                c.contact = false;
                c.pressure_deficit = 0.0;
            }
            self.state.attached = [false; 2];
            self.state.cup_pressures = [0.0; 2];
            self.log(EventKind::PullOff, format!("load {:.1} N", -load.x));
            return;
        }
        let v = slip_speed(&hold, self.mu, self.params().slip_damping);
        if v > 0.0 && hold.shear > 0.0 {
            if !self.slipping {
                self.log(EventKind::SlipStart, format!("shear {:.1} N normal {:.1} N", hold.shear, hold.normal));
            }
            let dir = Vec3::new(0.0, load.y, load.z) / hold.shear;
            if let Some(anchor) = self.state.anchor.as_mut() {
                anchor.position += anchor.orientation * dir * v * dt;
            }
            for c in &mut self.cups {
                c.slip_accum += v * dt;
            }
            self.slip_total += v * dt;
            self.dynamics.sync_body_from_hinge(&mut self.state);
        }
        self.slipping = v > 0.0;
    }

    pub fn telemetry_record(&mut self) -> TelemetryRecord {
        let s = &self.state;
        let q = s.body_pose.orientation;
        let laser = match self.camera_target {
            Some(target) if self.perched() => observe_laser_cross(&(self.tool_on_wall() - target), &self.config.sensing, &mut self.display_rng),
            _ => None,
        };
        let s = &self.state;
        TelemetryRecord {
            time: s.time,
            mode: self.mode,
            hinge: self.hinge,
            theta_deg: s.hinge_theta.to_degrees(),
            slide_mm: s.hinge_slide * 1e3,
            position: s.body_pose.position.into(),
            orientation: [q.w, q.i, q.j, q.k],
            velocity: s.body_twist.linear.into(),
            rotor_rpm: s.rotor_speeds,
            cup_pressure: s.cup_pressures,
            attached: s.attached,
            pumps_on: self.cups.iter().all(|c| c.pump_on),
            valves_open: self.cups.iter().any(|c| c.valve_open),
            feed_force_n: self.last_info.tool_contact_force,
            power_w: power_draw(&s.rotor_speeds, &self.dynamics.rotors),
            gantry_mm: [s.gantry_pos.x * 1e3, s.gantry_pos.y * 1e3],
            drill_on: self.drill_on,
            drill_depth_mm: s.drill_depth * 1e3,
            laser_px: laser.map(|p| [p.x, p.y]),
            slip_mm: self.slip_total * 1e3,
            last_rejection: self.last_rejection.as_ref().map(|r| r.to_string()),
        }
    }

    /// Step until `t` (inclusive of the last partial tick).
    pub fn run_until(&mut self, t: f64) -> Result<(), SimError> {
        while self.state.time < t - 1e-12 {
            self.step()?;
        }
        Ok(())
    }

    /// Step until `pred` holds or `timeout` seconds pass. Returns whether the
    /// predicate was met.
    pub fn run_while<F: FnMut(&Simulator) -> bool>(&mut self, timeout: f64, mut until: F) -> Result<bool, SimError> {
        let end = self.state.time + timeout;
        while self.state.time < end {
            if until(self) {
                return Ok(true);
            }
            self.step()?;
        }
        Ok(until(self))
    }

    /// Hinge freedoms match the lock set of the current mode.
    pub fn locks_consistent(&self) -> bool {
        let locks = enforce_locks(self.mode);
        locks.admits(self.hinge) && (self.mode == OperationMode::Detachment || locks.hinge_state() == self.hinge)
    }
}
