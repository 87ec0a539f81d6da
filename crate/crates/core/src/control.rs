//! Flight control, open-loop rotation and feed laws, and the scripted
//! detachment sequence.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attachment::HingeLockState;
use crate::command::{FeedDirection, OperatorCommand, MAX_VELOCITY_REF};
use crate::dynamics::{ConstraintRegime, Regime};
use crate::model::{SimState, Vec2, Vec3};
use crate::rotor::{RotorModel, Wrench};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ControlError {
    #[error("{law} not available: {reason}")]
    WrongRegime { law: &'static str, reason: &'static str },
    #[error("throttle {0} outside [0, 1]")]
    Throttle(f64),
    #[error("allocation matrix is singular")]
    SingularMixer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlightReference {
    /// m/s in the heading frame: x forward, y left, z up.
    pub velocity_ref: Vec3,
    pub heading_ref: f64,
}

impl FlightReference {
    pub fn new(velocity_ref: Vec3, heading_ref: f64) -> Self {
        let n = velocity_ref.norm();
        let velocity_ref = if n > MAX_VELOCITY_REF {
            velocity_ref * (MAX_VELOCITY_REF / n)
        } else {
            velocity_ref
        };
        Self {
            velocity_ref,
            heading_ref,
        }
    }

    pub fn velocity_world(&self) -> Vec3 {
        UnitQuaternion::from_axis_angle(&Vec3::z_axis(), self.heading_ref) * self.velocity_ref
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Velocity error (m/s) to acceleration (m/s^2).
    pub velocity: PdGains,
    /// Attitude error (rad) to body-rate setpoint (rad/s).
    pub attitude: PdGains,
    /// Body-rate error (rad/s) to angular acceleration (rad/s^2).
    pub rate: PdGains,
    /// Largest tilt the velocity loop may request, rad.
    pub max_tilt: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            velocity: PdGains { kp: 1.6, kd: 0.0 },
            attitude: PdGains { kp: 2.5, kd: 0.0 },
            rate: PdGains { kp: 6.0, kd: 0.0 },
            max_tilt: 20f64.to_radians(),
        }
    }
}

impl ControllerGains {
    pub fn zero() -> Self {
        let z = PdGains { kp: 0.0, kd: 0.0 };
        Self {
            velocity: z,
            attitude: z,
            rate: z,
            max_tilt: 20f64.to_radians(),
        }
    }
}

/// Maps `[thrust, tau_x, tau_y, tau_z]` to signed squared speeds and back.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixer {
    pub allocation: Matrix4<f64>,
    pub inverse: Matrix4<f64>,
}

impl Mixer {
    pub fn new(rotors: &RotorModel) -> Result<Self, ControlError> {
        let mut a = Matrix4::zeros();
        for i in 0..4 {
            let r = rotors.positions[i];
            let k = rotors.k_f * rotors.thrust_scale[i];
            a[(0, i)] = k;
            a[(1, i)] = k * r.y;
            a[(2, i)] = -k * r.x;
            a[(3, i)] = -rotors.spin_directions[i] * rotors.k_tau;
        }
        let inverse = a.try_inverse().ok_or(ControlError::SingularMixer)?;
        Ok(Self { allocation: a, inverse })
    }

    /// Signed speeds realizing the requested wrench; negative squares are
    /// returned as negative speeds.
    pub fn speeds(&self, thrust: f64, torque: &Vec3) -> [f64; 4] {
        let u = self.inverse * Vector4::new(thrust, torque.x, torque.y, torque.z);
        [0, 1, 2, 3].map(|i| u[i].signum() * u[i].abs().sqrt())
    }

    /// Wrench `[thrust, tau_x, tau_y, tau_z]` realized by the given speeds.
    pub fn wrench(&self, speeds: &[f64; 4]) -> Vector4<f64> {
        self.allocation * Vector4::from(speeds.map(|w| w * w.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdometryNoise {
    pub enabled: bool,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    /// Bias random-walk intensity, m/sqrt(s).
    pub bias_walk: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            enabled: false,
            sigma_pos: 0.02,
            sigma_vel: 0.05,
            bias_walk: 0.005,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryReading {
    pub position: Vec3,
    pub velocity: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub angular: Vec3,
}

/// Ground truth with optional white noise and a drifting position bias.
#[derive(Clone, Debug)]
pub struct Odometry {
    pub noise: OdometryNoise,
    pub bias: Vec3,
    rng: ChaCha8Rng,
}

impl Odometry {
    pub fn new(noise: OdometryNoise, seed: u64) -> Self {
        Self {
            noise,
            bias: Vec3::zeros(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Restart of the estimator before take-off: the accumulated drift is
    /// discarded.
    pub fn reset(&mut self) {
        self.bias = Vec3::zeros();
    }

    pub fn measure(&mut self, state: &SimState, dt: f64) -> OdometryReading {
        let mut r = OdometryReading {
            position: state.body_pose.position,
            velocity: state.body_twist.linear,
            orientation: state.body_pose.orientation,
            angular: state.body_twist.angular,
        };
        if self.noise.enabled {
            let mut draw = |sigma: f64| {
                let n = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
                Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng))
            };
            let walk = draw(self.noise.bias_walk * dt.sqrt());
            let pos_noise = draw(self.noise.sigma_pos);
            let vel_noise = draw(self.noise.sigma_vel);
            self.bias += walk;
            r.position += self.bias + pos_noise;
            r.velocity += vel_noise;
        }
        r
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub speeds: [f64; 4],
    pub saturated: bool,
    /// Requested thrust and torque before saturation.
    pub wrench: Wrench,
}

#[derive(Clone, Debug)]
pub struct FlightController {
    pub gains: ControllerGains,
    pub mixer: Mixer,
    pub rotors: RotorModel,
    pub mass: f64,
    pub gravity: f64,
    pub inertia: Vec3,
    prev_vel_err: Option<Vec3>,
    prev_att_err: Option<Vec3>,
    prev_rate_err: Option<Vec3>,
}

fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

impl FlightController {
    pub fn new(gains: ControllerGains, rotors: RotorModel, mass: f64, gravity: f64, inertia: Vec3) -> Result<Self, ControlError> {
        Ok(Self {
            gains,
            mixer: Mixer::new(&rotors)?,
            rotors,
            mass,
            gravity,
            inertia,
            prev_vel_err: None,
            prev_att_err: None,
            prev_rate_err: None,
        })
    }

    pub fn reset(&mut self) {
        self.prev_vel_err = None;
        self.prev_att_err = None;
        self.prev_rate_err = None;
    }

    fn derivative(prev: &mut Option<Vec3>, err: Vec3, dt: f64) -> Vec3 {
        let d = prev.map(|p| (err - p) / dt).unwrap_or_else(Vec3::zeros);
        *prev = Some(err);
        d
    }

    /// One tick of the cascade: velocity to tilted thrust, attitude to body
    /// rate, body rate to torque, then mixing into rotor speeds.
    pub fn update(&mut self, odo: &OdometryReading, reference: &FlightReference, dt: f64) -> ControlOutput {
        let g = &self.gains;
        let e_v = reference.velocity_world() - odo.velocity;
        let de_v = Self::derivative(&mut self.prev_vel_err, e_v, dt);
        let mut a_des = g.velocity.kp * e_v + g.velocity.kd * de_v;

        // keep the thrust direction inside the tilt cone
        let horiz = a_des.xy().norm();
        let vert = a_des.z + self.gravity;
        let max_h = vert.max(0.0) * g.max_tilt.tan();
        if horiz > max_h && horiz > 0.0 {
            let s = max_h / horiz;
            a_des.x *= s;
            a_des.y *= s;
        }
        let f_des = self.mass * Vec3::new(a_des.x, a_des.y, a_des.z + self.gravity);

        let z_d = if f_des.norm() > 1e-9 { f_des.normalize() } else { Vec3::z() };
        let x_c = Vec3::new(reference.heading_ref.cos(), reference.heading_ref.sin(), 0.0);
        let y_d = z_d.cross(&x_c).normalize();
        let x_d = y_d.cross(&z_d);
        let r_d = Matrix3::from_columns(&[x_d, y_d, z_d]);
        let r = *odo.orientation.to_rotation_matrix().matrix();
        let e_r = 0.5 * vee(&(r_d.transpose() * r - r.transpose() * r_d));
        let de_r = Self::derivative(&mut self.prev_att_err, e_r, dt);
        let w_des = -g.attitude.kp * e_r - g.attitude.kd * de_r;

        let e_w = w_des - odo.angular;
        let de_w = Self::derivative(&mut self.prev_rate_err, e_w, dt);
        let w = odo.angular;
        let torque = self.inertia.component_mul(&(g.rate.kp * e_w + g.rate.kd * de_w)) + w.cross(&self.inertia.component_mul(&w));
        let thrust = f_des.dot(&(r * Vec3::z())).max(0.0);

        let raw = self.mixer.speeds(thrust, &torque);
        let clamped = raw.map(|x| x.max(0.0));
        let (speeds, hit) = self.rotors.saturate(clamped, false);
        ControlOutput {
            speeds,
            saturated: hit || raw.iter().any(|x| *x < 0.0),
            wrench: Wrench {
                force: Vec3::new(0.0, 0.0, thrust),
                torque,
            },
        }
    }
}

fn check_throttle(t: f64) -> Result<(), ControlError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(ControlError::Throttle(t))
    }
}

/// Tilt the tool table towards the wall with the front pair spinning
/// backwards. Open loop: throttle maps linearly to speed.
pub fn rotation_control(throttle: f64, regime: &ConstraintRegime, speed_limit: f64) -> Result<[f64; 4], ControlError> {
    check_throttle(throttle)?;
    if regime.regime != Regime::Perched {
        return Err(ControlError::WrongRegime {
            law: "rotation",
            reason: "robot is not perched",
        });
    }
    if regime.hinge == HingeLockState::RotationLocked {
        return Err(ControlError::WrongRegime {
            law: "rotation",
            reason: "hinge rotation is locked",
        });
    }
    let w = -throttle * speed_limit;
    Ok([w, w, 0.0, 0.0])
}

/// Tilt the tool table back to the flight position with the front pair
/// spinning forwards.
pub fn rotate_back_control(throttle: f64, regime: &ConstraintRegime, speed_limit: f64) -> Result<[f64; 4], ControlError> {
    rotation_control(throttle, regime, speed_limit).map(|s| s.map(|w| -w))
}

/// Equal speeds on all four rotors pushing the tool into (or out of) the
/// wall along the slide.
pub fn feed_control(throttle: f64, direction: FeedDirection, regime: &ConstraintRegime, speed_limit: f64) -> Result<[f64; 4], ControlError> {
    check_throttle(throttle)?;
    if regime.regime != Regime::Perched || regime.hinge != HingeLockState::RotationLocked {
        return Err(ControlError::WrongRegime {
            law: "feed",
            reason: "requires a perched robot with the hinge rotation-locked",
        });
    }
    let sign = match direction {
        FeedDirection::Advance => 1.0,
        FeedDirection::Retract => -1.0,
    };
    Ok([sign * throttle * speed_limit; 4])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetachPhase {
    Retract,
    ReleasePins,
    RotateBack,
    LockHinge,
    GantryHome,
    RampUp,
    LeanAway,
    PumpsOff,
    ValvesOpen,
    Separate,
    Done,
}

impl std::fmt::Display for DetachPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| std::fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// What the detachment sequencer needs to see of the robot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetachView {
    pub time: f64,
    pub theta: f64,
    pub slide: f64,
    pub hinge: HingeLockState,
    pub gantry_pos: Vec2,
    pub gantry_flight: Vec2,
    pub ramp_complete: bool,
    pub attached: [bool; 2],
    pub drill_on: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetachConfig {
    pub retract_throttle: f64,
    pub rotate_throttle: f64,
    /// Speed away from the wall once hovering, m/s.
    pub lean_speed: f64,
    pub heading: f64,
    pub settle_before_pumps_off: f64,
    pub settle_before_valves: f64,
    /// Leave the valves shut; the cups then never release.
    pub open_valves: bool,
}

impl Default for DetachConfig {
    fn default() -> Self {
        Self {
            retract_throttle: 0.4,
            rotate_throttle: 0.3,
            lean_speed: 0.3,
            heading: std::f64::consts::PI,
            settle_before_pumps_off: 2.0,
            settle_before_valves: 2.0,
            open_valves: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("detachment aborted in phase {phase:?}: {reason}")]
pub struct DetachAbort {
    pub phase: DetachPhase,
    pub reason: String,
}

/// Step-by-step command source that takes the robot off the wall. Each phase
/// emits its command once, then waits for its completion condition.
#[derive(Clone, Debug)]
pub struct DetachmentSequence {
    pub config: DetachConfig,
    pub phase: DetachPhase,
    issued: bool,
    phase_start: f64,
    pub log: Vec<(f64, DetachPhase)>,
}

impl DetachmentSequence {
    pub fn new(config: DetachConfig) -> Self {
        Self {
            config,
            phase: DetachPhase::Retract,
            issued: false,
            phase_start: f64::NAN,
            log: Vec::new(),
        }
    }

    pub fn done(&self) -> bool {
        self.phase == DetachPhase::Done
    }

    fn advance(&mut self, t: f64) {
        self.phase = match self.phase {
            DetachPhase::Retract => DetachPhase::ReleasePins,
            DetachPhase::ReleasePins => DetachPhase::RotateBack,
            DetachPhase::RotateBack => DetachPhase::LockHinge,
            DetachPhase::LockHinge => DetachPhase::GantryHome,
            DetachPhase::GantryHome => DetachPhase::RampUp,
            DetachPhase::RampUp => DetachPhase::LeanAway,
            DetachPhase::LeanAway => DetachPhase::PumpsOff,
            DetachPhase::PumpsOff => DetachPhase::ValvesOpen,
            DetachPhase::ValvesOpen => DetachPhase::Separate,
            DetachPhase::Separate | DetachPhase::Done => DetachPhase::Done,
        };
        self.issued = false;
        self.phase_start = t;
    }

    /// Report a rejected command; the sequence cannot continue.
    pub fn abort(&self, reason: impl Into<String>) -> DetachAbort {
        DetachAbort {
            phase: self.phase,
            reason: reason.into(),
        }
    }

    /// Next commands to send, if any. Phases whose completion condition is
    /// already met are passed through within the same call.
    pub fn next_commands(&mut self, v: &DetachView) -> Result<Vec<OperatorCommand>, DetachAbort> {
        let mut out = Vec::new();
        if self.phase_start.is_nan() {
            self.phase_start = v.time;
        }
        if v.drill_on {
            return Err(self.abort("drill still running"));
        }
        loop {
            if self.phase == DetachPhase::Done {
                return Ok(out);
            }
            if !self.issued {
                self.issued = true;
                self.log.push((v.time, self.phase));
                if let Some(c) = self.command_for_phase(v) {
                    out.push(c);
                }
            }
            if !self.complete(v) {
                return Ok(out);
            }
            if let Some(c) = self.command_after_phase() {
                out.push(c);
            }
            self.advance(v.time);
        }
    }

    fn command_for_phase(&self, v: &DetachView) -> Option<OperatorCommand> {
        let c = &self.config;
        Some(match self.phase {
            DetachPhase::Retract => OperatorCommand::FeedThrottle {
                value: c.retract_throttle,
                direction: FeedDirection::Retract,
            },
            DetachPhase::ReleasePins => OperatorCommand::HingeLock {
                state: HingeLockState::Released,
            },
            DetachPhase::RotateBack => OperatorCommand::RotationThrottle {
                value: -c.rotate_throttle,
            },
            DetachPhase::LockHinge => OperatorCommand::HingeLock {
                state: HingeLockState::Locked,
            },
            DetachPhase::GantryHome => OperatorCommand::GantryTarget {
                x: v.gantry_flight.x,
                y: v.gantry_flight.y,
            },
            DetachPhase::RampUp => OperatorCommand::RampUpRotors,
            DetachPhase::LeanAway => OperatorCommand::SetFlightRef {
                velocity: [-c.lean_speed, 0.0, 0.0],
                heading: c.heading,
            },
            DetachPhase::PumpsOff => OperatorCommand::Pumps { on: false },
            DetachPhase::ValvesOpen if !c.open_valves => return None,
            DetachPhase::ValvesOpen => OperatorCommand::Valves { open: true },
            DetachPhase::Separate => return None,
            DetachPhase::Done => return None,
        })
    }

    fn command_after_phase(&self) -> Option<OperatorCommand> {
        match self.phase {
            DetachPhase::Retract => Some(OperatorCommand::FeedThrottle {
                value: 0.0,
                direction: FeedDirection::Retract,
            }),
            DetachPhase::RotateBack => Some(OperatorCommand::RotationThrottle { value: 0.0 }),
            _ => None,
        }
    }

    fn complete(&self, v: &DetachView) -> bool {
        let elapsed = v.time - self.phase_start;
        match self.phase {
            DetachPhase::Retract => v.slide <= 1e-3,
            DetachPhase::ReleasePins => v.hinge == HingeLockState::Released,
            DetachPhase::RotateBack => v.theta <= 1e-3,
            DetachPhase::LockHinge => v.hinge == HingeLockState::Locked,
            DetachPhase::GantryHome => (v.gantry_pos - v.gantry_flight).norm() <= 1e-4,
            DetachPhase::RampUp => v.ramp_complete,
            DetachPhase::LeanAway => elapsed >= self.config.settle_before_pumps_off,
            DetachPhase::PumpsOff => elapsed >= self.config.settle_before_valves,
            DetachPhase::ValvesOpen => v.attached.iter().all(|a| !a),
            DetachPhase::Separate | DetachPhase::Done => true,
        }
    }
}

/// Wall-normal component (in `A`) of the force produced by a front-pair
/// command, for the given hinge angle.
pub fn front_pair_normal_force(speeds: &[f64; 4], rotors: &RotorModel, theta: f64) -> f64 {
    let w = crate::rotor::rotor_wrench(speeds, rotors);
    (Rotation3::from_axis_angle(&Vec3::y_axis(), theta) * w.force).x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Dynamics, DEFAULT_DT};
    use crate::model::{Environment, Pose, RobotParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup() -> (Dynamics, FlightController) {
        let d = Dynamics::new(RobotParams::default(), Environment::default());
        let c = FlightController::new(
            ControllerGains::default(),
            d.rotors.clone(),
            d.mass(),
            d.env.gravity,
            Vec3::from(d.params.inertia),
        )
        .unwrap();
        (d, c)
    }

    fn fly(d: &Dynamics, c: &mut FlightController, s: &mut SimState, r: &FlightReference, t: f64) -> Vec<(f64, Vec3, [f64; 4])> {
        let mut odo = Odometry::new(OdometryNoise::default(), 0);
        let mut trace = Vec::new();
        let n = (t / DEFAULT_DT).round() as usize;
        for _ in 0..n {
            let out = c.update(&odo.measure(s, DEFAULT_DT), r, DEFAULT_DT);
            let (next, _) = d.step(s, out.speeds, &ConstraintRegime::free_flight(), DEFAULT_DT).unwrap();
            *s = next;
            trace.push((s.time, s.body_twist.linear, out.speeds));
        }
        trace
    }

    #[test]
    fn hover_settles_at_hover_speed() {
        let (d, mut c) = setup();
        let mut s = SimState {
            body_pose: Pose::new(Vec3::new(3.0, 0.0, 2.0), UnitQuaternion::identity()),
            ..SimState::default()
        };
        let trace = fly(&d, &mut c, &mut s, &FlightReference::default(), 8.0);
        let hover = d.rotors.hover_rpm(d.mass(), d.env.gravity);
        for w in trace.last().unwrap().2 {
            assert!((w - hover).abs() / hover < 0.01, "speed {w} vs hover {hover}");
        }
    }

    #[test]
    fn velocity_step_is_tracked_within_three_seconds() {
        let (d, mut c) = setup();
        let hover = d.rotors.hover_rpm(d.mass(), d.env.gravity);
        let mut s = SimState {
            body_pose: Pose::new(Vec3::new(3.0, 0.0, 2.0), UnitQuaternion::identity()),
            rotor_speeds: [hover; 4],
            ..SimState::default()
        };
        let r = FlightReference::new(Vec3::new(0.5, 0.0, 0.0), 0.0);
        let trace = fly(&d, &mut c, &mut s, &r, 3.0);
        let v = trace.last().unwrap().1;
        assert!((v - Vec3::new(0.5, 0.0, 0.0)).norm() < 0.05, "velocity {v}");
    }

    #[test]
    fn zero_gains_give_hover_feed_forward() {
        let (d, _) = setup();
        let mut c = FlightController::new(ControllerGains::zero(), d.rotors.clone(), d.mass(), d.env.gravity, Vec3::from(d.params.inertia)).unwrap();
        let s = SimState::default();
        let mut odo = Odometry::new(OdometryNoise::default(), 0);
        let r = FlightReference::new(Vec3::new(1.0, 0.0, 0.0), 0.3);
        let out = c.update(&odo.measure(&s, 1e-3), &r, 1e-3);
        let hover = d.rotors.hover_rpm(d.mass(), d.env.gravity);
        for w in out.speeds {
            assert_relative_eq!(w, hover, max_relative = 1e-12);
        }
    }

    #[test]
    fn mixer_inverts_allocation() {
        let (_, c) = setup();
        let prod = c.mixer.allocation * c.mixer.inverse;
        assert!((prod - Matrix4::identity()).abs().max() < 1e-9);
        let req = Vector4::new(100.0, 1.5, -2.0, 0.3);
        let speeds = c.mixer.speeds(req[0], &Vec3::new(req[1], req[2], req[3]));
        assert!((c.mixer.wrench(&speeds) - req).abs().max() < 1e-9);
    }

    #[test]
    fn mixer_wrench_matches_rotor_model() {
        let (d, c) = setup();
        let speeds = [2900.0, 3010.0, 2950.0, 3100.0];
        let w = crate::rotor::rotor_wrench(&speeds, &d.rotors);
        let m = c.mixer.wrench(&speeds);
        assert_relative_eq!(m[0], w.force.z, max_relative = 1e-12);
        assert_relative_eq!(Vec3::new(m[1], m[2], m[3]), w.torque, max_relative = 1e-9);
    }

    #[test]
    fn odometry_noise_is_seeded_and_reset_clears_bias() {
        let noise = OdometryNoise {
            enabled: true,
            ..Default::default()
        };
        let s = SimState::default();
        let mut a = Odometry::new(noise, 7);
        let mut b = Odometry::new(noise, 7);
        for _ in 0..100 {
            assert_eq!(a.measure(&s, 1e-3).position, b.measure(&s, 1e-3).position);
        }
        assert!(a.bias.norm() > 0.0);
        a.reset();
        assert_eq!(a.bias, Vec3::zeros());
        let off = Odometry::new(OdometryNoise::default(), 7).measure(&s, 1e-3);
        assert_eq!(off.position, s.body_pose.position);
    }

    #[test]
    fn rotation_law_examples() {
        let released = ConstraintRegime::perched(HingeLockState::Released);
        assert_eq!(rotation_control(0.0, &released, 3500.0).unwrap(), [0.0; 4]);
        assert_eq!(rotation_control(0.5, &released, 3500.0).unwrap(), [-1750.0, -1750.0, 0.0, 0.0]);
        assert_eq!(rotate_back_control(0.5, &released, 3500.0).unwrap(), [1750.0, 1750.0, 0.0, 0.0]);
        assert!(rotation_control(0.3, &ConstraintRegime::free_flight(), 3500.0).is_err());
        assert!(rotation_control(0.3, &ConstraintRegime::perched(HingeLockState::RotationLocked), 3500.0).is_err());
        assert!(rotation_control(1.3, &released, 3500.0).is_err());
        // allowed while locked; the hinge simply does not move
        assert!(rotation_control(0.3, &ConstraintRegime::perched(HingeLockState::Locked), 3500.0).is_ok());
    }

    #[test]
    fn feed_law_examples() {
        let rl = ConstraintRegime::perched(HingeLockState::RotationLocked);
        assert_eq!(feed_control(1.0, FeedDirection::Advance, &rl, 3500.0).unwrap(), [3500.0; 4]);
        assert_eq!(feed_control(0.5, FeedDirection::Retract, &rl, 3500.0).unwrap(), [-1750.0; 4]);
        assert!(feed_control(0.5, FeedDirection::Advance, &ConstraintRegime::perched(HingeLockState::Released), 3500.0).is_err());
    }

    #[test]
    fn sequence_emits_phases_in_order() {
        let mut seq = DetachmentSequence::new(DetachConfig::default());
        let mut v = DetachView {
            time: 0.0,
            theta: std::f64::consts::FRAC_PI_2,
            slide: 0.05,
            hinge: HingeLockState::RotationLocked,
            gantry_pos: Vec2::zeros(),
            gantry_flight: Vec2::new(-0.105, 0.0),
            ramp_complete: false,
            attached: [true; 2],
            drill_on: false,
        };
        let first = seq.next_commands(&v).unwrap();
        assert!(matches!(first[0], OperatorCommand::FeedThrottle { direction: FeedDirection::Retract, .. }));
        v.slide = 0.0;
        let c = seq.next_commands(&v).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1], OperatorCommand::HingeLock { state: HingeLockState::Released });
        v.drill_on = true;
        assert_eq!(seq.next_commands(&v).unwrap_err().phase, DetachPhase::ReleasePins);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rotation_never_pushes_into_the_wall(throttle in 0.0f64..=1.0, theta in 0.0f64..=std::f64::consts::FRAC_PI_2) {
            let (d, _) = setup();
            let speeds = rotation_control(throttle, &ConstraintRegime::perched(HingeLockState::Released), d.params.rotor_speed_limit).unwrap();
            prop_assert!(front_pair_normal_force(&speeds, &d.rotors, theta) <= 1e-12);
        }

        #[test]
        fn feed_force_is_independent_of_gantry(throttle in 0.3f64..=1.0, gx in -0.1f64..0.1, gy in -0.07f64..0.07) {
            let (d, _) = setup();
            let rl = ConstraintRegime::perched(HingeLockState::RotationLocked);
            let cmd = feed_control(throttle, FeedDirection::Advance, &rl, d.params.rotor_speed_limit).unwrap();
            let steady = |g: Vec2| {
                let anchor = Pose::new(Vec3::new(0.0, 0.0, 1.5), d.env.perch_orientation());
                let mut s = SimState {
                    hinge_theta: std::f64::consts::FRAC_PI_2,
                    attached: [true; 2],
                    anchor: Some(anchor),
                    gantry_pos: g,
                    rotor_speeds: cmd,
                    ..SimState::default()
                };
                d.sync_body_from_hinge(&mut s);
                let mut f = 0.0;
                for _ in 0..2000 {
                    let (n, info) = d.step(&s, cmd, &rl, DEFAULT_DT).unwrap();
                    s = n;
                    f = info.tool_contact_force;
                }
                f
            };
            let a = steady(Vec2::zeros());
            let b = steady(Vec2::new(gx, gy));
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
