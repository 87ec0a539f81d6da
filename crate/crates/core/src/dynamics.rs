//! Fixed-step rigid-body dynamics.
//!
//! Two regimes are integrated:
//!
//! * free flight: a single rigid body driven by the rotor wrench, gravity and
//!   the tether weight;
//! * perched: the attachment frame is fixed to the wall and the body moves only
//!   through the hinge freedoms left open by the lock state (`theta` and/or
//!   `slide`).
//!
//! Rotor speeds follow the commands through a first-order lag.

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2};
use serde::{Deserialize, Serialize};

use crate::attachment::HingeLockState;
use crate::model::{hinge_transform, Environment, ModelError, Pose, RobotParams, SimState, Vec3};
use crate::rotor::{rotor_wrench, RotorModel, Wrench};

pub const DEFAULT_DT: f64 = 1e-3;
pub const MAX_DT: f64 = 5e-3;

/// Speeds below this are treated as rest for stick/slip decisions.
const REST_SPEED: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("time step {0} s outside (0, 5 ms]")]
    DtOutOfRange(f64),
    #[error("regime inconsistent with state: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    State(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    FreeFlight,
    Perched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintRegime {
    pub regime: Regime,
    pub hinge: HingeLockState,
    /// Drill spinning and cutting whenever the tooltip touches the wall.
    pub drill_on: bool,
}

impl ConstraintRegime {
    pub fn free_flight() -> Self {
        Self {
            regime: Regime::FreeFlight,
            hinge: HingeLockState::Locked,
            drill_on: false,
        }
    }

    pub fn perched(hinge: HingeLockState) -> Self {
        Self {
            regime: Regime::Perched,
            hinge,
            drill_on: false,
        }
    }

    pub fn with_drill(mut self, on: bool) -> Self {
        self.drill_on = on;
        self
    }
}

/// Per-step quantities that are not part of the state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Wall reaction on the tooltip, N.
    pub tool_contact_force: f64,
    /// Tooltip pressed on the wall while the drill runs.
    pub cutting: bool,
    /// Force the body applies to the attachment, in `A` (`x` into the wall).
    pub attachment_load: Vec3,
    /// Wall-normal component of the rotor force, in `A`, N.
    pub rotor_normal_force: f64,
    pub wrench: Wrench,
    pub saturated: bool,
}

#[derive(Clone, Debug)]
pub struct Dynamics {
    pub params: RobotParams,
    pub env: Environment,
    pub rotors: RotorModel,
}

fn rot_y(theta: f64) -> Matrix3<f64> {
    *UnitQuaternion::from_axis_angle(&Vec3::y_axis(), theta).to_rotation_matrix().matrix()
}

/// Perched-regime geometry evaluated at one hinge configuration, all in `A`.
struct PerchedTerms {
    mass_matrix: Matrix2<f64>,
    /// Generalized forces (theta, slide) from rotors, gravity and tether.
    q_applied: Vector2<f64>,
    /// Velocity-product terms moved to the right-hand side.
    q_bias: Vector2<f64>,
    /// Columns of the centre-of-mass Jacobian.
    jac_theta: Vec3,
    com_bias_acc: Vec3,
    force_applied: Vec3,
    rotor_force: Vec3,
}

impl Dynamics {
    pub fn new(params: RobotParams, env: Environment) -> Self {
        let rotors = RotorModel::from_params(&params);
        Self { params, env, rotors }
    }

    pub fn mass(&self) -> f64 {
        self.params.body_mass()
    }

    fn tether_weight(&self) -> f64 {
        self.params.tether_linear_density * self.env.tether_length * self.env.gravity
    }

    fn gravity_w(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, -self.env.gravity)
    }

    pub fn check_regime(&self, state: &SimState, regime: &ConstraintRegime) -> Result<(), DynamicsError> {
        match regime.regime {
            Regime::Perched => {
                if !state.both_attached() {
                    return Err(DynamicsError::Inconsistent("perched regime requires both cups attached".into()));
                }
                if state.anchor.is_none() {
                    return Err(DynamicsError::Inconsistent("perched regime requires a wall anchor".into()));
                }
            }
            Regime::FreeFlight => {
                if regime.hinge != HingeLockState::Locked {
                    return Err(DynamicsError::Inconsistent("free flight requires the hinge locked".into()));
                }
            }
        }
        Ok(())
    }

    /// Advance the state by `dt`.
    pub fn step(
        &self,
        state: &SimState,
        rotor_cmds: [f64; 4],
        regime: &ConstraintRegime,
        dt: f64,
    ) -> Result<(SimState, StepInfo), DynamicsError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(DynamicsError::DtOutOfRange(dt));
        }
        state.validate(&self.params)?;
        self.check_regime(state, regime)?;

        let perched = regime.regime == Regime::Perched;
        let (cmds, saturated) = self.rotors.saturate(rotor_cmds, perched);
        let decay = (-dt / self.params.rotor_time_constant).exp();
        let mut next = state.clone();
        for (w, c) in next.rotor_speeds.iter_mut().zip(cmds) {
            *w = c + (*w - c) * decay;
        }
        let wrench = rotor_wrench(&next.rotor_speeds, &self.rotors);
        let mut info = StepInfo {
            wrench,
            saturated,
            ..Default::default()
        };
        match regime.regime {
            Regime::FreeFlight => self.step_free(&mut next, &wrench, dt, &mut info),
            Regime::Perched => self.step_perched(&mut next, &wrench, regime, dt, &mut info),
        }
        next.time = state.time + dt;
        Ok((next, info))
    }

    fn step_free(&self, s: &mut SimState, wrench: &Wrench, dt: f64, info: &mut StepInfo) {
        let m = self.mass();
        let q = s.body_pose.orientation;
        let tether_b = Vec3::from(self.env.tether_attach_point);
        let tether_w = Vec3::new(0.0, 0.0, -self.tether_weight());
        let force_w = q * wrench.force + m * self.gravity_w() + tether_w;
        let torque_b = wrench.torque + tether_b.cross(&(q.inverse() * tether_w));

        let inertia = Vec3::from(self.params.inertia);
        let w = s.body_twist.angular;
        let gyro = w.cross(&inertia.component_mul(&w));
        let w_new = w + (torque_b - gyro).component_div(&inertia) * dt;
        let q_new = q * UnitQuaternion::from_scaled_axis(w_new * dt);

        let v = s.body_twist.linear;
        let v_new = v + force_w / m * dt;
        let x_new = s.body_pose.position + 0.5 * (v + v_new) * dt;

        s.body_pose = Pose::new(x_new, UnitQuaternion::new_normalize(*q_new.quaternion()));
        s.body_twist.linear = v_new;
        s.body_twist.angular = w_new;
        s.hinge_rates = [0.0; 2];
        self.clamp_at_wall(s);
        info.attachment_load = Vec3::zeros();
    }

    /// Keep the cup lips from passing through the wall in free flight.
    fn clamp_at_wall(&self, s: &mut SimState) {
        let wall = &self.env.wall;
        let a_in_b = hinge_transform(&self.params, s.hinge_theta, s.hinge_slide).inverse();
        let wb = s.body_pose.isometry();
        let depth = self
            .params
            .cup_positions()
            .iter()
            .map(|c| wall.distance(&(wb * a_in_b).transform_point(&(*c).into()).coords))
            .fold(f64::INFINITY, f64::min);
        if depth < 0.0 {
            s.body_pose.position -= wall.normal * depth;
            let vn = s.body_twist.linear.dot(&wall.normal);
            if vn < 0.0 {
                s.body_twist.linear -= wall.normal * vn;
            }
        }
    }

    /// Wall-normal coordinate in `A` of the tooltip at the given hinge
    /// configuration and zero slide.
    pub fn tooltip_reach(&self, s: &SimState, theta: f64) -> f64 {
        let b_tip = Vec3::new(s.gantry_pos.x, s.gantry_pos.y, 0.0) + self.params.tooltip_offset();
        let ab = hinge_transform(&self.params, theta, 0.0);
        ab.transform_point(&b_tip.into()).x
    }

    /// Slide position at which the tooltip meets the bottom of the hole.
    pub fn slide_at_contact(&self, s: &SimState) -> f64 {
        s.drill_depth - self.tooltip_reach(s, s.hinge_theta)
    }

    fn perched_terms(&self, s: &SimState, anchor: &Pose, wrench: &Wrench) -> PerchedTerms {
        let m = self.mass();
        let theta = s.hinge_theta;
        let theta_dot = s.hinge_rates[0];
        let rot = rot_y(theta);
        let h_b = self.params.hinge_in_body();
        let c_b = self.params.com_offset(&s.gantry_pos);
        let e_y = Vec3::y();
        let e_x = Vec3::x();
        let to_a = anchor.orientation.inverse();

        let rotor_force = rot * wrench.force;
        let rotor_torque = rot * wrench.torque;
        let gravity = to_a * (m * self.gravity_w());
        let tether = to_a * Vec3::new(0.0, 0.0, -self.tether_weight());
        let tether_b = Vec3::from(self.env.tether_attach_point);

        // lever arms from the hinge axis, in A
        let arm = |b: &Vec3| rot * (b - h_b);
        let r_com = arm(&c_b);
        let jac_theta = e_y.cross(&r_com);

        let q_theta = e_y.dot(&arm(&Vec3::zeros()).cross(&rotor_force))
            + e_y.dot(&rotor_torque)
            + e_y.dot(&r_com.cross(&gravity))
            + e_y.dot(&arm(&tether_b).cross(&tether));
        let force_applied = rotor_force + gravity + tether;
        let q_applied = Vector2::new(q_theta, force_applied.x);

        let com_bias_acc = theta_dot * theta_dot * e_y.cross(&e_y.cross(&r_com));
        let q_bias = -m * Vector2::new(jac_theta.dot(&com_bias_acc), e_x.dot(&com_bias_acc));
        let m_tp = m * e_x.dot(&jac_theta);
        let mass_matrix = Matrix2::new(
            m * jac_theta.norm_squared() + self.params.inertia[1],
            m_tp,
            m_tp,
            m,
        );
        PerchedTerms {
            mass_matrix,
            q_applied,
            q_bias,
            jac_theta,
            com_bias_acc,
            force_applied,
            rotor_force,
        }
    }

    fn step_perched(&self, s: &mut SimState, wrench: &Wrench, regime: &ConstraintRegime, dt: f64, info: &mut StepInfo) {
        let anchor = s.anchor.expect("checked by check_regime");
        let m = self.mass();
        let terms = self.perched_terms(s, &anchor, wrench);
        let q = terms.q_applied + terms.q_bias;
        let friction = self.params.slide_friction_force;
        let travel = self.params.slide_travel;
        let p_contact = self.slide_at_contact(s);
        let mut acc = Vector2::zeros();
        let mut tool_force = 0.0;

        match regime.hinge {
            HingeLockState::Locked => {
                s.hinge_rates = [0.0; 2];
            }
            HingeLockState::RotationLocked => {
                s.hinge_rates[0] = 0.0;
                let v = s.hinge_rates[1];
                let q_p = q[1];
                let at_tool = s.hinge_slide >= p_contact - 1e-12;
                if at_tool && v.abs() <= REST_SPEED && q_p > 0.0 {
                    // Tooltip held against the wall. At rest the bearing
                    // carries no friction; while the bit cuts, the body creeps
                    // forward and kinetic friction acts.
                    tool_force = if regime.drill_on { (q_p - friction).max(0.0) } else { q_p };
                    info.cutting = regime.drill_on;
                    s.hinge_rates[1] = 0.0;
                    s.hinge_slide = p_contact.clamp(0.0, travel);
                } else {
                    let a = slide_acceleration(q_p, v, friction, m);
                    let v_new = v + a * dt;
                    let v_new = if v != 0.0 && v_new * v < 0.0 { 0.0 } else { v_new };
                    acc[1] = (v_new - v) / dt;
                    let mut p = s.hinge_slide + 0.5 * (v + v_new) * dt;
                    let mut v_out = v_new;
                    let upper = travel.min(p_contact);
                    if p >= upper {
                        p = upper;
                        if v_out > 0.0 {
                            v_out = 0.0;
                        }
                        if upper == p_contact && q_p > 0.0 {
                            tool_force = if regime.drill_on { (q_p - friction).max(0.0) } else { q_p };
                            info.cutting = regime.drill_on;
                        }
                    }
                    if p <= 0.0 {
                        p = 0.0;
                        v_out = v_out.max(0.0);
                    }
                    s.hinge_slide = p;
                    s.hinge_rates[1] = v_out;
                    // end-stop impacts are absorbed by the stop dampers
                    if v_out != v_new {
                        acc[1] = 0.0;
                    }
                }
            }
            HingeLockState::Released => {
                let [td, v] = s.hinge_rates;
                let mm = terms.mass_matrix;
                let solve = |f: f64| {
                    mm.try_inverse()
                        .map(|inv| inv * (q + Vector2::new(0.0, f)))
                        .unwrap_or_else(Vector2::zeros)
                };
                acc = if v.abs() > REST_SPEED {
                    solve(-friction * v.signum())
                } else {
                    // friction needed to hold the slide while theta moves
                    let th_acc = q[0] / mm[(0, 0)];
                    let f_req = mm[(1, 0)] * th_acc - q[1];
                    if f_req.abs() <= friction {
                        Vector2::new(th_acc, 0.0)
                    } else {
                        solve(friction * f_req.signum())
                    }
                };
                let mut td_new = td + acc[0] * dt;
                let mut v_new = v + acc[1] * dt;
                if v != 0.0 && v_new * v < 0.0 {
                    v_new = 0.0;
                }
                let (td_free, v_free) = (td_new, v_new);
                let mut theta = s.hinge_theta + td_new * dt;
                let mut p = s.hinge_slide + 0.5 * (v + v_new) * dt;
                let half_pi = std::f64::consts::FRAC_PI_2;
                if theta <= 0.0 {
                    theta = 0.0;
                    td_new = td_new.max(0.0);
                }
                if theta >= half_pi {
                    theta = half_pi;
                    td_new = td_new.min(0.0);
                }
                if p <= 0.0 {
                    p = 0.0;
                    v_new = v_new.max(0.0);
                }
                if p >= travel {
                    p = travel;
                    v_new = v_new.min(0.0);
                }
                s.hinge_theta = theta;
                let reach = self.slide_at_contact(s);
                if p >= reach {
                    p = reach.max(0.0);
                    v_new = v_new.min(0.0);
                    tool_force = terms.q_applied[1].max(0.0);
                }
                s.hinge_slide = p;
                s.hinge_rates = [td_new, v_new];
                let smooth = |new: f64, free: f64, old: f64| if new == free { (new - old) / dt } else { 0.0 };
                acc = Vector2::new(smooth(td_new, td_free, td), smooth(v_new, v_free, v));
            }
        }

        let com_acc = terms.jac_theta * acc[0] + Vec3::x() * acc[1] + terms.com_bias_acc;
        info.tool_contact_force = tool_force;
        info.rotor_normal_force = terms.rotor_force.x;
        info.attachment_load = terms.force_applied - Vec3::x() * tool_force - m * com_acc;
        self.sync_body_from_hinge(s);
    }

    /// Robot at rest on the wall with its cup centre at `anchor_point`, full
    /// vacuum and rotors stopped.
    pub fn perched_state(&self, anchor_point: Vec3, theta: f64, slide: f64) -> SimState {
        let mut s = SimState {
            hinge_theta: theta,
            hinge_slide: slide,
            attached: [true; 2],
            cup_pressures: [self.params.vacuum_max; 2],
            anchor: Some(Pose::new(anchor_point, self.env.perch_orientation())),
            ..SimState::default()
        };
        self.sync_body_from_hinge(&mut s);
        s
    }

    /// Recompute the body pose and twist from the anchor and hinge coordinates.
    pub fn sync_body_from_hinge(&self, s: &mut SimState) {
        let Some(anchor) = s.anchor else { return };
        let ab = hinge_transform(&self.params, s.hinge_theta, s.hinge_slide);
        s.body_pose = Pose::from_isometry(&(anchor.isometry() * ab));
        let [td, v] = s.hinge_rates;
        let rot = rot_y(s.hinge_theta);
        let h_b = self.params.hinge_in_body();
        let v_a = Vec3::x() * v + Vec3::y().cross(&(rot * (-h_b))) * td;
        s.body_twist.linear = anchor.orientation * v_a;
        s.body_twist.angular = Vec3::y() * td;
    }
}

/// Coulomb-friction slide acceleration for a 1-DOF carriage.
fn slide_acceleration(force: f64, v: f64, friction: f64, m: f64) -> f64 {
    if v.abs() > REST_SPEED {
        (force - friction * v.signum()) / m
    } else if force.abs() <= friction {
        0.0
    } else {
        (force - friction * force.signum()) / m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{frame_pose, Frame};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn dynamics() -> Dynamics {
        Dynamics::new(RobotParams::default(), Environment::default())
    }

    fn hovering_state(d: &Dynamics) -> SimState {
        let w = d.rotors.hover_rpm(d.mass(), d.env.gravity);
        SimState {
            body_pose: Pose::new(Vec3::new(2.0, 0.0, 1.5), UnitQuaternion::identity()),
            rotor_speeds: [w; 4],
            ..SimState::default()
        }
    }

    pub(crate) fn perched_state(d: &Dynamics, theta: f64, slide: f64) -> SimState {
        d.perched_state(Vec3::new(0.0, 0.0, 1.5), theta, slide)
    }

    fn run(d: &Dynamics, mut s: SimState, cmds: [f64; 4], regime: ConstraintRegime, dt: f64, t: f64) -> (SimState, StepInfo) {
        let n = (t / dt).round() as usize;
        let mut info = StepInfo::default();
        for _ in 0..n {
            (s, info) = d.step(&s, cmds, &regime, dt).unwrap();
        }
        (s, info)
    }

    #[test]
    fn hover_speed_holds_altitude() {
        let d = dynamics();
        let s = hovering_state(&d);
        let w = s.rotor_speeds[0];
        assert_relative_eq!(4.0 * d.rotors.k_f * w * w, 11.1 * 9.81, max_relative = 1e-12);
        let (next, _) = d.step(&s, [w; 4], &ConstraintRegime::free_flight(), DEFAULT_DT).unwrap();
        let acc = (next.body_twist.linear.z - s.body_twist.linear.z) / DEFAULT_DT;
        assert!(acc.abs() < 1e-6, "vertical acceleration {acc}");
    }

    #[test]
    fn locked_perch_with_rotors_off_is_static() {
        let d = dynamics();
        let s = perched_state(&d, 0.0, 0.0);
        let (next, info) = run(&d, s.clone(), [0.0; 4], ConstraintRegime::perched(HingeLockState::Locked), DEFAULT_DT, 0.5);
        assert_eq!(next.body_pose, s.body_pose);
        assert_eq!(next.hinge_theta, s.hinge_theta);
        assert_eq!(next.hinge_slide, s.hinge_slide);
        // cups carry the weight as pure shear
        assert_relative_eq!(info.attachment_load, Vec3::new(0.0, 0.0, -11.1 * 9.81), epsilon = 1e-9);
    }

    fn steady_feed(d: &Dynamics, rpm: f64) -> f64 {
        let mut s = perched_state(d, FRAC_PI_2, 0.0);
        s.drill_depth = 0.0;
        s.rotor_speeds = [rpm; 4];
        let (_, info) = run(d, s, [rpm; 4], ConstraintRegime::perched(HingeLockState::RotationLocked), DEFAULT_DT, 3.0);
        info.tool_contact_force
    }

    #[test]
    fn drilling_speed_gives_reference_reaction() {
        let d = dynamics();
        let f = steady_feed(&d, 3000.0);
        assert!((f - 110.0).abs() < 4.0, "feed {f}");
    }

    #[test]
    fn full_speed_gives_maximum_reaction() {
        let d = dynamics();
        let f = steady_feed(&d, d.params.rotor_speed_limit);
        assert!((f - 150.0).abs() < 5.0, "feed {f}");
    }

    #[test]
    fn cutting_subtracts_slide_friction() {
        let d = dynamics();
        let mut s = perched_state(&d, FRAC_PI_2, 0.0);
        s.rotor_speeds = [3000.0; 4];
        let regime = ConstraintRegime::perched(HingeLockState::RotationLocked).with_drill(true);
        let (_, info) = run(&d, s, [3000.0; 4], regime, DEFAULT_DT, 3.0);
        assert!(info.cutting);
        assert_relative_eq!(info.tool_contact_force, 110.0 - d.params.slide_friction_force, epsilon = 1e-6);
    }

    #[test]
    fn anchor_never_moves_while_perched() {
        let d = dynamics();
        let s = perched_state(&d, 0.0, 0.0);
        let a0 = frame_pose(&s, &d.params, Frame::Attachment);
        let mut cmd = [0.0; 4];
        cmd[0] = -1500.0;
        cmd[1] = -1500.0;
        let (s1, _) = run(&d, s, cmd, ConstraintRegime::perched(HingeLockState::Released), DEFAULT_DT, 1.0);
        let a1 = frame_pose(&s1, &d.params, Frame::Attachment);
        assert!((a1.translation.vector - a0.translation.vector).norm() < 1e-12);
        assert!(a1.rotation.angle_to(&a0.rotation) < 1e-12);
        // the body itself stays consistent with the hinge coordinates
        let a_from_body = s1.body_pose.isometry() * hinge_transform(&d.params, s1.hinge_theta, s1.hinge_slide).inverse();
        assert!((a_from_body.translation.vector - a0.translation.vector).norm() < 1e-12);
    }

    #[test]
    fn reversed_front_pair_rotates_to_stop_without_sliding() {
        let d = dynamics();
        let s = perched_state(&d, 0.0, 0.0);
        let w = -0.3 * d.params.rotor_speed_limit;
        let regime = ConstraintRegime::perched(HingeLockState::Released);
        let mut s = s;
        for _ in 0..6000 {
            (s, _) = d.step(&s, [w, w, 0.0, 0.0], &regime, DEFAULT_DT).unwrap();
            assert!(s.hinge_slide <= 1e-12);
        }
        assert_eq!(s.hinge_theta, FRAC_PI_2);
    }

    #[test]
    fn ballistic_flight_conserves_energy() {
        let d = dynamics();
        let mut s = SimState {
            body_pose: Pose::new(Vec3::new(3.0, 0.0, 10.0), UnitQuaternion::identity()),
            ..SimState::default()
        };
        s.body_twist.linear = Vec3::new(1.0, -0.5, 3.0);
        s.body_twist.angular = Vec3::new(0.0, 0.0, 0.7);
        let m = d.mass();
        let inertia = Vec3::from(d.params.inertia);
        let energy = |s: &SimState| {
            0.5 * m * s.body_twist.linear.norm_squared()
                + 0.5 * s.body_twist.angular.dot(&inertia.component_mul(&s.body_twist.angular))
                + m * d.env.gravity * s.body_pose.position.z
        };
        let e0 = energy(&s);
        let (s1, _) = run(&d, s, [0.0; 4], ConstraintRegime::free_flight(), DEFAULT_DT, 1.0);
        assert!((energy(&s1) - e0).abs() / e0 < 1e-6);
    }

    #[test]
    fn halving_the_step_changes_trajectory_by_less_than_a_millimetre() {
        let d = dynamics();
        let s = hovering_state(&d);
        let w = s.rotor_speeds[0];
        let cmd = [w * 1.02, w * 0.99, w * 1.01, w * 0.985];
        let (a, _) = run(&d, s.clone(), cmd, ConstraintRegime::free_flight(), 1e-3, 1.0);
        let (b, _) = run(&d, s, cmd, ConstraintRegime::free_flight(), 5e-4, 1.0);
        let dev = (a.body_pose.position - b.body_pose.position).norm();
        assert!(dev < 1e-3, "deviation {dev}");
    }

    #[test]
    fn rejects_bad_step_and_inconsistent_regime() {
        let d = dynamics();
        let s = SimState::default();
        assert!(matches!(d.step(&s, [0.0; 4], &ConstraintRegime::free_flight(), 0.0), Err(DynamicsError::DtOutOfRange(_))));
        assert!(matches!(d.step(&s, [0.0; 4], &ConstraintRegime::free_flight(), 0.006), Err(DynamicsError::DtOutOfRange(_))));
        assert!(matches!(
            d.step(&s, [0.0; 4], &ConstraintRegime::perched(HingeLockState::Locked), 1e-3),
            Err(DynamicsError::Inconsistent(_))
        ));
        let mut ff = ConstraintRegime::free_flight();
        ff.hinge = HingeLockState::Released;
        assert!(matches!(d.step(&s, [0.0; 4], &ff, 1e-3), Err(DynamicsError::Inconsistent(_))));
    }

    #[test]
    fn back_pair_cannot_reverse_in_flight() {
        let d = dynamics();
        let s = hovering_state(&d);
        let (n, info) = d.step(&s, [-100.0, -100.0, -100.0, -100.0], &ConstraintRegime::free_flight(), 1e-3).unwrap();
        assert!(info.saturated);
        assert!(n.rotor_speeds[2] >= 0.0 && n.rotor_speeds[3] >= 0.0);
    }

    #[test]
    fn wall_stops_free_flight() {
        let d = dynamics();
        let mut s = hovering_state(&d);
        s.body_pose = Pose::new(Vec3::new(0.56, 0.0, 1.5), UnitQuaternion::from_axis_angle(&Vec3::z_axis(), d.env.wall_heading()));
        s.body_twist.linear.x = -0.3;
        let w = s.rotor_speeds[0];
        let (s1, _) = run(&d, s, [w; 4], ConstraintRegime::free_flight(), 1e-3, 0.5);
        assert!(s1.body_pose.position.x >= d.params.attachment_offset[0] - 1e-9);
        assert!(s1.body_twist.linear.x >= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn feed_force_is_monotone_in_speed(a in 0.0f64..3500.0, b in 0.0f64..3500.0) {
            let d = dynamics();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(steady_feed(&d, lo) <= steady_feed(&d, hi) + 1e-9);
        }
    }
}
