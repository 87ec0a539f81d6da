//! Frames, robot and environment parameters, and the simulation state shared by
//! every other module.
//!
//! Four frames are tracked:
//!
//! * `W` world, `z` against gravity.
//! * `B` body, origin at the centre of mass of the flight configuration,
//!   forward-left-up axes.
//! * `A` attachment, centred between the two suction cups, `x` along the
//!   suction force (into the wall), `y` from the right to the left cup.
//! * `T` tool, origin at the tooltip, axes parallel to `B`.
//!
//! The hinge rotates `B` about `y` by `theta` (0 in flight, 90 degrees when the
//! tool table faces the wall) and slides the hinge along `x_A` by `slide`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

pub const QUAT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown frame `{0}` (expected one of W, B, A, T)")]
    UnknownFrame(String),
    #[error("negative tether length {0} m")]
    NegativeLength(f64),
    #[error("state invariant violated: {0}")]
    Invariant(String),
    #[error("parameter invariant violated: {0}")]
    Param(String),
    #[error("parameter file: {0}")]
    ParamFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    World,
    Body,
    Attachment,
    Tool,
}

impl FromStr for Frame {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "W" | "w" | "world" => Ok(Frame::World),
            "B" | "b" | "body" => Ok(Frame::Body),
            "A" | "a" | "attachment" => Ok(Frame::Attachment),
            "T" | "t" | "tool" => Ok(Frame::Tool),
            other => Err(ModelError::UnknownFrame(other.to_string())),
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::World => "W",
            Frame::Body => "B",
            Frame::Attachment => "A",
            Frame::Tool => "T",
        })
    }
}

/// Rigid transform `parent <- frame`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.isometry() * other.isometry()))
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.isometry().inverse())
    }

    pub fn is_normalized(&self) -> bool {
        (self.orientation.quaternion().norm() - 1.0).abs() <= QUAT_NORM_TOL
    }
}

/// Linear velocity in `W`, angular velocity in `B`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

/// Where a parameter value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Reported hardware figure.
    Measured,
    /// Computed from other parameters or reported operating points.
    Derived,
    /// Engineering guess; no published value exists.
    Assumed,
    /// Tuned in-repo against scripted tests.
    Tuned,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Measured => "measured",
            Provenance::Derived => "derived",
            Provenance::Assumed => "assumed",
            Provenance::Tuned => "tuned",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub mass_base: f64,
    pub mass_positioning: f64,
    pub mass_tool: f64,
    pub tether_linear_density: f64,
    pub height: f64,
    pub width: f64,
    pub length: f64,
    pub prop_diameter: f64,
    /// Principal inertia about the body axes at the centre of mass.
    pub inertia: [f64; 3],
    /// Rotor hubs in `B`: front-left, front-right, back-left, back-right.
    pub rotor_positions: [[f64; 3]; 4],
    /// +1 counter-clockwise seen from above.
    pub rotor_spin_directions: [f64; 4],
    pub rotor_thrust_coeff: f64,
    pub rotor_drag_coeff: f64,
    pub rotor_power_coeff: f64,
    pub avionics_power: f64,
    pub rotor_speed_limit: f64,
    pub rotor_time_constant: f64,
    pub cup_diameter: f64,
    pub cup_count: usize,
    pub cup_spacing: f64,
    pub vacuum_max: f64,
    pub pump_time_constant: f64,
    pub valve_release_time_constant: f64,
    pub attach_fraction: f64,
    pub contact_gap: f64,
    pub contact_speed: f64,
    pub mu_warm: f64,
    pub mu_cold: f64,
    pub mu_warm_temperature: f64,
    pub mu_cold_temperature: f64,
    pub slip_damping: f64,
    pub slide_friction_force: f64,
    pub slide_travel: f64,
    pub hinge_in_body: [f64; 3],
    pub attachment_offset: [f64; 3],
    pub hinge_angle_tolerance: f64,
    pub hinge_slide_tolerance: f64,
    pub hinge_compliance: f64,
    /// Lateral and vertical extent of the tool window, as (x_B, y_B).
    pub gantry_workspace: [f64; 2],
    pub gantry_speed_limit: f64,
    pub gantry_backlash: f64,
    pub gantry_flight_position: [f64; 2],
    pub tooltip_offset: [f64; 3],
}

impl Default for RobotParams {
    fn default() -> Self {
        let mass_base = 6.6;
        let mass_positioning = 2.2;
        let mass_tool = 2.3;
        let gantry_flight_position = [-0.105, 0.0];
        // Hinge axis passes through the centre of mass once the tool sits at
        // the workspace centre.
        let hinge_x = -gantry_flight_position[0] * mass_tool / (mass_base + mass_positioning + mass_tool);
        let mut params = Self {
            mass_base,
            mass_positioning,
            mass_tool,
            tether_linear_density: 0.2,
            height: 0.77,
            width: 0.73,
            length: 1.22,
            prop_diameter: 0.48,
            inertia: [0.75, 1.05, 1.6],
            rotor_positions: [
                [0.37, 0.25, 0.0],
                [0.37, -0.25, 0.0],
                [-0.37, 0.25, 0.0],
                [-0.37, -0.25, 0.0],
            ],
            rotor_spin_directions: [1.0, -1.0, -1.0, 1.0],
            rotor_thrust_coeff: 0.0,
            rotor_drag_coeff: 0.0,
            rotor_power_coeff: 0.0,
            avionics_power: 50.0,
            rotor_speed_limit: 3500.0,
            rotor_time_constant: 0.2,
            cup_diameter: 0.075,
            cup_count: 2,
            cup_spacing: 0.5,
            vacuum_max: 80_000.0,
            pump_time_constant: 1.5,
            valve_release_time_constant: 0.4,
            attach_fraction: 0.3,
            contact_gap: 0.002,
            contact_speed: 0.5,
            mu_warm: 0.5,
            mu_cold: 0.12,
            mu_warm_temperature: 20.0,
            mu_cold_temperature: 0.0,
            slip_damping: 1.0e5,
            slide_friction_force: 10.0,
            slide_travel: 0.2,
            hinge_in_body: [hinge_x, 0.0, 0.0],
            attachment_offset: [0.55, 0.0, 0.0],
            hinge_angle_tolerance: 2f64.to_radians(),
            hinge_slide_tolerance: 0.002,
            hinge_compliance: 0.01,
            gantry_workspace: [0.210, 0.150],
            gantry_speed_limit: 0.05,
            gantry_backlash: 0.0005,
            gantry_flight_position,
            tooltip_offset: [0.0, 0.0, 0.40],
        };
        let fit = crate::rotor::calibrate_default(&params)
            .expect("default anchors are well formed");
        params.rotor_thrust_coeff = fit.k_f;
        params.rotor_power_coeff = fit.k_p;
        params.rotor_drag_coeff = 0.016 * fit.k_f;
        params
    }
}

impl RobotParams {
    pub fn body_mass(&self) -> f64 {
        self.mass_base + self.mass_positioning + self.mass_tool
    }

    pub fn cup_area(&self) -> f64 {
        let r = 0.5 * self.cup_diameter;
        std::f64::consts::PI * r * r
    }

    pub fn hinge_in_body(&self) -> Vec3 {
        Vec3::from(self.hinge_in_body)
    }

    pub fn attachment_offset(&self) -> Vec3 {
        Vec3::from(self.attachment_offset)
    }

    pub fn tooltip_offset(&self) -> Vec3 {
        Vec3::from(self.tooltip_offset)
    }

    pub fn gantry_flight_position(&self) -> Vec2 {
        Vec2::from(self.gantry_flight_position)
    }

    /// Shift of the centre of mass in `B` produced by moving the tool away
    /// from its flight position.
    pub fn com_offset(&self, gantry: &Vec2) -> Vec3 {
        let d = gantry - self.gantry_flight_position();
        let k = self.mass_tool / self.body_mass();
        Vec3::new(k * d.x, k * d.y, 0.0)
    }

    /// Cup centres in `A`; index 0 is the right cup.
    pub fn cup_positions(&self) -> [Vec3; 2] {
        let h = 0.5 * self.cup_spacing;
        [Vec3::new(0.0, -h, 0.0), Vec3::new(0.0, h, 0.0)]
    }

    /// Friction coefficient of the cup lips at the given temperature.
    pub fn friction_mu(&self, temperature: f64) -> f64 {
        let (t0, t1) = (self.mu_cold_temperature, self.mu_warm_temperature);
        if temperature >= t1 {
            self.mu_warm
        } else if temperature <= t0 {
            self.mu_cold
        } else {
            let s = (temperature - t0) / (t1 - t0);
            self.mu_cold + s * (self.mu_warm - self.mu_cold)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::Param(m.to_string()));
        if !(self.mass_base > 0.0 && self.mass_positioning > 0.0 && self.mass_tool > 0.0) {
            return err("all masses must be positive");
        }
        if self.rotor_thrust_coeff <= 0.0 {
            return err("rotor_thrust_coeff must be positive");
        }
        if self.gantry_workspace.iter().any(|w| *w <= 0.0) {
            return err("gantry workspace components must be positive");
        }
        if self.cup_count != 2 {
            return err("exactly two suction cups are modelled");
        }
        if self.rotor_speed_limit <= 0.0 || self.rotor_time_constant <= 0.0 {
            return err("rotor limits must be positive");
        }
        if self.inertia.iter().any(|i| *i <= 0.0) {
            return err("inertia must be positive definite");
        }
        if self.vacuum_max <= 0.0 || self.pump_time_constant <= 0.0 || self.valve_release_time_constant <= 0.0 {
            return err("suction parameters must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallPlane {
    pub point: Vec3,
    /// Unit normal pointing out of the wall towards free space.
    pub normal: Vec3,
}

impl WallPlane {
    /// Signed distance of a world point from the wall surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    /// Horizontal axis of the wall as seen by someone facing it.
    pub fn right(&self) -> Vec3 {
        (-self.normal).cross(&Vec3::z()).normalize()
    }

    pub fn up(&self) -> Vec3 {
        self.right().cross(&(-self.normal))
    }

    /// Wall-plane coordinates (right, up) of a world point.
    pub fn wall_coords(&self, p: &Vec3) -> Vec2 {
        let d = p - self.point;
        Vec2::new(d.dot(&self.right()), d.dot(&self.up()))
    }

    pub fn from_wall_coords(&self, w: &Vec2) -> Vec3 {
        self.point + self.right() * w.x + self.up() * w.y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub min_feed_force: f64,
    pub drill_rate_coeff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub gravity: f64,
    pub wall: WallPlane,
    pub material: Material,
    pub ambient_temperature: f64,
    /// Tether connection on the body, in `B`.
    pub tether_attach_point: [f64; 3],
    pub tether_length: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            wall: WallPlane {
                point: Vec3::zeros(),
                normal: Vec3::x(),
            },
            material: Material {
                min_feed_force: 80.0,
                drill_rate_coeff: 2e-5,
            },
            ambient_temperature: 20.0,
            tether_attach_point: [-0.3, 0.0, 0.0],
            tether_length: 0.0,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<(), ModelError> {
        if (self.wall.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::Param("wall normal must be unit length".into()));
        }
        if self.wall.normal.z.abs() > 1e-9 {
            return Err(ModelError::Param("only vertical walls are supported".into()));
        }
        if self.material.min_feed_force < 0.0 {
            return Err(ModelError::Param("min_feed_force must be non-negative".into()));
        }
        if self.tether_length < 0.0 {
            return Err(ModelError::NegativeLength(self.tether_length));
        }
        Ok(())
    }

    /// Orientation `W <- A` of a perch on this wall.
    pub fn perch_orientation(&self) -> UnitQuaternion<f64> {
        let x = -self.wall.normal;
        let z = Vec3::z();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
        UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
    }

    /// Heading that points the body x axis into the wall.
    pub fn wall_heading(&self) -> f64 {
        let x = -self.wall.normal;
        x.y.atan2(x.x)
    }
}

/// Canonical simulation state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub body_pose: Pose,
    pub body_twist: Twist,
    pub hinge_theta: f64,
    pub hinge_slide: f64,
    /// (theta rate, slide rate)
    pub hinge_rates: [f64; 2],
    /// Signed rotor speeds in rpm.
    pub rotor_speeds: [f64; 4],
    /// Pressure below ambient, Pa.
    pub cup_pressures: [f64; 2],
    pub attached: [bool; 2],
    pub gantry_pos: Vec2,
    pub drill_depth: f64,
    pub time: f64,
    /// Pose `W <- A` while perched.
    pub anchor: Option<Pose>,
}

impl Default for SimState {
    fn default() -> Self {
        Self {
            body_pose: Pose::identity(),
            body_twist: Twist::default(),
            hinge_theta: 0.0,
            hinge_slide: 0.0,
            hinge_rates: [0.0; 2],
            rotor_speeds: [0.0; 4],
            cup_pressures: [0.0; 2],
            attached: [false; 2],
            gantry_pos: Vec2::zeros(),
            drill_depth: 0.0,
            time: 0.0,
            anchor: None,
        }
    }
}

impl SimState {
    pub fn validate(&self, params: &RobotParams) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Invariant(m));
        if !self.body_pose.is_normalized() {
            return fail("body orientation is not a unit quaternion".into());
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(-1e-9..=half_pi + 1e-9).contains(&self.hinge_theta) {
            return fail(format!("hinge angle {} outside [0, pi/2]", self.hinge_theta));
        }
        if self.drill_depth < 0.0 {
            return fail("negative drill depth".into());
        }
        if self.rotor_speeds.iter().any(|w| w.abs() > params.rotor_speed_limit + 1e-6) {
            return fail("rotor speed above limit".into());
        }
        if self
            .cup_pressures
            .iter()
            .any(|p| *p < 0.0 || *p > params.vacuum_max + 1e-6)
        {
            return fail("cup pressure outside [0, vacuum_max]".into());
        }
        Ok(())
    }

    pub fn both_attached(&self) -> bool {
        self.attached.iter().all(|a| *a)
    }
}

/// Transform `A <- B` produced by the hinge.
pub fn hinge_transform(params: &RobotParams, theta: f64, slide: f64) -> Isometry3<f64> {
    let rot = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), theta);
    let h_b = params.hinge_in_body();
    let h_a = h_b - params.attachment_offset() + Vec3::x() * slide;
    let t = h_a - rot * h_b;
    Isometry3::from_parts(Translation3::from(t), rot)
}

/// Transform `B <- T`.
pub fn tool_transform(params: &RobotParams, gantry: &Vec2) -> Isometry3<f64> {
    let t = Vec3::new(gantry.x, gantry.y, 0.0) + params.tooltip_offset();
    Isometry3::translation(t.x, t.y, t.z)
}

/// Pose `W <- frame` for the given state.
pub fn frame_pose(state: &SimState, params: &RobotParams, frame: Frame) -> Isometry3<f64> {
    let wb = state.body_pose.isometry();
    match frame {
        Frame::World => Isometry3::identity(),
        Frame::Body => wb,
        Frame::Attachment => match state.anchor {
            Some(a) => a.isometry(),
            None => wb * hinge_transform(params, state.hinge_theta, state.hinge_slide).inverse(),
        },
        Frame::Tool => wb * tool_transform(params, &state.gantry_pos),
    }
}

/// Express `point`, given in frame `from`, in frame `to`.
pub fn frame_transform(state: &SimState, params: &RobotParams, from: Frame, to: Frame, point: &Vec3) -> Vec3 {
    if from == to {
        return *point;
    }
    let from_w = frame_pose(state, params, from);
    let to_w = frame_pose(state, params, to);
    to_w.inverse_transform_point(&from_w.transform_point(&(*point).into())).coords
}

/// Mass carried by the rotors for a given deployed tether length.
pub fn total_mass(params: &RobotParams, tether_deployed_length: f64) -> Result<f64, ModelError> {
    if tether_deployed_length < 0.0 {
        return Err(ModelError::NegativeLength(tether_deployed_length));
    }
    Ok(params.mass_base + params.mass_positioning + params.mass_tool + params.tether_linear_density * tether_deployed_length)
}

/// Units and provenance of every entry in the parameter file.
pub const PARAM_META: &[(&str, &str, Provenance)] = &[
    ("robot.mass_base", "kg", Provenance::Measured),
    ("robot.mass_positioning", "kg", Provenance::Measured),
    ("robot.mass_tool", "kg", Provenance::Measured),
    ("robot.tether_linear_density", "kg/m", Provenance::Measured),
    ("robot.height", "m", Provenance::Measured),
    ("robot.width", "m", Provenance::Measured),
    ("robot.length", "m", Provenance::Measured),
    ("robot.prop_diameter", "m", Provenance::Measured),
    ("robot.inertia", "kg m^2", Provenance::Assumed),
    ("robot.rotor_positions", "m", Provenance::Assumed),
    ("robot.rotor_spin_directions", "1", Provenance::Assumed),
    ("robot.rotor_thrust_coeff", "N/rpm^2", Provenance::Derived),
    ("robot.rotor_drag_coeff", "N m/rpm^2", Provenance::Assumed),
    ("robot.rotor_power_coeff", "W/rpm^3", Provenance::Derived),
    ("robot.avionics_power", "W", Provenance::Assumed),
    ("robot.rotor_speed_limit", "rpm", Provenance::Assumed),
    ("robot.rotor_time_constant", "s", Provenance::Assumed),
    ("robot.cup_diameter", "m", Provenance::Measured),
    ("robot.cup_count", "1", Provenance::Measured),
    ("robot.cup_spacing", "m", Provenance::Assumed),
    ("robot.vacuum_max", "Pa", Provenance::Assumed),
    ("robot.pump_time_constant", "s", Provenance::Assumed),
    ("robot.valve_release_time_constant", "s", Provenance::Assumed),
    ("robot.attach_fraction", "1", Provenance::Assumed),
    ("robot.contact_gap", "m", Provenance::Assumed),
    ("robot.contact_speed", "m/s", Provenance::Assumed),
    ("robot.mu_warm", "1", Provenance::Assumed),
    ("robot.mu_cold", "1", Provenance::Assumed),
    ("robot.mu_warm_temperature", "degC", Provenance::Assumed),
    ("robot.mu_cold_temperature", "degC", Provenance::Assumed),
    ("robot.slip_damping", "N s/m", Provenance::Assumed),
    ("robot.slide_friction_force", "N", Provenance::Assumed),
    ("robot.slide_travel", "m", Provenance::Assumed),
    ("robot.hinge_in_body", "m", Provenance::Derived),
    ("robot.attachment_offset", "m", Provenance::Assumed),
    ("robot.hinge_angle_tolerance", "rad", Provenance::Assumed),
    ("robot.hinge_slide_tolerance", "m", Provenance::Assumed),
    ("robot.hinge_compliance", "rad/(N m)", Provenance::Assumed),
    ("robot.gantry_workspace", "m", Provenance::Measured),
    ("robot.gantry_speed_limit", "m/s", Provenance::Assumed),
    ("robot.gantry_backlash", "m", Provenance::Assumed),
    ("robot.gantry_flight_position", "m", Provenance::Assumed),
    ("robot.tooltip_offset", "m", Provenance::Assumed),
    ("environment.gravity", "m/s^2", Provenance::Measured),
    ("environment.wall.point", "m", Provenance::Assumed),
    ("environment.wall.normal", "1", Provenance::Assumed),
    ("environment.material.min_feed_force", "N", Provenance::Measured),
    ("environment.material.drill_rate_coeff", "m/(N s)", Provenance::Assumed),
    ("environment.ambient_temperature", "degC", Provenance::Assumed),
    ("environment.tether_attach_point", "m", Provenance::Assumed),
    ("environment.tether_length", "m", Provenance::Assumed),
];

/// Robot and environment parameters together with per-entry provenance, as
/// read from or written to a parameter file.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub robot: RobotParams,
    pub environment: Environment,
    pub provenance: BTreeMap<String, Provenance>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self {
            robot: RobotParams::default(),
            environment: Environment::default(),
            provenance: PARAM_META
                .iter()
                .map(|(k, _, p)| (k.to_string(), *p))
                .collect(),
        }
    }
}

fn meta(path: &str) -> Option<(&'static str, Provenance)> {
    PARAM_META
        .iter()
        .find(|(k, _, _)| *k == path)
        .map(|(_, u, p)| (*u, *p))
}

fn annotate(value: toml::Value, path: &str, provenance: &BTreeMap<String, Provenance>) -> toml::Value {
    match value {
        toml::Value::Table(t) if meta(path).is_none() => {
            let mut out = toml::Table::new();
            for (k, v) in t {
                let child = format!("{path}.{k}");
                out.insert(k, annotate(v, &child, provenance));
            }
            toml::Value::Table(out)
        }
        leaf => {
            let (unit, default_prov) = meta(path).unwrap_or(("", Provenance::Assumed));
            let prov = provenance.get(path).copied().unwrap_or(default_prov);
            let mut entry = toml::Table::new();
            entry.insert("value".into(), leaf);
            entry.insert("unit".into(), toml::Value::String(unit.into()));
            entry.insert("provenance".into(), toml::Value::String(prov.to_string()));
            toml::Value::Table(entry)
        }
    }
}

fn strip(value: toml::Value, path: &str, provenance: &mut BTreeMap<String, Provenance>) -> Result<toml::Value, ModelError> {
    match value {
        toml::Value::Table(mut t) if t.contains_key("value") => {
            if let Some(p) = t.remove("provenance") {
                let p: Provenance = p
                    .try_into()
                    .map_err(|e| ModelError::ParamFile(format!("{path}: bad provenance: {e}")))?;
                provenance.insert(path.to_string(), p);
            }
            Ok(t.remove("value").expect("checked above"))
        }
        toml::Value::Table(t) => {
            let mut out = toml::Table::new();
            for (k, v) in t {
                let child = format!("{path}.{k}");
                out.insert(k, strip(v, &child, provenance)?);
            }
            Ok(toml::Value::Table(out))
        }
        leaf => Ok(leaf),
    }
}

impl ParamSet {
    /// Render as a TOML parameter file. Every leaf is written as
    /// `{ value, unit, provenance }`.
    pub fn to_toml_string(&self) -> Result<String, ModelError> {
        let mut root = toml::Table::new();
        let robot = toml::Value::try_from(&self.robot).map_err(|e| ModelError::ParamFile(e.to_string()))?;
        let env = toml::Value::try_from(&self.environment).map_err(|e| ModelError::ParamFile(e.to_string()))?;
        root.insert("robot".into(), annotate(robot, "robot", &self.provenance));
        root.insert("environment".into(), annotate(env, "environment", &self.provenance));
        let body = toml::to_string(&root).map_err(|e| ModelError::ParamFile(e.to_string()))?;
        Ok(format!(
            "# perchdrill parameter file\n# Each entry: {{ value, unit, provenance }}; provenance is one of\n# measured, derived, assumed, tuned.\n\n{body}"
        ))
    }

    /// Parse a parameter file. Entries may be given either as plain values or
    /// as `{ value, unit, provenance }` tables; missing entries take defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let root: toml::Table = text.parse().map_err(|e: toml::de::Error| ModelError::ParamFile(e.to_string()))?;
        let defaults = ParamSet::default();
        let mut provenance = defaults.provenance.clone();
        let mut merged = |section: &str, default: toml::Value| -> Result<toml::Value, ModelError> {
            let mut base = match default {
                toml::Value::Table(t) => t,
                _ => unreachable!("parameter sections are tables"),
            };
            if let Some(v) = root.get(section) {
                let stripped = strip(v.clone(), section, &mut provenance)?;
                merge_tables(&mut base, stripped, section)?;
            }
            Ok(toml::Value::Table(base))
        };
        let robot_v = merged(
            "robot",
            toml::Value::try_from(&defaults.robot).map_err(|e| ModelError::ParamFile(e.to_string()))?,
        )?;
        let env_v = merged(
            "environment",
            toml::Value::try_from(&defaults.environment).map_err(|e| ModelError::ParamFile(e.to_string()))?,
        )?;
        for key in root.keys() {
            if key != "robot" && key != "environment" {
                return Err(ModelError::ParamFile(format!("unknown section `{key}`")));
            }
        }
        let robot: RobotParams = robot_v.try_into().map_err(|e| ModelError::ParamFile(e.to_string()))?;
        let environment: Environment = env_v.try_into().map_err(|e| ModelError::ParamFile(e.to_string()))?;
        robot.validate()?;
        environment.validate()?;
        Ok(Self {
            robot,
            environment,
            provenance,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Value, path: &str) -> Result<(), ModelError> {
    let over = match over {
        toml::Value::Table(t) => t,
        _ => return Err(ModelError::ParamFile(format!("`{path}` must be a table"))),
    };
    for (k, v) in over {
        let child = format!("{path}.{k}");
        match base.get_mut(&k) {
            None => return Err(ModelError::ParamFile(format!("unknown parameter `{child}`"))),
            Some(toml::Value::Table(inner)) if v.is_table() => merge_tables(inner, v, &child)?,
            Some(slot) => {
                // Integers are accepted where floats are expected.
                let v = match (&slot, v) {
                    (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                    (_, v) => v,
                };
                *slot = v;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Vector4};
    use std::f64::consts::FRAC_PI_2;

    fn perched_state(params: &RobotParams, theta: f64, slide: f64) -> SimState {
        let env = Environment::default();
        let anchor = Pose::new(Vec3::new(0.0, 0.3, 1.5), env.perch_orientation());
        let ab = hinge_transform(params, theta, slide);
        SimState {
            body_pose: Pose::from_isometry(&(anchor.isometry() * ab)),
            hinge_theta: theta,
            hinge_slide: slide,
            anchor: Some(anchor),
            gantry_pos: Vec2::new(0.03, -0.02),
            ..SimState::default()
        }
    }

    /// Homogeneous `A <- B` built from elementary matrices, independent of the
    /// isometry code path.
    fn hinge_matrix(params: &RobotParams, theta: f64, slide: f64) -> Matrix4<f64> {
        let (s, c) = theta.sin_cos();
        let rot = Matrix4::new(c, 0.0, s, 0.0, 0.0, 1.0, 0.0, 0.0, -s, 0.0, c, 0.0, 0.0, 0.0, 0.0, 1.0);
        let h = params.hinge_in_body;
        let o = params.attachment_offset;
        let to_hinge_b = Matrix4::new_translation(&Vec3::new(-h[0], -h[1], -h[2]));
        let hinge_in_a = Matrix4::new_translation(&Vec3::new(h[0] - o[0] + slide, h[1] - o[1], h[2] - o[2]));
        hinge_in_a * rot * to_hinge_b
    }

    #[test]
    fn identity_transform() {
        let params = RobotParams::default();
        let s = perched_state(&params, 0.4, 0.01);
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(frame_transform(&s, &params, Frame::Body, Frame::Body, &p), p);
    }

    #[test]
    fn zero_hinge_attachment_origin_is_configured_offset() {
        let params = RobotParams::default();
        let s = SimState::default();
        let a = frame_transform(&s, &params, Frame::Attachment, Frame::Body, &Vec3::zeros());
        assert_relative_eq!(a, params.attachment_offset(), epsilon = 1e-12);
    }

    #[test]
    fn right_angle_hinge_matches_matrix_oracle() {
        let params = RobotParams::default();
        let s = perched_state(&params, FRAC_PI_2, 0.0);
        let m = hinge_matrix(&params, FRAC_PI_2, 0.0).try_inverse().unwrap();
        for k in [0.0, 0.5, 1.0] {
            let p = Vec3::new(k, 0.0, 0.0);
            let got = frame_transform(&s, &params, Frame::Attachment, Frame::Body, &p);
            let want = m * Vector4::new(p.x, p.y, p.z, 1.0);
            assert_relative_eq!(got, want.xyz(), epsilon = 1e-12);
        }
        // the wall-ward axis of A lies along +z of the body at 90 degrees
        let origin = frame_transform(&s, &params, Frame::Attachment, Frame::Body, &Vec3::zeros());
        let tip = frame_transform(&s, &params, Frame::Attachment, Frame::Body, &Vec3::x());
        assert_relative_eq!(tip - origin, Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn unknown_frame_is_rejected() {
        assert!(matches!("Q".parse::<Frame>(), Err(ModelError::UnknownFrame(_))));
        assert_eq!("A".parse::<Frame>().unwrap(), Frame::Attachment);
    }

    #[test]
    fn total_mass_examples() {
        let params = RobotParams::default();
        assert_relative_eq!(total_mass(&params, 0.0).unwrap(), 11.1, epsilon = 1e-12);
        assert_relative_eq!(total_mass(&params, 5.0).unwrap(), 12.1, epsilon = 1e-12);
        let zero = RobotParams {
            mass_base: 0.0,
            mass_positioning: 0.0,
            mass_tool: 0.0,
            ..params.clone()
        };
        assert_eq!(total_mass(&zero, 0.0).unwrap(), 0.0);
        assert!(matches!(total_mass(&params, -1.0), Err(ModelError::NegativeLength(_))));
    }

    #[test]
    fn com_on_hinge_with_tool_centred() {
        let params = RobotParams::default();
        let com = params.com_offset(&Vec2::zeros());
        assert_relative_eq!(com, params.hinge_in_body(), epsilon = 1e-12);
        assert_relative_eq!(params.com_offset(&params.gantry_flight_position()), Vec3::zeros());
    }

    #[test]
    fn friction_coefficient_is_piecewise_linear() {
        let p = RobotParams::default();
        assert_eq!(p.friction_mu(25.0), 0.5);
        assert_eq!(p.friction_mu(-5.0), 0.12);
        assert_relative_eq!(p.friction_mu(10.0), 0.31, epsilon = 1e-12);
    }

    #[test]
    fn wall_coordinates_are_right_handed_from_the_viewer() {
        let env = Environment::default();
        // facing the wall (looking along -x_W), right is +y_W
        assert_relative_eq!(env.wall.right(), Vec3::y(), epsilon = 1e-12);
        assert_relative_eq!(env.wall.up(), Vec3::z(), epsilon = 1e-12);
        let q = env.perch_orientation();
        assert_relative_eq!(q * Vec3::x(), -env.wall.normal, epsilon = 1e-12);
        assert_relative_eq!(q * Vec3::z(), Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn param_file_round_trip_keeps_values_and_provenance() {
        let mut set = ParamSet::default();
        set.robot.slide_friction_force = 14.0;
        set.provenance.insert("robot.slide_friction_force".into(), Provenance::Tuned);
        let text = set.to_toml_string().unwrap();
        assert!(text.contains("provenance = \"measured\""));
        let back = ParamSet::from_toml_str(&text).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn param_file_accepts_partial_plain_values() {
        let set = ParamSet::from_toml_str("[robot]\nslide_friction_force = 25\n[environment]\nambient_temperature = 5.0\n").unwrap();
        assert_eq!(set.robot.slide_friction_force, 25.0);
        assert_eq!(set.environment.ambient_temperature, 5.0);
        assert_eq!(set.robot.mass_base, 6.6);
    }

    #[test]
    fn param_file_rejects_unknown_keys() {
        assert!(ParamSet::from_toml_str("[robot]\nwings = 2\n").is_err());
        assert!(ParamSet::from_toml_str("[rocket]\n").is_err());
    }

    #[test]
    fn state_validation_catches_violations() {
        let params = RobotParams::default();
        let mut s = SimState::default();
        assert!(s.validate(&params).is_ok());
        s.hinge_theta = 2.0;
        assert!(s.validate(&params).is_err());
        s.hinge_theta = 0.0;
        s.drill_depth = -1e-3;
        assert!(s.validate(&params).is_err());
    }
}
