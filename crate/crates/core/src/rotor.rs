//! Rotor thrust, drag torque and electrical power.

use serde::{Deserialize, Serialize};

use crate::model::{total_mass, RobotParams, Vec3};

/// Rotor indices.
pub const FRONT_LEFT: usize = 0;
pub const FRONT_RIGHT: usize = 1;
pub const BACK_LEFT: usize = 2;
pub const BACK_RIGHT: usize = 3;

/// Hover power the default power coefficient is fitted to, W.
pub const NOMINAL_HOVER_POWER: f64 = 2000.0;
/// Per-rotor speed and total thrust during drilling, used to fit `k_f`.
pub const DRILLING_ANCHOR: ThrustAnchor = ThrustAnchor {
    rpm: 3000.0,
    total_thrust: 110.0,
    rotors: 4,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RotorError {
    #[error("at least one thrust anchor and one power anchor are required")]
    EmptyAnchors,
    #[error("degenerate anchor set: {0}")]
    Degenerate(&'static str),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench {
            force: self.force + rhs.force,
            torque: self.torque + rhs.torque,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThrustAnchor {
    /// Speed of each participating rotor.
    pub rpm: f64,
    pub total_thrust: f64,
    pub rotors: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerAnchor {
    pub speeds: [f64; 4],
    pub watts: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotorFit {
    pub k_f: f64,
    pub k_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotorModel {
    pub k_f: f64,
    pub k_tau: f64,
    pub k_p: f64,
    pub avionics_power: f64,
    pub spin_directions: [f64; 4],
    pub positions: [Vec3; 4],
    pub reversible: [bool; 4],
    pub speed_limit: f64,
    /// Per-rotor thrust multipliers; 1.0 for a balanced set.
    pub thrust_scale: [f64; 4],
}

impl RotorModel {
    pub fn from_params(params: &RobotParams) -> Self {
        Self {
            k_f: params.rotor_thrust_coeff,
            k_tau: params.rotor_drag_coeff,
            k_p: params.rotor_power_coeff,
            avionics_power: params.avionics_power,
            spin_directions: params.rotor_spin_directions,
            positions: params.rotor_positions.map(Vec3::from),
            reversible: [true, true, false, false],
            speed_limit: params.rotor_speed_limit,
            thrust_scale: [1.0; 4],
        }
    }

    /// Thrust along the rotor axis; negative when the rotor spins backwards.
    pub fn thrust(&self, i: usize, rpm: f64) -> f64 {
        self.thrust_scale[i] * self.k_f * rpm * rpm.abs()
    }

    pub fn hover_rpm(&self, mass: f64, gravity: f64) -> f64 {
        (mass * gravity / (4.0 * self.k_f)).sqrt()
    }

    /// Clamp commands to the speed limit. Back rotors may only reverse when
    /// `allow_back_reverse` is set. Returns the clamped speeds and whether any
    /// command was modified.
    pub fn saturate(&self, cmds: [f64; 4], allow_back_reverse: bool) -> ([f64; 4], bool) {
        let mut out = cmds;
        let mut hit = false;
        for (i, w) in out.iter_mut().enumerate() {
            let lo = if self.reversible[i] || allow_back_reverse {
                -self.speed_limit
            } else {
                0.0
            };
            let c = if w.is_finite() { w.clamp(lo, self.speed_limit) } else { 0.0 };
            if c != *w {
                hit = true;
            }
            *w = c;
        }
        (out, hit)
    }
}

/// Net wrench of the four rotors about the body origin, in `B`.
pub fn rotor_wrench(speeds: &[f64; 4], model: &RotorModel) -> Wrench {
    let mut w = Wrench::default();
    for (i, &rpm) in speeds.iter().enumerate() {
        let t = model.thrust(i, rpm);
        let f = Vec3::new(0.0, 0.0, t);
        w.force += f;
        w.torque += model.positions[i].cross(&f);
        // reaction torque opposes the spin direction
        w.torque.z -= model.spin_directions[i] * model.k_tau * rpm * rpm.abs();
    }
    w
}

pub fn power_draw(speeds: &[f64; 4], model: &RotorModel) -> f64 {
    model.avionics_power + speeds.iter().map(|w| model.k_p * w.abs().powi(3)).sum::<f64>()
}

/// Least-squares `k_f` through thrust operating points.
pub fn fit_thrust_coeff(anchors: &[ThrustAnchor]) -> Result<f64, RotorError> {
    if anchors.is_empty() {
        return Err(RotorError::EmptyAnchors);
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for a in anchors {
        let x = a.rotors as f64 * a.rpm * a.rpm;
        sxy += x * a.total_thrust;
        sxx += x * x;
    }
    if sxx == 0.0 {
        return Err(RotorError::Degenerate("thrust anchors at zero speed"));
    }
    Ok(sxy / sxx)
}

/// Least-squares `k_p` through power operating points, after removing the
/// constant avionics draw.
pub fn fit_power_coeff(anchors: &[PowerAnchor], avionics_power: f64) -> Result<f64, RotorError> {
    if anchors.is_empty() {
        return Err(RotorError::EmptyAnchors);
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for a in anchors {
        let x: f64 = a.speeds.iter().map(|w| w.abs().powi(3)).sum();
        sxy += x * (a.watts - avionics_power);
        sxx += x * x;
    }
    if sxx == 0.0 {
        return Err(RotorError::Degenerate("power anchors at zero speed"));
    }
    Ok(sxy / sxx)
}

pub fn calibrate_rotor_coeffs(
    thrust_anchors: &[ThrustAnchor],
    power_anchors: &[PowerAnchor],
    avionics_power: f64,
) -> Result<RotorFit, RotorError> {
    if thrust_anchors.is_empty() || power_anchors.is_empty() {
        return Err(RotorError::EmptyAnchors);
    }
    Ok(RotorFit {
        k_f: fit_thrust_coeff(thrust_anchors)?,
        k_p: fit_power_coeff(power_anchors, avionics_power)?,
    })
}

/// Fit used for the default parameter set: `k_f` from the drilling operating
/// point, then `k_p` so that hover at zero tether length draws the nominal
/// hover power.
pub fn calibrate_default(params: &RobotParams) -> Result<RotorFit, RotorError> {
    let k_f = fit_thrust_coeff(&[DRILLING_ANCHOR])?;
    let mass = total_mass(params, 0.0).map_err(|_| RotorError::Degenerate("mass"))?;
    let hover = (mass * 9.81 / (4.0 * k_f)).sqrt();
    let power = [PowerAnchor {
        speeds: [hover; 4],
        watts: NOMINAL_HOVER_POWER,
    }];
    calibrate_rotor_coeffs(&[DRILLING_ANCHOR], &power, params.avionics_power)
}
