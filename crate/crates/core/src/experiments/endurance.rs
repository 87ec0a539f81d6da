//! Flight time on one battery.
//!
//! Mission power is taken as the hover-equivalent draw, which is nearly the
//! same on the wall while drilling. With the added-mass correction, hover
//! power scales with total mass to the power 1.5 (momentum theory), relative
//! to the mass the reference power was measured at.

use serde::{Deserialize, Serialize};

use super::{Check, ExperimentError, ExperimentReport};
use crate::model::Provenance;
use crate::rotor::NOMINAL_HOVER_POWER;

const JOULES_PER_WH: f64 = 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnduranceConfig {
    pub battery_mass: f64,
    /// Wh/kg.
    pub specific_energy: f64,
    pub mission_power: f64,
    /// Take-off mass at which `mission_power` holds, kg.
    pub reference_mass: f64,
    /// Battery mass included in `reference_mass`, kg.
    pub reference_battery_mass: f64,
    pub added_mass_correction: bool,
}

impl Default for EnduranceConfig {
    fn default() -> Self {
        Self {
            battery_mass: 1.0,
            specific_energy: 139.0,
            mission_power: NOMINAL_HOVER_POWER,
            reference_mass: 11.1,
            reference_battery_mass: 1.0,
            added_mass_correction: false,
        }
    }
}

impl EnduranceConfig {
    pub fn power(&self) -> f64 {
        if !self.added_mass_correction {
            return self.mission_power;
        }
        let m = self.reference_mass - self.reference_battery_mass + self.battery_mass;
        self.mission_power * (m / self.reference_mass).powf(1.5)
    }
}

/// Seconds of flight or manipulation from the battery energy.
pub fn endurance(cfg: &EnduranceConfig) -> Result<f64, ExperimentError> {
    if !(cfg.battery_mass > 0.0 && cfg.specific_energy > 0.0 && cfg.mission_power > 0.0) {
        return Err(ExperimentError::InvalidInput(format!(
            "battery mass {} kg, specific energy {} Wh/kg and power {} W must be positive",
            cfg.battery_mass, cfg.specific_energy, cfg.mission_power
        )));
    }
    Ok(cfg.battery_mass * cfg.specific_energy * JOULES_PER_WH / cfg.power())
}

pub fn run_endurance(battery_mass: f64, specific_energy: f64) -> Result<f64, ExperimentError> {
    endurance(&EnduranceConfig {
        battery_mass,
        specific_energy,
        ..EnduranceConfig::default()
    })
}

pub fn endurance_report(cfg: &EnduranceConfig) -> Result<ExperimentReport, ExperimentError> {
    let t = endurance(cfg)?;
    let mut report = ExperimentReport::new("endurance", 0);
    report.summary.insert("endurance_s".into(), t);
    report.summary.insert("power_w".into(), cfg.power());
    report.summary.insert("energy_j".into(), cfg.battery_mass * cfg.specific_energy * JOULES_PER_WH);
    report.records.push(serde_json::json!(cfg));
    report.checks.push(Check::around("endurance_s", t, 250.0, 25.0, "s", Provenance::Measured));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_without_correction() {
        let one = run_endurance(1.0, 139.0).unwrap();
        let two = run_endurance(2.0, 139.0).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-9);
        assert!(run_endurance(0.0, 139.0).is_err());
        assert!(run_endurance(1.0, -1.0).is_err());
    }

    #[test]
    fn added_mass_shortens_heavier_packs() {
        let cfg = EnduranceConfig {
            battery_mass: 2.0,
            added_mass_correction: true,
            ..EnduranceConfig::default()
        };
        // momentum theory: P2/P1 = (m2/m1)^1.5 with m2 = 12.1 kg, m1 = 11.1 kg
        let expected = 2.0 * 139.0 * 3600.0 / (2000.0 * (12.1f64 / 11.1).powf(1.5));
        assert!((endurance(&cfg).unwrap() - expected).abs() < 1e-9);
        assert!(endurance(&cfg).unwrap() < 500.0);
        let same = EnduranceConfig {
            added_mass_correction: true,
            ..EnduranceConfig::default()
        };
        assert!((endurance(&same).unwrap() - run_endurance(1.0, 139.0).unwrap()).abs() < 1e-12);
    }
}
