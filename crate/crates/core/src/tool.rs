//! Tool positioning gantry, drilling progress, the laser-cross camera model
//! and hole statistics.
//!
//! The gantry moves the tool in the body `x`/`y` plane. Once the table is
//! tilted onto the wall, body `x` points down the wall and body `y` along it,
//! so the 210 mm travel is vertical and the 150 mm travel is lateral.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{Material, RobotParams, Vec2};

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("gantry target ({x:.4}, {y:.4}) m outside the workspace")]
    OutsideWorkspace { x: f64, y: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GantryState {
    /// Tool position, m.
    pub position: Vec2,
    /// Drive position, m. Differs from `position` by the backlash taken up.
    pub drive: Vec2,
    pub target: Vec2,
    pub speed_limit: f64,
    pub backlash: f64,
    /// Full extent along body x and y, m; the box is centred on the origin.
    pub workspace: Vec2,
    last_dir: [i8; 2],
    slack: [f64; 2],
}

impl GantryState {
    pub fn new(params: &RobotParams, position: Vec2) -> Self {
        Self {
            position,
            drive: position,
            target: position,
            speed_limit: params.gantry_speed_limit,
            backlash: params.gantry_backlash,
            workspace: Vec2::from(params.gantry_workspace),
            last_dir: [0; 2],
            slack: [0.0; 2],
        }
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        let h = self.workspace * 0.5;
        p.x.abs() <= h.x + 1e-12 && p.y.abs() <= h.y + 1e-12
    }

    pub fn set_target(&mut self, target: Vec2) -> Result<(), ToolError> {
        if !self.contains(&target) {
            return Err(ToolError::OutsideWorkspace { x: target.x, y: target.y });
        }
        self.target = target;
        Ok(())
    }

    pub fn arrived(&self) -> bool {
        (self.drive - self.target).norm() <= 1e-9
    }
}

/// Move the drive towards its target at the speed limit on each axis. After a
/// direction reversal the first `backlash` of drive travel does not move the
/// tool.
pub fn gantry_step(state: &GantryState, dt: f64) -> GantryState {
    let mut s = *state;
    for i in 0..2 {
        let err = s.target[i] - s.drive[i];
        if err.abs() <= 1e-12 {
            s.drive[i] = s.target[i];
            continue;
        }
        let dir: i8 = if err > 0.0 { 1 } else { -1 };
        if s.last_dir[i] != 0 && s.last_dir[i] != dir {
            s.slack[i] = s.backlash;
        }
        s.last_dir[i] = dir;
        let mv = err.abs().min(s.speed_limit * dt);
        let taken = s.slack[i].min(mv);
        s.slack[i] -= taken;
        let sign = f64::from(dir);
        s.drive[i] = if mv == err.abs() { s.target[i] } else { s.drive[i] + sign * mv };
        s.position[i] += sign * (mv - taken);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    HammerDrill,
    ImpactWrench,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub kind: ToolKind,
    pub mass: f64,
    pub min_feed_force: f64,
    /// m/(N s) of feed above the minimum.
    pub drill_rate_coeff: f64,
    pub max_depth: f64,
}

impl ToolSpec {
    pub fn hammer_drill(material: &Material) -> Self {
        Self {
            kind: ToolKind::HammerDrill,
            mass: 2.3,
            min_feed_force: material.min_feed_force,
            drill_rate_coeff: material.drill_rate_coeff,
            max_depth: 0.08,
        }
    }

    /// Screw driving treated as a drill that needs less push; the screw is
    /// set once the target depth is reached.
    pub fn impact_wrench(material: &Material) -> Self {
        Self {
            kind: ToolKind::ImpactWrench,
            mass: 2.3,
            min_feed_force: 40.0,
            drill_rate_coeff: material.drill_rate_coeff,
            max_depth: 0.05,
        }
    }
}

/// Depth after cutting for `dt` with the given feed force.
pub fn drill_step(feed_force: f64, spec: &ToolSpec, depth: f64, dt: f64) -> f64 {
    let excess = (feed_force - spec.min_feed_force).max(0.0);
    (depth + spec.drill_rate_coeff * excess * dt).min(spec.max_depth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingModel {
    /// Systematic offset of the laser cross from the tooltip, wall (right, up), m.
    pub laser_offset: Vec2,
    /// Wall distance covered by one camera pixel, m.
    pub pixel_pitch: f64,
    pub camera_resolution: [u32; 2],
    pub pointing_noise_sigma: f64,
    /// Round to whole pixels; off gives a continuous reading.
    pub quantize: bool,
}

impl Default for SensingModel {
    fn default() -> Self {
        Self {
            laser_offset: Vec2::new(0.0065, 0.0075),
            pixel_pitch: 0.004,
            camera_resolution: [640, 480],
            pointing_noise_sigma: 0.0012,
            quantize: true,
        }
    }
}

impl SensingModel {
    pub fn noiseless(mut self) -> Self {
        self.pointing_noise_sigma = 0.0;
        self.quantize = false;
        self
    }

    pub fn half_field(&self) -> Vec2 {
        Vec2::new(
            0.5 * f64::from(self.camera_resolution[0]) * self.pixel_pitch,
            0.5 * f64::from(self.camera_resolution[1]) * self.pixel_pitch,
        )
    }
}

/// Pixel coordinates (right, up) of the laser cross in a camera image centred
/// on the operator's target, or `None` when the cross is outside the image.
/// `tool_on_wall` is the tooltip relative to the target, wall (right, up), m.
pub fn observe_laser_cross<R: Rng + ?Sized>(tool_on_wall: &Vec2, model: &SensingModel, rng: &mut R) -> Option<Vec2> {
    let mut p = tool_on_wall + model.laser_offset;
    if model.pointing_noise_sigma > 0.0 {
        let n = Normal::new(0.0, model.pointing_noise_sigma).expect("positive sigma");
        p += Vec2::new(n.sample(rng), n.sample(rng));
    }
    let half = model.half_field();
    if p.x.abs() > half.x || p.y.abs() > half.y {
        return None;
    }
    let px = p / model.pixel_pitch;
    Some(if model.quantize { px.map(f64::round) } else { px })
}

/// Accuracy and precision of a set of hole offsets from their targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleStats {
    pub mean_offset: Vec2,
    /// Length of the mean offset, m.
    pub accuracy: f64,
    /// Largest distance of any hole from the mean hole, m.
    pub precision: f64,
    pub count: usize,
}

pub fn hole_stats(offsets: &[Vec2]) -> Option<HoleStats> {
    if offsets.is_empty() {
        return None;
    }
    let n = offsets.len() as f64;
    let mean = offsets.iter().fold(Vec2::zeros(), |a, o| a + o) / n;
    let precision = offsets.iter().map(|o| (o - mean).norm()).fold(0.0, f64::max);
    Some(HoleStats {
        mean_offset: mean,
        accuracy: mean.norm(),
        precision,
        count: offsets.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleRecord {
    pub run_id: usize,
    pub target: Vec2,
    pub hole: Vec2,
    pub excluded: bool,
    /// Distance the cups slid while cutting, m.
    pub slip: f64,
}

impl HoleRecord {
    pub fn offset(&self) -> Vec2 {
        self.hole - self.target
    }
}

/// Frozen column order of the hole report.
pub const HOLE_CSV_HEADER: [&str; 7] = [
    "run_id",
    "target_x_mm",
    "target_y_mm",
    "hole_x_mm",
    "hole_y_mm",
    "offset_norm_mm",
    "excluded",
];

pub fn hole_csv_row(r: &HoleRecord) -> [String; 7] {
    [
        r.run_id.to_string(),
        format!("{:.4}", r.target.x * 1e3),
        format!("{:.4}", r.target.y * 1e3),
        format!("{:.4}", r.hole.x * 1e3),
        format!("{:.4}", r.hole.y * 1e3),
        format!("{:.4}", r.offset().norm() * 1e3),
        r.excluded.to_string(),
    ]
}

pub fn write_hole_csv<W: Write>(out: W, records: &[HoleRecord]) -> Result<(), ToolError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HOLE_CSV_HEADER)?;
    for r in records {
        w.write_record(hole_csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Running average of the tooltip position while the bit is in the wall.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoreTracker {
    sum: Vec2,
    count: usize,
}

impl BoreTracker {
    pub fn record(&mut self, p: &Vec2) {
        self.sum += p;
        self.count += 1;
    }

    pub fn centroid(&self) -> Option<Vec2> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Environment;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gantry() -> GantryState {
        GantryState::new(&RobotParams::default(), Vec2::zeros())
    }

    fn run_until_arrived(mut g: GantryState, dt: f64) -> (GantryState, f64) {
        let mut t = 0.0;
        while !g.arrived() {
            g = gantry_step(&g, dt);
            t += dt;
            assert!(t < 100.0);
        }
        (g, t)
    }

    #[test]
    fn target_equal_to_current_does_not_move() {
        let g = gantry();
        assert_eq!(gantry_step(&g, 0.01), g);
    }

    #[test]
    fn corner_reached_within_rate_limit() {
        let mut g = gantry();
        let corner = Vec2::new(0.105, 0.075);
        g.set_target(corner).unwrap();
        let (g, t) = run_until_arrived(g, 1e-3);
        let bound = corner.x.max(corner.y) / g.speed_limit;
        assert!(t <= bound * 1.1, "{t} vs {bound}");
        assert_relative_eq!(g.position, corner, epsilon = 1e-12);
    }

    #[test]
    fn outside_target_rejected() {
        let mut g = gantry();
        assert!(g.set_target(Vec2::new(0.2, 0.0)).is_err());
        assert!(g.set_target(Vec2::new(0.0, -0.08)).is_err());
    }

    proptest! {
        #[test]
        fn reversals_lose_one_backlash_each(steps in prop::collection::vec(0.002f64..0.03, 1..8)) {
            // alternate directions along x; oracle: tool ends at the final
            // drive target minus the signed backlash of every reversal
            let mut g = gantry();
            let mut x = 0.0;
            let mut lost = 0.0;
            let mut prev_dir = 0.0;
            for (k, step) in steps.iter().enumerate() {
                let dir = if k % 2 == 0 { 1.0 } else { -1.0 };
                x = (x + dir * step).clamp(-0.1, 0.1);
                if prev_dir != 0.0 && dir != prev_dir {
                    lost += dir * g.backlash;
                }
                prev_dir = dir;
                g.set_target(Vec2::new(x, 0.0)).unwrap();
                g = run_until_arrived(g, 1e-3).0;
            }
            prop_assert!((g.position.x - (x - lost)).abs() < 1e-12);
            prop_assert!((g.drive.x - x).abs() < 1e-12);
        }

        #[test]
        fn gantry_stays_in_workspace(tx in -0.105f64..0.105, ty in -0.075f64..0.075) {
            let mut g = gantry();
            g.set_target(Vec2::new(tx, ty)).unwrap();
            for _ in 0..5000 {
                g = gantry_step(&g, 1e-3);
                prop_assert!(g.contains(&g.position));
            }
        }
    }

    #[test]
    fn drilling_progress_examples() {
        let spec = ToolSpec::hammer_drill(&Environment::default().material);
        assert_eq!(drill_step(70.0, &spec, 0.0, 60.0), 0.0);
        assert_eq!(drill_step(0.0, &spec, 0.0, 60.0), 0.0);
        let mut d = 0.0;
        for _ in 0..60_000 {
            d = drill_step(110.0, &spec, d, 1e-3);
        }
        assert_relative_eq!(d, 0.036, epsilon = 1e-9);
        let wrench = ToolSpec::impact_wrench(&Environment::default().material);
        assert!(drill_step(60.0, &wrench, 0.0, 1.0) > 0.0);
        assert_eq!(drill_step(1e6, &spec, 0.0, 1.0), spec.max_depth);
    }

    #[test]
    fn laser_cross_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exact = SensingModel {
            laser_offset: Vec2::zeros(),
            pointing_noise_sigma: 0.0,
            ..Default::default()
        };
        assert_eq!(observe_laser_cross(&Vec2::new(0.012, -0.008), &exact, &mut rng), Some(Vec2::new(3.0, -2.0)));
        // two positions inside one pixel read the same
        let a = observe_laser_cross(&Vec2::new(0.0121, 0.0), &exact, &mut rng);
        let b = observe_laser_cross(&Vec2::new(0.0135, 0.0), &exact, &mut rng);
        assert_eq!(a, b);
        let shifted = SensingModel {
            laser_offset: Vec2::new(-0.0065, -0.0075),
            ..exact
        };
        let p = observe_laser_cross(&Vec2::zeros(), &shifted, &mut rng).unwrap();
        assert!(p.x < 0.0 && p.y < 0.0, "cross drawn bottom-left: {p}");
        assert_eq!(observe_laser_cross(&Vec2::new(5.0, 0.0), &exact, &mut rng), None);
    }

    #[test]
    fn statistics_on_a_fixture() {
        let offsets = [
            Vec2::new(0.010, 0.0),
            Vec2::new(0.012, 0.002),
            Vec2::new(0.008, -0.002),
            Vec2::new(0.010, 0.004),
        ];
        let s = hole_stats(&offsets).unwrap();
        assert_relative_eq!(s.mean_offset, Vec2::new(0.010, 0.001), epsilon = 1e-15);
        assert_relative_eq!(s.accuracy, (0.010f64.powi(2) + 0.001f64.powi(2)).sqrt(), epsilon = 1e-15);
        let d = [
            (0.0f64.powi(2) + 0.001f64.powi(2)).sqrt(),
            (0.002f64.powi(2) + 0.001f64.powi(2)).sqrt(),
            (0.002f64.powi(2) + 0.003f64.powi(2)).sqrt(),
            (0.0f64.powi(2) + 0.003f64.powi(2)).sqrt(),
        ];
        assert_relative_eq!(s.precision, d.iter().cloned().fold(0.0, f64::max), epsilon = 1e-15);
        assert!(hole_stats(&[]).is_none());
    }

    #[test]
    fn unbiased_sensing_gives_accuracy_below_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 0.002).unwrap();
        let offsets: Vec<Vec2> = (0..20_000).map(|_| Vec2::new(n.sample(&mut rng), n.sample(&mut rng))).collect();
        let s = hole_stats(&offsets).unwrap();
        assert!(s.accuracy < 1e-4);
        assert!(s.precision > 0.005);
    }

    #[test]
    fn csv_has_frozen_header() {
        let rec = HoleRecord {
            run_id: 0,
            target: Vec2::new(0.04, 0.0),
            hole: Vec2::new(0.034, -0.008),
            excluded: false,
            slip: 0.0,
        };
        let mut buf = Vec::new();
        write_hole_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), HOLE_CSV_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "0,40.0000,0.0000,34.0000,-8.0000,10.0000,false");
    }
}
