use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use perchdrill::command::{OperationMode, OperatorCommand};
use perchdrill::experiments::perching::{reachable, truncated_normal, workspace_half_extent_on_wall, PerchingConfig};
use perchdrill::mission::is_valid_trace_prefix;
use perchdrill::model::{frame_transform, Frame, ParamSet, Pose, SimState, Twist, Vec2, Vec3};
use perchdrill::sim::{mission_start, SimConfig, Simulator};

fn frame() -> impl Strategy<Value = Frame> {
    prop_oneof![Just(Frame::World), Just(Frame::Body), Just(Frame::Attachment), Just(Frame::Tool)]
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn state() -> impl Strategy<Value = SimState> {
    (
        vec3(5.0),
        vec3(PI),
        vec3(2.0),
        0.0..FRAC_PI_2,
        0.0..0.1f64,
        prop::array::uniform4(0.0..3500.0f64),
        prop::array::uniform2(0.0..80_000.0f64),
        prop::array::uniform2(any::<bool>()),
        (-0.1..0.1f64, -0.07..0.07f64),
        0.0..0.03f64,
        0.0..500.0f64,
        prop::option::of(vec3(3.0)),
    )
        .prop_map(|(p, axis, v, theta, slide, rotors, cups, attached, (gx, gy), depth, time, anchor)| SimState {
            body_pose: Pose::new(p, UnitQuaternion::from_scaled_axis(axis)),
            body_twist: Twist {
                linear: v,
                angular: v * 0.5,
            },
            hinge_theta: theta,
            hinge_slide: slide,
            hinge_rates: [v.x, v.y],
            rotor_speeds: rotors,
            cup_pressures: cups,
            attached,
            gantry_pos: Vec2::new(gx, gy),
            drill_depth: depth,
            time,
            anchor: anchor.map(|a| Pose::new(a, UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, PI)))),
        })
}

proptest! {
    #[test]
    fn state_survives_json(s in state()) {
        let text = serde_json::to_string(&s).unwrap();
        let back: SimState = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn frame_round_trip(s in state(), from in frame(), to in frame(), x in vec3(3.0)) {
        let p = ParamSet::default();
        let there = frame_transform(&s, &p.robot, from, to, &x);
        let back = frame_transform(&s, &p.robot, to, from, &there);
        prop_assert!((back - x).norm() < 1e-9);
    }

    #[test]
    fn frame_transform_preserves_distances(s in state(), from in frame(), to in frame(), a in vec3(3.0), b in vec3(3.0)) {
        let p = ParamSet::default();
        let ta = frame_transform(&s, &p.robot, from, to, &a);
        let tb = frame_transform(&s, &p.robot, from, to, &b);
        prop_assert!(((ta - tb).norm() - (a - b).norm()).abs() < 1e-9);
    }

    #[test]
    fn truncated_draws_stay_in_bounds(seed in any::<u64>(), sigma in 0.001..0.2f64, bound in 0.01..0.3f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            prop_assert!(truncated_normal(sigma, bound, &mut rng).abs() <= bound);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mode_trace_stays_in_the_mission_language(cmds in prop::collection::vec((0usize..5, any::<bool>(), 0u8..6), 1..60)) {
        let params = ParamSet::default();
        let config = SimConfig { record_telemetry: false, record_events: false, ..SimConfig::default() };
        let mut sim = Simulator::new(&params, config, mission_start(&params)).unwrap();
        let modes = [OperationMode::Flight, OperationMode::Perching, OperationMode::Rotation, OperationMode::Manipulation, OperationMode::Detachment];
        let heading = params.environment.wall_heading();
        for (m, flag, k) in cmds {
            let cmd = match k {
                0 => OperatorCommand::SetMode { mode: modes[m] },
                1 => OperatorCommand::Pumps { on: flag },
                2 => OperatorCommand::SetFlightRef { velocity: [if flag { 0.2 } else { 0.0 }, 0.0, 0.0], heading },
                3 => OperatorCommand::RampDownRotors,
                4 => OperatorCommand::RotationThrottle { value: if flag { 0.5 } else { -0.5 } },
                _ => OperatorCommand::ToolPower { on: flag },
            };
            let _ = sim.command(&cmd);
            sim.run_until(sim.time() + 0.25).unwrap();
            prop_assert!(is_valid_trace_prefix(&sim.mode_trace), "{:?}", sim.mode_trace);
            prop_assert!(sim.locks_consistent());
            prop_assert!(!sim.drill_on || sim.mode == OperationMode::Manipulation);
        }
    }
}

/// Standard normal CDF by Simpson integration of the density from zero.
fn phi(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
    let mut sum = pdf(0.0) + pdf(x);
    for i in 1..n {
        sum += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + sum * h / 3.0
}

#[test]
fn reachable_fraction_matches_truncated_normal_oracle() {
    let p = ParamSet::default();
    let cfg = PerchingConfig::default();
    let h = workspace_half_extent_on_wall(&p);
    let inside = |half: f64| {
        let a = (half / cfg.scatter_sigma).min(cfg.truncation / cfg.scatter_sigma);
        let b = cfg.truncation / cfg.scatter_sigma;
        (2.0 * phi(a) - 1.0) / (2.0 * phi(b) - 1.0)
    };
    let expected = inside(h.x) * inside(h.y);
    assert!((expected - 0.9077).abs() < 5e-4, "oracle {expected}");

    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let hits = (0..n)
        .filter(|_| {
            let o = Vec2::new(
                truncated_normal(cfg.scatter_sigma, cfg.truncation, &mut rng),
                truncated_normal(cfg.scatter_sigma, cfg.truncation, &mut rng),
            );
            reachable(&p, &o)
        })
        .count();
    let frac = hits as f64 / n as f64;
    let sd = (expected * (1.0 - expected) / n as f64).sqrt();
    assert!((frac - expected).abs() < 4.0 * sd, "sampled {frac}, oracle {expected}");
}
