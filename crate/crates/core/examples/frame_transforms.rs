//! Where the tooltip and cups sit in the world as the tool table tilts from
//! flight position onto the wall.

use std::f64::consts::FRAC_PI_2;

use perchdrill::dynamics::Dynamics;
use perchdrill::model::{frame_transform, Frame, ParamSet, Vec3};

fn main() {
    let p = ParamSet::default();
    let d = Dynamics::new(p.robot.clone(), p.environment.clone());
    let wall = &p.environment.wall;
    println!("{:>6} {:>28} {:>28}", "theta", "body origin (world) [m]", "tooltip (wall r, u) [mm]");
    for step in 0..=6 {
        let theta = FRAC_PI_2 * step as f64 / 6.0;
        let s = d.perched_state(Vec3::new(0.0, 0.0, 1.5), theta, 0.0);
        let body = frame_transform(&s, &p.robot, Frame::Body, Frame::World, &Vec3::zeros());
        let tip = frame_transform(&s, &p.robot, Frame::Tool, Frame::World, &Vec3::zeros());
        let w = wall.wall_coords(&tip);
        println!(
            "{:>5.0}° {:>9.3} {:>8.3} {:>8.3}   {:>9.1} {:>9.1}  ({:.1} mm off the wall)",
            theta.to_degrees(),
            body.x,
            body.y,
            body.z,
            w.x * 1e3,
            (w.y - 1.5) * 1e3,
            wall.distance(&tip) * 1e3
        );
    }
    let cups = p.robot.cup_positions();
    let s = d.perched_state(Vec3::new(0.0, 0.0, 1.5), 0.0, 0.0);
    for (i, c) in cups.iter().enumerate() {
        let w = frame_transform(&s, &p.robot, Frame::Attachment, Frame::World, &Vec3::from(*c));
        println!("cup {i} in world: ({:.3}, {:.3}, {:.3}) m", w.x, w.y, w.z);
    }
}
