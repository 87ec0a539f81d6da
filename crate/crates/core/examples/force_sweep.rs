//! Feed force and power draw across rotor speeds with the tool on the wall.
//!
//! ```text
//! cargo run --example force_sweep
//! ```

use perchdrill::experiments::force_power::sweep;
use perchdrill::experiments::force_power::hover_power;
use perchdrill::model::ParamSet;

fn main() {
    let params = ParamSet::default();
    println!("{:>8} {:>12} {:>10}", "rpm", "feed [N]", "power [W]");
    for row in sweep(&params) {
        println!("{:>8.0} {:>12.2} {:>10.1}", row.rpm, row.feed_force, row.power);
    }
    println!("hover power: {:.1} W", hover_power(&params));
}
