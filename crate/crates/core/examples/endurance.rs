//! Flight time against battery mass, with and without the extra hover power
//! a heavier pack costs.

use perchdrill::experiments::endurance::{endurance, EnduranceConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>8} {:>12} {:>14}", "kg", "fixed [s]", "corrected [s]");
    for m in [0.5, 1.0, 1.5, 2.0, 3.0] {
        let fixed = EnduranceConfig { battery_mass: m, ..EnduranceConfig::default() };
        let corrected = EnduranceConfig { added_mass_correction: true, ..fixed };
        println!("{m:>8.1} {:>12.1} {:>14.1}", endurance(&fixed)?, endurance(&corrected)?);
    }
    Ok(())
}
