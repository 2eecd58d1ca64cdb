//! Hazard functions and duration pmfs describe the same thing. Converts
//! back and forth and shows the cap that makes a finite hazard proper.

use bosd::model::{duration_from_hazard, hazard_from_duration, DurationPmf, HazardFn};

fn main() -> bosd::Result<()> {
    let pmf = DurationPmf::new(vec![0.1, 0.2, 0.4, 0.2, 0.1])?;
    let hazard = hazard_from_duration(&pmf);
    println!("pmf      {:?}", pmf.mass());
    println!("hazard   {:?}", hazard.values());
    println!("survival {:?}", pmf.survival());
    println!("back     {:?}", duration_from_hazard(&hazard).mass());

    // A constant hazard is a geometric duration; the last entry carries the
    // tail once the hazard is capped at D_max.
    let c = HazardFn::constant(0.3, 8)?;
    println!("capped constant hazard {:?}", c.capped().values());
    println!("its duration pmf       {:?}", c.to_duration().mass());
    println!("mean duration          {:.3}", c.to_duration().mean());
    Ok(())
}
