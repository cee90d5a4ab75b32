//! Modulus of continuity of the Oseledets data of a Schrödinger cocycle in
//! the energy.

use osl_lab::dynamics::BaseSystem;
use osl_lab::grassmann::Signature;
use osl_lab::ldtlab::{continuity_experiment, nonincreasing_along, ContinuityOptions, Family, Target};

fn main() -> osl_lab::Result<()> {
    let base = BaseSystem::golden_rotation();
    let family = Family::EnergyShift { energy: 0.0, coupling: 3.0 };
    let h: Vec<f64> = (0..7).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect();
    for target in [Target::Direction, Target::Filtration, Target::Decomposition] {
        let opts = ContinuityOptions {
            n: 512,
            samples: 200,
            seed: 1,
            target,
            tau: Signature::new(2, vec![1])?,
            restrict_to: None,
            alpha_trial: 0.5,
        };
        let (records, fit) = continuity_experiment(&family, &h, &base, &opts)?;
        println!("{target:?}");
        for r in &records {
            println!("  h = {:.2e}  mean {:.3e}  q90 {:.3e}", r.h, r.mean_dist, r.q90_dist);
        }
        let alpha = fit.map_or(f64::NAN, |f| f.alpha);
        println!("  alpha = {alpha:.3}, monotone = {}", nonincreasing_along(&records));
    }
    Ok(())
}
