//! The avalanche principle on generated chains and the avalanche times of
//! a Schrödinger cocycle.

use osl_lab::cocycle::Cocycle;
use osl_lab::dynamics::BaseSystem;
use osl_lab::oseledets::{ap_check, avalanche_times, doubling_sequence, random_ap_chain};

fn main() -> osl_lab::Result<()> {
    let (kappa, eps) = (1e-4, 0.1);
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let chain = random_ap_chain(seed, 60, 2e4, 0.3);
        let r = ap_check(&chain, kappa, eps)?;
        assert!(r.within_bound);
        worst = worst.max(r.measured_constant);
    }
    println!("200 chains of length 60: worst measured constant {worst:.3} (bound 100)");

    println!("\ndoubling sequence from 10 to 1000, eps = 0.1: {:?}", doubling_sequence(10, 1000, 0.1)?);

    let a = Cocycle::schrodinger(0.0, 3.0)?;
    let base = BaseSystem::golden_rotation();
    let x = base.sample_phases(1, 3).remove(0);
    let schedule = avalanche_times(&a, &base, &x, 0.2, 2.19, 16, 1000)?;
    println!("\navalanche times for n0 = 16, n = 1000:");
    for s in &schedule.steps {
        println!("  m = {:>4} (nominal {:>4}), log gap {:8.2}", s.m, s.nominal, s.log_gap);
    }
    Ok(())
}
