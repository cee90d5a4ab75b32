//! Large deviation measures for products of random diagonal matrices, where
//! `log ‖A^(n)‖ = S_n log 2` and the deviation set is a binomial tail.

use osl_lab::cocycle::Cocycle;
use osl_lab::dynamics::BaseSystem;
use osl_lab::ldtlab::{exceptional_set_frequency, fiber_deviation_profile, ExceptionalOptions};

fn main() -> osl_lab::Result<()> {
    let a = Cocycle::diagonal_random(vec![vec![2.0, 0.25], vec![0.5, 0.25]])?;
    let coin = BaseSystem::bernoulli(vec![0.5, 0.5])?;
    let scales = [16, 64, 256, 1024];
    let eps = [0.05, 0.1, 0.2];
    let p = fiber_deviation_profile(&a, &coin, &scales, &eps, 2000, 5, None)?;
    println!("{:>6} {}", "n", eps.map(|e| format!("{:>26}", format!("eps = {e}"))).join(""));
    for row in &p.measures {
        let cells: Vec<String> = row
            .iter()
            .map(|d| format!("{:>8.4} [{:.4}, {:.4}]", d.frequency.value, d.frequency.lower, d.frequency.upper))
            .collect();
        println!("{:>6} {}", row[0].n, cells.join("  "));
    }

    let kappa = 4f64.ln();
    let sets = exceptional_set_frequency(&a, &coin, 64, kappa, 400, 9, ExceptionalOptions::default())?;
    println!("\nexceptional sets at n = 64, kappa = log 4");
    println!("  ldt {:.3}  gap {:.3}  bridge {:.3}  avalanche {:.3}",
        sets.ldt.value, sets.gap.value, sets.bridge.value, sets.avalanche.value);
    Ok(())
}
