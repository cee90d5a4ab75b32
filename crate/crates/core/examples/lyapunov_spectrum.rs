//! Finite-scale Lyapunov spectra of a constant and a random diagonal cocycle,
//! compared with their closed forms.

use osl_lab::cocycle::Cocycle;
use osl_lab::dynamics::BaseSystem;
use osl_lab::linalg::Matrix;
use osl_lab::lyapunov::{detect_gap_pattern, estimate_spectrum};

fn main() -> osl_lab::Result<()> {
    let a = Cocycle::constant(Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 2.0, 1.0])));
    let base = BaseSystem::golden_rotation();
    let est = estimate_spectrum(&a, &base, 100, 8, 1)?;
    println!("constant diag(4, 2, 1), n = 100");
    for (i, l) in est.values.iter().enumerate() {
        println!("  L_{} = {l:.12}", i + 1);
    }
    println!("  exact: {:.12} {:.12} 0", 4f64.ln(), 2f64.ln());
    println!("  gap pattern: {}", detect_gap_pattern(&est, None).signature);

    let coin = BaseSystem::bernoulli(vec![0.5, 0.5])?;
    let b = Cocycle::diagonal_random(vec![vec![3.0, 0.5, 1.0], vec![1.0 / 3.0, 0.5, 4.0]])?;
    println!("\nrandom diagonal over a fair coin");
    for n in [64, 256, 1024] {
        let est = estimate_spectrum(&b, &coin, n, 400, 7)?;
        let row: Vec<String> =
            est.values.iter().zip(&est.std_errors).map(|(l, s)| format!("{l:+.4} ± {s:.4}")).collect();
        println!("  n = {n:>4}: {}", row.join("  "));
    }
    println!("  closed form: {:?}", b.diagonal_spectrum(&coin).expect("diagonal"));
    Ok(())
}
