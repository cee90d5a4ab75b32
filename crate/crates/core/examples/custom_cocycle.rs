//! A cocycle given by a closure, its exterior square, and the L^p bounds of
//! its growth rates.

use osl_lab::cocycle::{exterior_cocycle, Cocycle};
use osl_lab::dynamics::{BaseSystem, Site};
use osl_lab::linalg::Matrix;
use osl_lab::lyapunov::{estimate_spectrum, lp_bound_estimate, LpExponent};

fn main() -> osl_lab::Result<()> {
    let base = BaseSystem::rotation(vec![(5f64.sqrt() - 1.0) / 2.0, 2f64.sqrt() - 1.0])?;
    let a = Cocycle::from_fn(3, "twisted shear", 3.5, |site: Site<'_>| {
        let (x, y) = match site {
            Site::Torus(p) => (p[0], p[1]),
            Site::Symbol(_) => (0.0, 0.0),
        };
        let t = std::f64::consts::TAU;
        Matrix::from_row_slice(3, 3, &[
            2.0 + (t * x).cos(), 1.0, 0.0,
            0.0, 1.0, 0.5 * (t * y).sin(),
            0.0, 0.0, 0.5,
        ])
    });
    let est = estimate_spectrum(&a, &base, 400, 64, 3)?;
    println!("spectrum of {}: {:?}", a.label(), est.values);

    let wedge = exterior_cocycle(&a, 2)?;
    let est2 = estimate_spectrum(&wedge, &base, 400, 64, 3)?;
    println!("top exponent of the exterior square: {:.6} (L_1 + L_2 = {:.6})", est2.values[0], est.values[0] + est.values[1]);

    for p in [LpExponent::One, LpExponent::Two, LpExponent::Sup] {
        let r = lp_bound_estimate(&a, &base, &[50, 100, 200, 400], 64, 5, p)?;
        println!("{p:?}: {:?}", r.norms);
    }
    Ok(())
}
