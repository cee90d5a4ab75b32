//! Most expanding direction, Oseledets filtration and decomposition of a
//! Schrödinger cocycle at one phase, with invariance residuals and the
//! distance to a larger-scale reference.

use osl_lab::cocycle::Cocycle;
use osl_lab::dynamics::BaseSystem;
use osl_lab::grassmann::{flag_distance, Signature};
use osl_lab::oseledets::{
    finite_direction, invariance_residual, oseledets_decomposition, oseledets_filtration, InvariantObject,
};

fn main() -> osl_lab::Result<()> {
    let a = Cocycle::schrodinger(0.0, 3.0)?;
    let base = BaseSystem::golden_rotation();
    let tau = Signature::new(2, vec![1])?;
    let x = base.sample_phases(1, 11).remove(0);

    let reference = finite_direction(&a, &base, &x, 4096, &tau)?;
    for n in [4, 8, 16, 32] {
        let v = finite_direction(&a, &base, &x, n, &tau)?;
        let d = flag_distance(v.flag()?, reference.flag()?)?;
        println!("n = {n:>2}: log gap = {:8.3}, distance to n = 4096 direction = {d:.3e}", v.log_gap);
    }

    let n = 256;
    let filtration = oseledets_filtration(&a, &base, &x, n, &tau)?;
    let dec = oseledets_decomposition(&a, &base, &x, n, &tau)?;
    println!("\nfiltration component: {}", filtration.component(0).basis().transpose());
    for (j, e) in dec.decomposition.components().iter().enumerate() {
        println!("E_{}: {}", j + 1, e.basis().transpose());
    }
    println!("transversality theta = {:.4}", dec.theta);
    for obj in [InvariantObject::Filtration, InvariantObject::Decomposition] {
        let r = invariance_residual(&a, &base, &x, n, &tau, obj)?;
        println!("{obj:?} invariance residual: {:.2e}", r.max());
    }
    Ok(())
}
