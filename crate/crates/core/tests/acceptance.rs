//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use osl_lab::cocycle::Cocycle;
use osl_lab::dynamics::BaseSystem;
use osl_lab::experiment::{run_text, OutputFormat, RunOptions};
use osl_lab::grassmann::{
    flag_distance, intersect_with_threshold, subspace_distance, transversality, Decomposition, Flag, Signature,
    Subspace,
};
use osl_lab::ldtlab::{
    continuity_experiment, fiber_deviation_measure, independent_reference, modulus_fit, nonincreasing_along,
    ContinuityOptions, Family, Target,
};
use osl_lab::linalg::{exterior_power, pseudo_inverse, Matrix};
use osl_lab::lyapunov::{estimate_l1, estimate_spectrum};
use osl_lab::oseledets::{
    ap_check, convergence_rate, invariance_residual, oseledets_decomposition, random_ap_chain, InvariantObject,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, m: usize) -> Matrix {
    gaussian(rng, m, m).qr().q()
}

fn leibniz_det(a: &Matrix) -> f64 {
    fn permutations(k: usize) -> Vec<(Vec<usize>, f64)> {
        if k == 0 {
            return vec![(Vec::new(), 1.0)];
        }
        let mut out = Vec::new();
        for (p, sign) in permutations(k - 1) {
            for pos in 0..k {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                // inserting at `pos` moves the new element past k-1-pos others
                let s = if (k - 1 - pos).is_multiple_of(2) { sign } else { -sign };
                out.push((q, s));
            }
        }
        out
    }
    let k = a.nrows();
    permutations(k).into_iter().map(|(p, s)| s * (0..k).map(|i| a[(i, p[i])]).product::<f64>()).sum()
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 0..m {
        for rest in subsets(m, k - 1) {
            if rest.first().is_none_or(|&r| r > first) {
                let mut s = vec![first];
                s.extend(rest);
                out.push(s);
            }
        }
    }
    out
}

fn minors_oracle(g: &Matrix, k: usize) -> Matrix {
    let s = subsets(g.nrows(), k);
    DMatrix::from_fn(s.len(), s.len(), |a, b| {
        leibniz_det(&DMatrix::from_fn(k, k, |i, j| g[(s[a][i], s[b][j])]))
    })
}

fn top_sv(g: &Matrix) -> f64 {
    g.clone().svd(false, false).singular_values.max()
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

fn exterior_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_sv, mut worst_mult, mut worst_pinv, mut worst_oracle) = (0f64, 0f64, 0f64, 0f64);
    for case in 0..100 {
        let m = 1 + case % 6;
        let mut g = gaussian(&mut rng, m, m);
        if case % 4 == 3 && m > 1 {
            // rank-deficient case for the pseudo-inverse identity; the left factor is a
            // permutation so the null row is exactly zero and every m-minor vanishes
            let mut s = DVector::from_fn(m, |_, _| rng.random_range(0.5..2.0));
            s[m - 1] = 0.0;
            let mut p = Matrix::identity(m, m);
            p.swap_columns(m - 1, rng.random_range(0..m));
            g = &p * Matrix::from_diagonal(&s) * random_orthogonal(&mut rng, m).transpose();
        }
        let h = gaussian(&mut rng, m, m);
        let s = g.clone().svd(false, false).singular_values;
        let mut sorted: Vec<f64> = s.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut prev = 1.0;
        for k in 1..=m {
            let wk = exterior_power(&g, k).unwrap();
            worst_oracle = worst_oracle.max(rel(&wk, &minors_oracle(&g, k)));
            let norm = top_sv(&wk);
            if prev > 0.0 && sorted[k - 1] > 1e-8 * sorted[0] {
                worst_sv = worst_sv.max(((norm / prev) - sorted[k - 1]).abs() / sorted[k - 1]);
            }
            prev = norm;
            let prod = exterior_power(&(&g * &h), k).unwrap();
            worst_mult = worst_mult.max(rel(&prod, &(&wk * exterior_power(&h, k).unwrap())));
            // normwise: the exact k = m compound of a singular g is zero, so the
            // error is measured against the scale ||g+||^k of the computed entries
            let gp = pseudo_inverse(&g).unwrap();
            let lhs = exterior_power(&gp, k).unwrap();
            let rhs = pseudo_inverse(&wk).unwrap();
            let scale = gp.norm().powi(k as i32).max(lhs.norm()).max(rhs.norm());
            worst_pinv = worst_pinv.max((&lhs - &rhs).norm() / scale);
        }
    }
    let pass = worst_sv <= 1e-9 && worst_mult <= 1e-9 && worst_pinv <= 1e-9 && worst_oracle <= 1e-12;
    outcome(
        pass,
        format!("max rel err: s_k {worst_sv:.1e}, multiplicativity {worst_mult:.1e}, pinv {worst_pinv:.1e}, minors {worst_oracle:.1e}"),
    )
}

fn avalanche_principle() -> Outcome {
    let (kappa, eps) = (1e-4, 0.1);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let len = 1 + (seed as usize % 50);
        let chain = random_ap_chain(seed, len, 2e4, 0.3);
        match ap_check(&chain, kappa, eps) {
            Ok(r) if r.within_bound => worst = worst.max(r.measured_constant),
            _ => failures += 1,
        }
    }
    let mut axis_worst: f64 = 0.0;
    for seed in 0..100u64 {
        let chain = random_ap_chain(10_000 + seed, 1 + seed as usize % 50, 2e4, 0.0);
        match ap_check(&chain, kappa, eps) {
            Ok(r) => axis_worst = axis_worst.max(r.adjoint_distance.max(r.forward_distance)),
            Err(_) => axis_worst = f64::INFINITY,
        }
    }
    outcome(
        failures == 0 && axis_worst <= 1e-10,
        format!("{failures}/1000 chains outside 100·κ/ε (worst constant {worst:.3}); constant-axis max distance {axis_worst:.1e}"),
    )
}

fn constant_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let base = BaseSystem::golden_rotation();
    let n = 500;
    let tol = 2.0 / n as f64 + 1e-9;
    let (mut worst_l, mut worst_d) = (0f64, 0f64);
    for _ in 0..50 {
        let m = rng.random_range(2..=4);
        let mut logs: Vec<f64> = vec![rng.random_range(-1.0..1.0)];
        for i in 1..m {
            logs.push(logs[i - 1] - rng.random_range(0.3..0.8));
        }
        let lambdas: Vec<f64> =
            logs.iter().map(|l| if rng.random_bool(0.5) { l.exp() } else { -l.exp() }).collect();
        // eigenvector frame with condition number at most 1.25
        let p = loop {
            let q = random_orthogonal(&mut rng, m);
            let p = &q + gaussian(&mut rng, m, m) * 0.05;
            let s = p.clone().svd(false, false).singular_values;
            if s.max() / s.min() <= 1.25 {
                break p;
            }
        };
        let g = &p * Matrix::from_diagonal(&DVector::from_vec(lambdas)) * p.clone().try_inverse().unwrap();
        let a = Cocycle::constant(g);
        let est = estimate_spectrum(&a, &base, n, 2, 1).unwrap();
        for (l, want) in est.values.iter().zip(&logs) {
            worst_l = worst_l.max((l - want).abs());
        }
        let tau = Signature::full(m);
        let x = base.sample_phases(1, 2).remove(0);
        let dec = oseledets_decomposition(&a, &base, &x, n, &tau).unwrap();
        for (j, e) in dec.decomposition.components().iter().enumerate() {
            let eig = Subspace::from_basis(p.columns(j, 1).into_owned()).unwrap();
            worst_d = worst_d.max(subspace_distance(e, &eig).unwrap());
        }
    }
    outcome(
        worst_l <= tol && worst_d <= 1e-6,
        format!("max |L_i - log|λ_i|| = {worst_l:.2e} (tol {tol:.1e}); max eigenline distance {worst_d:.1e}"),
    )
}

fn binomial_tail(n: usize, reference: f64, eps: f64) -> f64 {
    let mut pmf = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for k in 0..=n {
        let rate = (2.0 * k as f64 - n as f64) * 2f64.ln() / n as f64;
        if (rate - reference).abs() > eps {
            tail += pmf;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64;
    }
    tail
}

fn random_diagonal() -> Outcome {
    let a = Cocycle::diagonal_random(vec![vec![2.0], vec![0.5]]).unwrap();
    let coin = BaseSystem::bernoulli(vec![0.5, 0.5]).unwrap();
    let l1 = estimate_l1(&a, &coin, 1000, 1000, 44).unwrap();
    let mut ok = l1.mean.abs() <= 3.0 * l1.std_error;
    let mut detail = format!("L1 = {:.4} ± {:.4}", l1.mean, l1.std_error);
    for n in [100, 400] {
        let reference = independent_reference(&a, &coin, n, 1000, 45).unwrap();
        for eps in [0.05, 0.1] {
            let d = fiber_deviation_measure(&a, &coin, n, eps, 1000, 46, reference).unwrap();
            let exact = binomial_tail(n, reference, eps);
            let inside = d.frequency.contains(exact);
            ok &= inside;
            detail.push_str(&format!(
                "; (n={n}, ε={eps}) {:.3} in [{:.3}, {:.3}] vs exact {exact:.3}{}",
                d.frequency.value,
                d.frequency.lower,
                d.frequency.upper,
                if inside { "" } else { " MISS" }
            ));
        }
    }
    outcome(ok, detail)
}

fn convergence_rates() -> Outcome {
    let rot = BaseSystem::golden_rotation();
    let tau = Signature::new(2, vec![1]).unwrap();
    let g = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
    let x = rot.sample_phases(1, 0).remove(0);
    let ns: Vec<usize> = (1..=40).collect();
    let r = convergence_rate(&Cocycle::constant(g), &rot, &x, &tau, &ns).unwrap();
    let bound = -2.0 * 2f64.ln() + 0.1;
    let mut ok = r.slopes[0] <= bound;
    let mut detail = format!("non-normal slope {:.4} (≤ {bound:.4})", r.slopes[0]);

    let a = Cocycle::schrodinger(0.0, 3.0).unwrap();
    let n_max = 1 << 12;
    let est = estimate_spectrum(&a, &rot, n_max, 200, 5).unwrap();
    let kappa = est.values[0] - est.values[1];
    let ns: Vec<usize> = (1..=24).chain([n_max]).collect();
    let phases = rot.sample_phases(200, 6);
    let hits = phases
        .iter()
        .filter(|x| {
            convergence_rate(&a, &rot, x, &tau, &ns).map(|r| r.slopes[0] <= -kappa + 0.15).unwrap_or(false)
        })
        .count();
    ok &= hits * 100 >= 80 * phases.len();
    detail.push_str(&format!("; schrodinger(0,3) κ = {kappa:.4}, slope ≤ -κ+0.15 on {hits}/200 phases"));
    outcome(ok, detail)
}

fn invariance() -> Outcome {
    let rot = BaseSystem::golden_rotation();
    let a = Cocycle::schrodinger(0.0, 3.0).unwrap();
    let tau = Signature::new(2, vec![1]).unwrap();
    let phases = rot.sample_phases(200, 7);
    let n = 1 << 10;
    let mut counts = [0usize; 2];
    for (i, obj) in [InvariantObject::Filtration, InvariantObject::Decomposition].into_iter().enumerate() {
        counts[i] = phases
            .iter()
            .filter(|x| {
                invariance_residual(&a, &rot, x, n, &tau, obj)
                    .map(|r| r.collapsed.is_empty() && r.max() < 1e-3)
                    .unwrap_or(false)
            })
            .count();
    }
    let mut worst_diag: f64 = 0.0;
    let diagonals: [(&[f64], &[usize]); 3] =
        [(&[4.0, 2.0, 1.0], &[1, 2]), (&[3.0, -2.0, 0.5, 0.25], &[1, 2, 3]), (&[5.0, 5.0, 1.0], &[2])];
    for (d, t) in diagonals {
        let c = Cocycle::constant(Matrix::from_diagonal(&DVector::from_column_slice(d)));
        let tau = Signature::new(d.len(), t.to_vec()).unwrap();
        let x = rot.sample_phases(1, 8).remove(0);
        for obj in [InvariantObject::Filtration, InvariantObject::Decomposition] {
            let r = invariance_residual(&c, &rot, &x, n, &tau, obj).unwrap();
            worst_diag = if r.collapsed.is_empty() { worst_diag.max(r.max()) } else { f64::INFINITY };
        }
    }
    outcome(
        counts.iter().all(|&c| c * 10 >= 9 * phases.len()) && worst_diag <= 1e-10,
        format!(
            "schrodinger(0,3) n=1024 residual < 1e-3: filtration {}/200, decomposition {}/200; constant diagonal max {worst_diag:.1e}",
            counts[0], counts[1]
        ),
    )
}

fn continuity() -> Outcome {
    let rot = BaseSystem::golden_rotation();
    let tau = Signature::new(2, vec![1]).unwrap();
    let h: Vec<f64> = (0..7).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect();
    let family = Family::Additive {
        cocycle: Cocycle::constant(Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])),
        delta: Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
    };
    let opts = |n, samples, target| ContinuityOptions {
        n,
        samples,
        seed: 9,
        target,
        tau: tau.clone(),
        restrict_to: None,
        alpha_trial: 0.5,
    };
    // slow eigenvector of [[2,h],[0,1/2]] is (h, -3/2); the direction is its complement
    let exact = |h: f64| h / (h * h + 2.25).sqrt();
    let (records, fit) = continuity_experiment(&family, &h, &rot, &opts(200, 4, Target::Direction)).unwrap();
    let oracle_err = records.iter().map(|r| (r.mean_dist - exact(r.h)).abs() / exact(r.h)).fold(0.0, f64::max);
    let oracle_fit = {
        let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = h.iter().map(|v| exact(*v).ln()).collect();
        osl_lab::stats::least_squares(&xs, &ys).unwrap().slope
    };
    let alpha = fit.map_or(f64::NAN, |f| f.alpha);
    let mut ok = (0.85..=1.15).contains(&alpha) && oracle_err <= 1e-6;
    let mut detail = format!(
        "constant family α = {alpha:.4} (oracle α = {oracle_fit:.4}, max rel dev from oracle {oracle_err:.1e})"
    );
    let schrodinger = Family::EnergyShift { energy: 0.0, coupling: 3.0 };
    for target in [Target::Direction, Target::Filtration, Target::Decomposition] {
        let (records, _) = continuity_experiment(&schrodinger, &h, &rot, &opts(512, 200, target)).unwrap();
        let alpha = modulus_fit(&records).map_or(f64::NAN, |f| f.alpha);
        let mono = nonincreasing_along(&records);
        ok &= mono && alpha > 0.0;
        detail.push_str(&format!("; schrodinger {target:?}: monotone {mono}, α = {alpha:.3}"));
    }
    outcome(ok, detail)
}

fn random_flag(rng: &mut ChaCha8Rng, tau: &Signature) -> Flag {
    let m = tau.ambient();
    let q = random_orthogonal(rng, m);
    let comps = tau.dims().iter().map(|&d| Subspace::from_basis(q.columns(0, d).into_owned()).unwrap()).collect();
    Flag::new(tau.clone(), comps).unwrap()
}

fn grassmann_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut involution, mut lipschitz, mut guarded, mut margin_fail, mut recon) = (0f64, 0f64, 0usize, 0usize, 0f64);
    let mut small_theta = 0;
    for case in 0..100 {
        let m = rng.random_range(2..=6);
        let dims: Vec<usize> = (1..m).filter(|_| rng.random_bool(0.6)).collect();
        let dims = if dims.is_empty() { vec![1] } else { dims };
        let tau = Signature::new(m, dims).unwrap();
        let f = random_flag(&mut rng, &tau);
        let g = random_flag(&mut rng, &tau);

        let back = f.complement().complement();
        involution = involution.max(flag_distance(&back, &f).unwrap());

        let coarse = Signature::new(m, vec![tau.dims()[0]]).unwrap();
        let d = flag_distance(&f, &g).unwrap();
        let dp = flag_distance(&f.project(&coarse).unwrap(), &g.project(&coarse).unwrap()).unwrap();
        lipschitz = lipschitz.max(dp - d);
        let p = f.component(0).projector();
        let (u, v) = (gaussian(&mut rng, m, 1), gaussian(&mut rng, m, 1));
        lipschitz = lipschitz.max((&p * &u - &p * &v).norm() - (&u - &v).norm());

        // partner flag of signature τ^⊥, tilted toward F's complement in a third of the cases
        let mut partner = random_flag(&mut rng, &tau.complement());
        if case % 3 == 0 {
            let t = 10f64.powf(-rng.random_range(1.0..7.0));
            let target = f.complement();
            let comps: Vec<Subspace> = partner
                .components()
                .iter()
                .zip(target.components())
                .map(|(p, c)| Subspace::from_basis(c.basis() * (1.0 - t) + p.basis() * t).unwrap_or(c.clone()))
                .collect();
            if let Ok(tilted) = Flag::new(tau.complement(), comps) {
                partner = tilted;
            }
        }
        let theta = transversality(&f, &partner).unwrap();
        if theta >= 1e-6 {
            match intersect_with_threshold(&f, &partner, 1e-6) {
                Ok(dec) => {
                    guarded += 1;
                    if theta < 1e-2 {
                        small_theta += 1;
                    }
                    if dec.direct_sum_margin() < 1e-12 {
                        margin_fail += 1;
                    }
                    for j in 1..=tau.len() {
                        let sum = dec.partial_sum(0..j).unwrap();
                        recon = recon.max(subspace_distance(&sum, &f.extended(j)).unwrap());
                    }
                    let _: &Decomposition = &dec;
                }
                Err(_) => margin_fail += 1,
            }
        }
    }
    let pass = involution <= 1e-12 && lipschitz <= 1e-12 && margin_fail == 0 && recon <= 1e-8 && guarded > 0;
    outcome(
        pass,
        format!(
            "involution {involution:.1e}, Lipschitz excess {lipschitz:.1e}, {guarded} guarded intersections ({small_theta} with θ < 1e-2), {margin_fail} margin failures, reconstruction {recon:.1e}"
        ),
    )
}

fn config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/schrodinger.toml")
}

fn determinism() -> Outcome {
    let path = config_path();
    let text = std::fs::read_to_string(&path).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, threads) in [1usize, 8, 1, 8].into_iter().enumerate() {
        let out = dir.path().join(format!("run{run}"));
        let opts = RunOptions { out_dir: Some(out.clone()), seed: None, threads: Some(threads), format: OutputFormat::Csv };
        let manifest = run_text(&text, Some(&path), &opts).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = manifest
            .outputs
            .iter()
            .filter(|n| n.ends_with(".csv") || n.ends_with(".jsonl") || n.ends_with(".dat"))
            .map(|n| (n.clone(), std::fs::read(out.join(n)).unwrap()))
            .collect();
        files.sort();
        outputs.push(files);
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let count = outputs[0].len();
    outcome(identical && count > 0, format!("{count} output files byte-identical across 4 runs (1, 8, 1, 8 workers): {identical}"))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 exterior-power identities", exterior_identities, Duration::from_secs(5)),
        ("2 avalanche principle", avalanche_principle, Duration::from_secs(30)),
        ("3 constant-cocycle oracle", constant_oracle, Duration::from_secs(60)),
        ("4 random diagonal cocycle", random_diagonal, Duration::from_secs(60)),
        ("5 convergence rate", convergence_rates, Duration::from_secs(300)),
        ("6 invariance", invariance, Duration::from_secs(300)),
        ("7 continuity exponent", continuity, Duration::from_secs(600)),
        ("8 grassmann geometry", grassmann_suite, Duration::from_secs(5)),
        ("9 determinism and replay", determinism, Duration::from_secs(600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let Outcome { pass, detail } = run();
        let elapsed = start.elapsed();
        let pass = pass && elapsed <= limit;
        failed += !pass as usize;
        println!(
            "{} criterion {name} [{:.2}s, limit {}s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
