//! Finite-scale Lyapunov spectra.
//!
//! `L_i^(n)` is the sample mean of `(1/n) log s_i(A^(n)(x))`, where
//! `log s_i = log ‖∧_i A^(n)‖ - log ‖∧_{i-1} A^(n)‖` and every exterior power
//! is accumulated as its own [`ScaledMatrix`](crate::linalg::ScaledMatrix)
//! product. Samples run in parallel on the ambient rayon pool; results are
//! collected in phase order and reduced pairwise, so the estimate does not
//! depend on the number of workers.

use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{Cocycle, ExteriorIterates};
use crate::dynamics::{BaseSystem, Phase};
use crate::error::{Error, Result};
use crate::grassmann::Signature;
use crate::stats::{mean_estimate, MeanEstimate};

/// Per-step log singular values below this are reported as `-inf`.
pub const LOG_UNDERFLOW_RATE: f64 = -700.0;

/// Lower bound on the default gap-detection threshold.
pub const MIN_GAP_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumEstimate {
    pub n: usize,
    /// `L_1^(n) ≥ ... ≥ L_m^(n)`, nats per step.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sample_count: usize,
}

impl SpectrumEstimate {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `Σ_{i ≤ k} L_i`.
    pub fn partial_sum(&self, k: usize) -> f64 {
        self.values[..k].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapPattern {
    pub signature: Signature,
    /// `min_j (L_{τ_j} - L_{τ_j + 1})`; `+inf` for an empty pattern.
    pub gap: f64,
    /// False when some undeclared difference falls between half the
    /// threshold and the threshold.
    pub exact: bool,
    pub thresholds: Vec<f64>,
}

/// `(1/n) log s_i` at one phase, `i = 1..=m`, with `-inf` propagation.
pub fn phase_spectrum(ex: &ExteriorIterates) -> Vec<f64> {
    let n = ex.n as f64;
    let mut out = Vec::with_capacity(ex.dim);
    let mut prev = f64::INFINITY;
    for i in 1..=ex.dim {
        let mut v = ex.log_singular_value(i) / n;
        if v.is_nan() || prev == f64::NEG_INFINITY {
            v = f64::NEG_INFINITY;
        }
        // exterior norms are computed independently; clip rounding-level
        // inversions so each sample stays ordered
        v = v.min(prev);
        out.push(v);
        prev = v;
    }
    out
}

fn check_scale(n: usize, samples: usize) -> Result<()> {
    if n == 0 || samples == 0 {
        return Err(Error::InvalidParameter { name: "n, samples".into(), reason: "must be at least 1".into() });
    }
    Ok(())
}

/// `(1/n) log ‖A^(n)(x)‖` at each phase, in phase order.
pub fn log_norm_rates(a: &Cocycle, base: &BaseSystem, n: usize, phases: &[Phase]) -> Result<Vec<f64>> {
    a.check_base(base)?;
    phases
        .par_iter()
        .map(|x| crate::cocycle::iterate(a, base, x, n).map(|it| it.log_norm() / n as f64))
        .collect()
}

/// Mean of `(1/n) log ‖A^(n)(x)‖` over `samples` phases drawn with `seed`.
/// A zero product anywhere makes the mean `-inf`.
pub fn estimate_l1(a: &Cocycle, base: &BaseSystem, n: usize, samples: usize, seed: u64) -> Result<MeanEstimate> {
    check_scale(n, samples)?;
    let phases = base.sample_phases(samples, seed);
    estimate_l1_at(a, base, n, &phases)
}

pub fn estimate_l1_at(a: &Cocycle, base: &BaseSystem, n: usize, phases: &[Phase]) -> Result<MeanEstimate> {
    check_scale(n, phases.len())?;
    Ok(mean_estimate(&log_norm_rates(a, base, n, phases)?))
}

pub fn estimate_spectrum(
    a: &Cocycle,
    base: &BaseSystem,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<SpectrumEstimate> {
    check_scale(n, samples)?;
    let phases = base.sample_phases(samples, seed);
    estimate_spectrum_at(a, base, n, &phases)
}

pub fn estimate_spectrum_at(a: &Cocycle, base: &BaseSystem, n: usize, phases: &[Phase]) -> Result<SpectrumEstimate> {
    check_scale(n, phases.len())?;
    a.check_base(base)?;
    let per_phase: Vec<Vec<f64>> = phases
        .par_iter()
        .map(|x| ExteriorIterates::compute(a, base, x, n).map(|ex| phase_spectrum(&ex)))
        .collect::<Result<_>>()?;
    Ok(aggregate(n, &per_phase))
}

/// Averages per-phase spectra, then applies the underflow rule.
pub fn aggregate(n: usize, per_phase: &[Vec<f64>]) -> SpectrumEstimate {
    let m = per_phase.first().map_or(0, Vec::len);
    let mut values = Vec::with_capacity(m);
    let mut std_errors = Vec::with_capacity(m);
    let mut poisoned = false;
    for i in 0..m {
        let column: Vec<f64> = per_phase.iter().map(|s| s[i]).collect();
        let est = mean_estimate(&column);
        if poisoned || est.mean < LOG_UNDERFLOW_RATE {
            poisoned = true;
            values.push(f64::NEG_INFINITY);
            std_errors.push(f64::INFINITY);
        } else {
            values.push(est.mean);
            std_errors.push(est.std_error);
        }
    }
    SpectrumEstimate { n, values, std_errors, sample_count: per_phase.len() }
}

/// Declares a gap at `j` when `L_j - L_{j+1}` exceeds the threshold. Without
/// an explicit threshold each pair uses `max(0.05, 5 sqrt(se_j² + se_{j+1}²))`.
/// Differences in `(thr/2, thr]` are not declared (the coarser pattern wins)
/// and clear the exactness flag.
pub fn detect_gap_pattern(est: &SpectrumEstimate, threshold: Option<f64>) -> GapPattern {
    let m = est.dim();
    let mut dims = Vec::new();
    let mut thresholds = Vec::new();
    let mut gap = f64::INFINITY;
    let mut exact = true;
    for j in 0..m.saturating_sub(1) {
        let thr = threshold.unwrap_or_else(|| {
            let se = est.std_errors[j].hypot(est.std_errors[j + 1]);
            if se.is_finite() {
                MIN_GAP_THRESHOLD.max(5.0 * se)
            } else {
                MIN_GAP_THRESHOLD
            }
        });
        thresholds.push(thr);
        let (a, b) = (est.values[j], est.values[j + 1]);
        let diff = if a == f64::NEG_INFINITY {
            0.0
        } else if b == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            a - b
        };
        if diff > thr {
            dims.push(j + 1);
            gap = gap.min(diff);
        } else if diff > 0.5 * thr {
            exact = false;
        }
    }
    let signature = Signature::new(m, dims).expect("increasing dims below m");
    GapPattern { signature, gap, exact, thresholds }
}

/// `|L_1^(2n) - L_1^(n)|`, the empirical stand-in for the finite-scale bias.
pub fn cauchy_gap(a: &Cocycle, base: &BaseSystem, n: usize, samples: usize, seed: u64) -> Result<f64> {
    let l_n = estimate_l1(a, base, n, samples, seed)?;
    let l_2n = estimate_l1(a, base, 2 * n, samples, seed)?;
    Ok((l_2n.mean - l_n.mean).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubadditivityViolation {
    pub n: usize,
    pub m: usize,
    /// `a_{n+m} - a_n - a_m > 0`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeketeReport {
    /// `min a_n / n` over the sequence.
    pub infimum_rate: f64,
    /// `a_N / N - infimum_rate` at the largest `N`.
    pub running_gap: f64,
    pub pairs_checked: usize,
    pub violations: Vec<SubadditivityViolation>,
}

impl FeketeReport {
    pub fn max_excess(&self) -> f64 {
        self.violations.iter().map(|v| v.excess).fold(0.0, f64::max)
    }
}

/// Checks `a_{n+m} ≤ a_n + a_m` on every pair whose sum is also sampled.
pub fn fekete_diagnostic(seq: &[(usize, f64)]) -> Result<FeketeReport> {
    if seq.is_empty() || seq.windows(2).any(|w| w[0].0 >= w[1].0) || seq[0].0 == 0 {
        return Err(Error::InvalidParameter {
            name: "seq".into(),
            reason: "needs strictly increasing positive n".into(),
        });
    }
    let lookup = |k: usize| seq.binary_search_by_key(&k, |p| p.0).ok().map(|i| seq[i].1);
    let mut violations = Vec::new();
    let mut pairs_checked = 0;
    for (i, &(n, an)) in seq.iter().enumerate() {
        for &(m, am) in &seq[i..] {
            if let Some(anm) = lookup(n + m) {
                pairs_checked += 1;
                let excess = anm - an - am;
                if excess > 0.0 {
                    violations.push(SubadditivityViolation { n, m, excess });
                }
            }
        }
    }
    let infimum_rate = seq.iter().map(|&(n, a)| a / n as f64).fold(f64::INFINITY, f64::min);
    let &(nl, al) = seq.last().expect("nonempty");
    Ok(FeketeReport { infimum_rate, running_gap: al / nl as f64 - infimum_rate, pairs_checked, violations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LpExponent {
    One,
    Two,
    /// Max over samples.
    Sup,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpReport {
    pub p: LpExponent,
    /// `(n, ‖(1/n) log ‖A^(n)‖‖_{L^p})`.
    pub norms: Vec<(usize, f64)>,
    /// Set when the norms increase at every scale and end more than 10% above
    /// where they started.
    pub nonuniform: bool,
}

pub fn lp_bound_estimate(
    a: &Cocycle,
    base: &BaseSystem,
    n_list: &[usize],
    samples: usize,
    seed: u64,
    p: LpExponent,
) -> Result<LpReport> {
    let phases = base.sample_phases(samples, seed);
    let mut norms = Vec::with_capacity(n_list.len());
    for &n in n_list {
        check_scale(n, samples)?;
        let rates = log_norm_rates(a, base, n, &phases)?;
        let value = match p {
            LpExponent::One => mean_estimate(&rates.iter().map(|r| r.abs()).collect::<Vec<_>>()).mean,
            LpExponent::Two => mean_estimate(&rates.iter().map(|r| r * r).collect::<Vec<_>>()).mean.sqrt(),
            LpExponent::Sup => rates.iter().map(|r| r.abs()).fold(0.0, f64::max),
        };
        norms.push((n, value));
    }
    let nonuniform = norms.len() >= 2
        && norms.windows(2).all(|w| w[1].1 > w[0].1)
        && norms.last().unwrap().1 > 1.1 * norms[0].1;
    Ok(LpReport { p, norms, nonuniform })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::exterior_cocycle;
    use crate::linalg::Matrix;

    fn diag(d: &[f64]) -> Matrix {
        Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))
    }

    fn rot() -> BaseSystem {
        BaseSystem::golden_rotation()
    }

    #[test]
    fn l1_trivial_cases() {
        let e = std::f64::consts::E;
        let a = Cocycle::constant(diag(&[e, 1.0]));
        for n in [1, 7, 100] {
            let est = estimate_l1(&a, &rot(), n, 3, 0).unwrap();
            assert!((est.mean - 1.0).abs() < 1e-14);
        }
        let id = estimate_l1(&Cocycle::identity(3), &rot(), 50, 4, 0).unwrap();
        assert!(id.mean.abs() < 1e-15);
    }

    #[test]
    fn l1_zero_product_is_neg_inf() {
        let a = Cocycle::constant(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let est = estimate_l1(&a, &rot(), 3, 2, 0).unwrap();
        assert_eq!(est.mean, f64::NEG_INFINITY);
    }

    #[test]
    fn diagonal_random_l1_near_zero() {
        let a = Cocycle::diagonal_random(vec![vec![2.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let s = BaseSystem::bernoulli(vec![0.5, 0.5]).unwrap();
        let est = estimate_l1(&a, &s, 1000, 1000, 42).unwrap();
        // ‖A^n‖ = 2^{|S_n|} here, so the mean is positive; the single-coordinate
        // version with a dominated second entry has mean exactly E log = 0
        assert!(est.mean > 0.0);
        let a = Cocycle::diagonal_random(vec![vec![2.0, 0.25], vec![0.5, 0.25]]).unwrap();
        let est = estimate_l1(&a, &s, 1000, 1000, 42).unwrap();
        assert!(est.mean.abs() <= 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn constant_spectra() {
        let est = estimate_spectrum(&Cocycle::constant(diag(&[4.0, 2.0, 1.0])), &rot(), 50, 2, 0).unwrap();
        let want = [4f64.ln(), 2f64.ln(), 0.0];
        for (v, w) in est.values.iter().zip(want) {
            assert!((v - w).abs() < 1e-13);
        }
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let q = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let est = estimate_spectrum(&Cocycle::constant(q), &rot(), 300, 1, 0).unwrap();
        assert!(est.values.iter().all(|v| v.abs() < 1e-13));

        let g = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let n = 400;
        let est = estimate_spectrum(&Cocycle::constant(g), &rot(), n, 1, 0).unwrap();
        assert!((est.values[0] - 2f64.ln()).abs() < 2.0 / n as f64);
        assert!((est.values[1] + 2f64.ln()).abs() < 2.0 / n as f64);
    }

    #[test]
    fn underflow_poisons_lower_exponents() {
        let a = Cocycle::constant(diag(&[1.0, 1e-310, 1.0]));
        let est = estimate_spectrum(&a, &rot(), 2, 1, 0).unwrap();
        assert_eq!(est.values[0], 0.0);
        assert_eq!(est.values[1], 0.0);
        assert_eq!(est.values[2], f64::NEG_INFINITY);

        let singular = Cocycle::constant(diag(&[3.0, 0.0, 1.0]));
        let est = estimate_spectrum(&singular, &rot(), 5, 1, 0).unwrap();
        assert!((est.values[0] - 3f64.ln()).abs() < 1e-14);
        assert!(est.values[1].abs() < 1e-14);
        assert_eq!(est.values[2], f64::NEG_INFINITY);
        assert_eq!(est.std_errors[2], f64::INFINITY);
    }

    #[test]
    fn spectrum_sum_identity() {
        let a = Cocycle::random_glm(3, 2, 9, 1.0).unwrap();
        let s = BaseSystem::bernoulli(vec![0.5, 0.5]).unwrap();
        let (n, samples, seed) = (80, 60, 3);
        let est = estimate_spectrum(&a, &s, n, samples, seed).unwrap();
        for k in 1..=3 {
            let w = exterior_cocycle(&a, k).unwrap();
            let lk = estimate_l1(&w, &s, n, samples, seed).unwrap();
            // same phases: identical up to rounding
            assert!((est.partial_sum(k) - lk.mean).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn gap_patterns() {
        let mk = |v: Vec<f64>| SpectrumEstimate { n: 1, std_errors: vec![0.0; v.len()], values: v, sample_count: 1 };
        let p = detect_gap_pattern(&mk(vec![4f64.ln(), 2f64.ln(), 0.0]), Some(0.1));
        assert_eq!(p.signature.dims(), &[1, 2]);
        assert!(p.exact);
        let p = detect_gap_pattern(&mk(vec![0.5; 4]), None);
        assert!(p.signature.is_empty());
        assert_eq!(p.gap, f64::INFINITY);
        let p = detect_gap_pattern(&mk(vec![1.0, 1.0, 0.3, 0.0, 0.0]), None);
        assert_eq!(p.signature.dims(), &[2, 3]);
        assert!(p.exact);
        assert!((p.gap - 0.3).abs() < 1e-15);
        let shifted = detect_gap_pattern(&mk(vec![8.0, 8.0, 7.3, 7.0, 7.0]), None);
        assert_eq!(shifted.signature, p.signature);
        // ambiguous difference: not declared, not exact
        let p = detect_gap_pattern(&mk(vec![1.0, 0.96]), None);
        assert!(p.signature.is_empty());
        assert!(!p.exact);
        let p = detect_gap_pattern(&mk(vec![1.0, f64::NEG_INFINITY]), None);
        assert_eq!(p.signature.dims(), &[1]);
    }

    #[test]
    fn noisy_gap_threshold_grows_with_errors() {
        let est = SpectrumEstimate { n: 1, values: vec![1.0, 0.8], std_errors: vec![0.03, 0.03], sample_count: 10 };
        let p = detect_gap_pattern(&est, None);
        assert!(p.signature.is_empty());
        assert!((p.thresholds[0] - 5.0 * 0.03f64.hypot(0.03)).abs() < 1e-15);
    }

    #[test]
    fn fekete_cases() {
        let lin: Vec<(usize, f64)> = (1..=20).map(|n| (n, 0.7 * n as f64)).collect();
        let r = fekete_diagnostic(&lin).unwrap();
        assert!((r.infimum_rate - 0.7).abs() < 1e-15);
        assert!(r.violations.iter().all(|v| v.excess < 1e-12));

        let seq: Vec<(usize, f64)> = (2..=64).map(|n| (n, n as f64 + (n as f64).ln())).collect();
        let r = fekete_diagnostic(&seq).unwrap();
        assert!(r.violations.is_empty());
        assert!(r.pairs_checked > 0);
        assert!((r.infimum_rate - (1.0 + 64f64.ln() / 64.0)).abs() < 1e-15);

        let bad = [(1, 1.0), (2, 3.0)];
        let r = fekete_diagnostic(&bad).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert!((r.max_excess() - 1.0).abs() < 1e-15);
        assert!(fekete_diagnostic(&[(2, 1.0), (1, 1.0)]).is_err());
    }

    #[test]
    fn lp_bounds() {
        let a = Cocycle::constant(diag(&[3.0, 1.0]));
        let r = lp_bound_estimate(&a, &rot(), &[4, 16, 64], 3, 0, LpExponent::Two).unwrap();
        assert!(r.norms.iter().all(|(_, v)| (v - 3f64.ln()).abs() < 1e-13));
        assert!(!r.nonuniform);
        let r = lp_bound_estimate(&Cocycle::identity(2), &rot(), &[4, 16], 3, 0, LpExponent::Sup).unwrap();
        assert!(r.norms.iter().all(|(_, v)| *v == 0.0));

        let sch = Cocycle::schrodinger(0.0, 2.0).unwrap();
        let ns: Vec<usize> = (4..=12).map(|k| 1 << k).collect();
        let r = lp_bound_estimate(&sch, &rot(), &ns, 20, 1, LpExponent::Two).unwrap();
        let bound = sch.sup_norm_bound().ln();
        assert!(r.norms.iter().all(|(_, v)| *v <= bound));
        assert!(!r.nonuniform);
    }

    #[test]
    fn estimates_are_thread_count_independent() {
        let a = Cocycle::random_glm(3, 2, 1, 1.0).unwrap();
        let s = BaseSystem::bernoulli(vec![0.3, 0.7]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_spectrum(&a, &s, 64, 50, 8).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
