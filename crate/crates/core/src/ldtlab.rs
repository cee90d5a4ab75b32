//! Empirical large-deviation measurements, exceptional-set bookkeeping and
//! continuity experiments for the finite-scale Oseledets data.
//!
//! Every measure here is an empirical frequency over sampled phases, reported
//! with a 95% Wilson interval. Phase-level work runs on the ambient rayon
//! pool and is collected in phase order.

use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{log_norm_profile, sup_distance, Cocycle, ExteriorIterates};
use crate::dynamics::{BaseSystem, Observable, Phase};
use crate::error::{Error, Result};
use crate::grassmann::{decomposition_distance, flag_distance, Signature};
use crate::linalg::Matrix;
use crate::lyapunov::estimate_l1;
use crate::oseledets::{
    adjoint_direction, decomposition_from, direction_from, DISTANCE_FLOOR,
};
use crate::stats::{least_squares, mean_estimate, quantile, Frequency};

/// Seed offset for the independent reference sample.
const REFERENCE_STREAM: u64 = 0x005e_ed0f_4e4e;

/// Default number of shifted copies in the avalanche exceptional set.
pub const DEFAULT_AP_SHIFTS: usize = 4;

/// One deviation measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationEstimate {
    pub n: usize,
    pub eps: f64,
    /// The centre the deviation is measured from.
    pub reference: f64,
    pub frequency: Frequency,
}

/// Deviation measures on an `(n, ε)` grid from one shared sample per `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationProfile {
    pub scales: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// `measures[i][j]` is the estimate at `scales[i]`, `epsilons[j]`.
    pub measures: Vec<Vec<DeviationEstimate>>,
}

fn count_deviations(values: &[f64], reference: f64, eps: f64) -> usize {
    values.iter().filter(|v| !((*v - reference).abs() <= eps)).count()
}

/// `L_1^(n)` from a sample independent of the one drawn with `seed`.
pub fn independent_reference(a: &Cocycle, base: &BaseSystem, n: usize, samples: usize, seed: u64) -> Result<f64> {
    Ok(estimate_l1(a, base, n, samples, seed ^ REFERENCE_STREAM)?.mean)
}

/// `μ{x : |(1/n) log ‖A^(n)(x)‖ - reference| > ε}`.
pub fn fiber_deviation_measure(
    a: &Cocycle,
    base: &BaseSystem,
    n: usize,
    eps: f64,
    samples: usize,
    seed: u64,
    reference: f64,
) -> Result<DeviationEstimate> {
    let phases = base.sample_phases(samples, seed);
    let rates = crate::lyapunov::log_norm_rates(a, base, n, &phases)?;
    let hits = count_deviations(&rates, reference, eps);
    Ok(DeviationEstimate { n, eps, reference, frequency: Frequency::new(hits, samples) })
}

/// Fiber deviation measures over a grid. `references[i]` centres scale
/// `scales[i]`; when absent, each centre comes from an independent sample
/// of the same size.
pub fn fiber_deviation_profile(
    a: &Cocycle,
    base: &BaseSystem,
    scales: &[usize],
    epsilons: &[f64],
    samples: usize,
    seed: u64,
    references: Option<&[f64]>,
) -> Result<DeviationProfile> {
    if references.is_some_and(|r| r.len() != scales.len()) {
        return Err(Error::DimensionMismatch("one reference per scale".into()));
    }
    let phases = base.sample_phases(samples, seed);
    let mut measures = Vec::with_capacity(scales.len());
    for (i, &n) in scales.iter().enumerate() {
        let reference = match references {
            Some(r) => r[i],
            None => independent_reference(a, base, n, samples, seed)?,
        };
        let rates = crate::lyapunov::log_norm_rates(a, base, n, &phases)?;
        measures.push(
            epsilons
                .iter()
                .map(|&eps| DeviationEstimate {
                    n,
                    eps,
                    reference,
                    frequency: Frequency::new(count_deviations(&rates, reference, eps), samples),
                })
                .collect(),
        );
    }
    Ok(DeviationProfile { scales: scales.to_vec(), epsilons: epsilons.to_vec(), measures })
}

/// `μ{x : |(1/n) S_n ξ(x) - ∫ξ dμ| > ε}`.
pub fn base_deviation_measure(
    base: &BaseSystem,
    xi: &Observable,
    n: usize,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<DeviationEstimate> {
    xi.check(base)?;
    let reference = xi.space_average(base).ok_or_else(|| Error::InvalidParameter {
        name: "observable".into(),
        reason: "no closed-form space average".into(),
    })?;
    let phases = base.sample_phases(samples, seed);
    let averages: Vec<f64> = phases
        .par_iter()
        .map(|x| base.birkhoff_average(|s| xi.eval(s), x, n))
        .collect::<Result<_>>()?;
    let hits = count_deviations(&averages, reference, eps);
    Ok(DeviationEstimate { n, eps, reference, frequency: Frequency::new(hits, samples) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalSets {
    pub n: usize,
    pub kappa: f64,
    pub eps_n: f64,
    pub shifts: usize,
    /// Deviation beyond `ε_n` at scale `n`.
    pub ldt: Frequency,
    /// `gr(A^(n)(x)) < e^{nκ/2}`.
    pub gap: Frequency,
    /// `x` or `Tⁿx` deviates at some scale `m ∈ [n, 3n]`.
    pub bridge: Frequency,
    /// Union of `gap` and `bridge`.
    pub gap_or_bridge: Frequency,
    /// `T^{jn} x` in the gap-or-bridge set for some `j < shifts`.
    pub avalanche: Frequency,
    /// `freq(ga) ≤ freq(g) + freq(a)`.
    pub union_bound_holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExceptionalOptions {
    /// `ε_n`; defaults to `κ/100`.
    pub eps_n: Option<f64>,
    pub shifts: usize,
}

impl Default for ExceptionalOptions {
    fn default() -> Self {
        Self { eps_n: None, shifts: DEFAULT_AP_SHIFTS }
    }
}

struct PhaseFlags {
    ldt: bool,
    gap: bool,
    bridge: bool,
}

fn deviates(profile: &[f64], references: &[f64], lo: usize, hi: usize, eps: f64) -> bool {
    (lo..=hi).any(|m| {
        let rate = profile[m - 1] / m as f64;
        !((rate - references[m - lo]).abs() <= eps)
    })
}

/// Membership frequencies of the exceptional sets at scale `n`.
pub fn exceptional_set_frequency(
    a: &Cocycle,
    base: &BaseSystem,
    n: usize,
    kappa: f64,
    samples: usize,
    seed: u64,
    options: ExceptionalOptions,
) -> Result<ExceptionalSets> {
    if n == 0 || samples == 0 || !(kappa > 0.0) {
        return Err(Error::InvalidParameter { name: "n, samples, kappa".into(), reason: "must be positive".into() });
    }
    if a.dim() < 2 {
        return Err(Error::InvalidParameter { name: "cocycle".into(), reason: "needs dimension ≥ 2".into() });
    }
    let shifts = options.shifts.max(1);
    let eps_n = options.eps_n.unwrap_or(kappa / 100.0);
    let span = 3 * n;

    // centres L_1^(m), m ∈ [n, 3n], from one independent sample of prefix profiles
    let ref_phases = base.sample_phases(samples, seed ^ REFERENCE_STREAM);
    let ref_profiles: Vec<Vec<f64>> =
        ref_phases.par_iter().map(|x| log_norm_profile(a, base, x, span)).collect::<Result<_>>()?;
    let references: Vec<f64> = (n..=span)
        .map(|m| {
            let rates: Vec<f64> = ref_profiles.iter().map(|p| p[m - 1] / m as f64).collect();
            mean_estimate(&rates).mean
        })
        .collect();

    let flags_at = |x: &Phase| -> Result<PhaseFlags> {
        let here = log_norm_profile(a, base, x, span)?;
        let there = log_norm_profile(a, base, &base.step(x, n as i64)?, span)?;
        let ldt = !((here[n - 1] / n as f64 - references[0]).abs() <= eps_n);
        let ex = ExteriorIterates::from_matrices(&a.matrices_along(base, x, 0, n)?, a.dim());
        let gap = ex.log_gap_ratio(1) < n as f64 * kappa / 2.0;
        let bridge = deviates(&here, &references, n, span, eps_n) || deviates(&there, &references, n, span, eps_n);
        Ok(PhaseFlags { ldt, gap, bridge })
    };

    let phases = base.sample_phases(samples, seed);
    let per_phase: Vec<(PhaseFlags, bool)> = phases
        .par_iter()
        .map(|x| {
            let f = flags_at(x)?;
            let mut ap = f.gap || f.bridge;
            for j in 1..shifts {
                if ap {
                    break;
                }
                let y = base.step(x, (j * n) as i64)?;
                let g = flags_at(&y)?;
                ap = g.gap || g.bridge;
            }
            Ok((f, ap))
        })
        .collect::<Result<_>>()?;

    let count = |pred: &dyn Fn(&(PhaseFlags, bool)) -> bool| per_phase.iter().filter(|p| pred(p)).count();
    let ldt = Frequency::new(count(&|p| p.0.ldt), samples);
    let gap = Frequency::new(count(&|p| p.0.gap), samples);
    let bridge = Frequency::new(count(&|p| p.0.bridge), samples);
    let gap_or_bridge = Frequency::new(count(&|p| p.0.gap || p.0.bridge), samples);
    let avalanche = Frequency::new(count(&|p| p.1), samples);
    let union_bound_holds = gap_or_bridge.hits <= gap.hits + bridge.hits;
    Ok(ExceptionalSets { n, kappa, eps_n, shifts, ldt, gap, bridge, gap_or_bridge, avalanche, union_bound_holds })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedReport {
    pub n: usize,
    pub n_max: usize,
    /// `max(e^{-3nκ/10}, DISTANCE_FLOOR)`.
    pub bound: f64,
    /// Phases where the distance exceeds the bound or the direction at
    /// scale `n` is undefined.
    pub violations: Frequency,
    pub distances: Vec<f64>,
}

/// Compares `v^(n)(x)` with the surrogate limit `v^(n_max)(x)`
/// (`n_max = n²` by default) against the rate `e^{-3nκ/10}`.
pub fn speed_of_convergence_check(
    a: &Cocycle,
    base: &BaseSystem,
    n: usize,
    n_max: Option<usize>,
    kappa: f64,
    samples: usize,
    seed: u64,
) -> Result<SpeedReport> {
    let n_max = n_max.unwrap_or(n * n);
    if n == 0 || n_max < n {
        return Err(Error::InvalidParameter { name: "n_max".into(), reason: "need 1 ≤ n ≤ n_max".into() });
    }
    let tau = Signature::new(a.dim(), vec![1])?;
    let bound = (-0.3 * n as f64 * kappa).exp().max(DISTANCE_FLOOR);
    let phases = base.sample_phases(samples, seed);
    let distances: Vec<f64> = phases
        .par_iter()
        .map(|x| {
            let mats = a.matrices_along(base, x, 0, n_max)?;
            let short = direction_from(&ExteriorIterates::from_matrices(&mats[..n], a.dim()), &tau)?;
            let long = direction_from(&ExteriorIterates::from_matrices(&mats, a.dim()), &tau)?;
            match (short.value, long.value) {
                (Some(s), Some(l)) => flag_distance(&s, &l),
                _ => Ok(f64::INFINITY),
            }
        })
        .collect::<Result<_>>()?;
    let hits = distances.iter().filter(|d| !(**d <= bound)).count();
    Ok(SpeedReport { n, n_max, bound, violations: Frequency::new(hits, samples), distances })
}

/// One-parameter family `h ↦ B(h)` with `B(0) = A`.
#[derive(Debug, Clone)]
pub enum Family {
    /// Schrödinger cocycles at energy `E + h`.
    EnergyShift { energy: f64, coupling: f64 },
    /// `A + h Δ`.
    Additive { cocycle: Cocycle, delta: Matrix },
}

impl Family {
    pub fn at(&self, h: f64) -> Result<Cocycle> {
        match self {
            Family::EnergyShift { energy, coupling } => Cocycle::schrodinger(energy + h, *coupling),
            Family::Additive { cocycle, delta } => cocycle.perturbed(delta.clone(), h),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Family::EnergyShift { .. } => 2,
            Family::Additive { cocycle, .. } => cocycle.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Direction,
    Filtration,
    Decomposition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityRecord {
    /// Family parameter.
    pub h: f64,
    /// `max_x ‖B(h)(x) - A(x)‖` over the sampled phases.
    pub distance: f64,
    pub mean_dist: f64,
    pub q90_dist: f64,
    /// Fraction of defined phases with pointwise distance above `h^α_trial`.
    pub exceed_fraction: f64,
    /// Sorted pointwise distances (the empirical CDF support).
    pub pointwise: Vec<f64>,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityOptions {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub target: Target,
    pub tau: Signature,
    /// Coarser signature the targets are projected to before comparison.
    pub restrict_to: Option<Signature>,
    pub alpha_trial: f64,
}

enum TargetValue {
    Flag(crate::grassmann::Flag),
    Decomposition(crate::grassmann::Decomposition),
}

fn target_at(a: &Cocycle, base: &BaseSystem, x: &Phase, opts: &ContinuityOptions) -> Result<Option<TargetValue>> {
    let ex = ExteriorIterates::compute(a, base, x, opts.n)?;
    let fwd = direction_from(&ex, &opts.tau)?;
    let Some(flag) = fwd.value else { return Ok(None) };
    let value = match opts.target {
        Target::Direction => TargetValue::Flag(match &opts.restrict_to {
            Some(r) => flag.project(r)?,
            None => flag,
        }),
        Target::Filtration => {
            let f = flag.complement();
            TargetValue::Flag(match &opts.restrict_to {
                Some(r) => f.project(&r.complement())?,
                None => f,
            })
        }
        Target::Decomposition => {
            let adj = adjoint_direction(a, base, x, opts.n, &opts.tau)?;
            let Some(adj) = adj.value else { return Ok(None) };
            let d = match decomposition_from(&adj, &flag) {
                Ok(d) => d.decomposition,
                Err(Error::NonTransversal { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            TargetValue::Decomposition(match &opts.restrict_to {
                Some(r) => d.project(r)?,
                None => d,
            })
        }
    };
    Ok(Some(value))
}

fn target_distance(a: &TargetValue, b: &TargetValue) -> Result<f64> {
    match (a, b) {
        (TargetValue::Flag(f), TargetValue::Flag(g)) => flag_distance(f, g),
        (TargetValue::Decomposition(d), TargetValue::Decomposition(e)) => decomposition_distance(d, e),
        _ => Err(Error::InvalidParameter { name: "target".into(), reason: "mixed targets".into() }),
    }
}

/// Pointwise distances between the targets of `B(h)` and `A = B(0)` for
/// each `h`, plus a log-log modulus fit when at least three records have a
/// positive mean distance.
pub fn continuity_experiment(
    family: &Family,
    h_list: &[f64],
    base: &BaseSystem,
    opts: &ContinuityOptions,
) -> Result<(Vec<ContinuityRecord>, Option<ModulusFit>)> {
    if opts.n == 0 || opts.samples == 0 {
        return Err(Error::InvalidParameter { name: "n, samples".into(), reason: "must be positive".into() });
    }
    if opts.tau.ambient() != family.dim() {
        return Err(Error::DimensionMismatch("signature and family dimension differ".into()));
    }
    let a = family.at(0.0)?;
    a.check_base(base)?;
    let phases = base.sample_phases(opts.samples, opts.seed);
    let reference: Vec<Option<TargetValue>> =
        phases.par_iter().map(|x| target_at(&a, base, x, opts)).collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let b = family.at(h)?;
        let distance = sup_distance(&a, &b, base, &phases)?;
        let dists: Vec<Option<f64>> = phases
            .par_iter()
            .zip(reference.par_iter())
            .map(|(x, r)| {
                let Some(r) = r else { return Ok(None) };
                match target_at(&b, base, x, opts)? {
                    Some(t) => target_distance(r, &t).map(Some),
                    None => Ok(None),
                }
            })
            .collect::<Result<_>>()?;
        let mut pointwise: Vec<f64> = dists.iter().flatten().copied().collect();
        let undefined = dists.len() - pointwise.len();
        pointwise.sort_by(|p, q| p.total_cmp(q));
        let (mean_dist, q90_dist) = if pointwise.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (mean_estimate(&pointwise).mean, quantile(&pointwise, 0.9))
        };
        let level = h.abs().powf(opts.alpha_trial);
        let exceed = pointwise.iter().filter(|d| **d > level).count();
        let exceed_fraction = if pointwise.is_empty() { f64::NAN } else { exceed as f64 / pointwise.len() as f64 };
        records.push(ContinuityRecord { h, distance, mean_dist, q90_dist, exceed_fraction, pointwise, undefined });
    }
    let fit = modulus_fit(&records).ok();
    Ok((records, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusFit {
    pub alpha: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    /// Records left out because their mean distance was zero or undefined.
    pub excluded: usize,
}

/// Least-squares slope of `log mean_dist` against `log distance`.
pub fn modulus_fit(records: &[ContinuityRecord]) -> Result<ModulusFit> {
    let usable: Vec<&ContinuityRecord> =
        records.iter().filter(|r| r.mean_dist > 0.0 && r.mean_dist.is_finite() && r.distance > 0.0).collect();
    let excluded = records.len() - usable.len();
    if usable.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} records with positive distance, need 3", usable.len())));
    }
    let xs: Vec<f64> = usable.iter().map(|r| r.distance.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|r| r.mean_dist.ln()).collect();
    let fit = least_squares(&xs, &ys).ok_or_else(|| Error::DegenerateFit("repeated distances".into()))?;
    Ok(ModulusFit { alpha: fit.slope, intercept: fit.intercept, residuals: fit.residuals, excluded })
}

/// Whether `mean_dist` never increases along the records, in list order.
pub fn nonincreasing_along(records: &[ContinuityRecord]) -> bool {
    records.windows(2).all(|w| w[1].mean_dist <= w[0].mean_dist)
}
