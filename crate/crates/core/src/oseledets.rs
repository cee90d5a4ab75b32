//! Finite-scale Oseledets data.
//!
//! The most expanding `k`-plane of `A^(n)(x)` is read from the top right
//! singular vector of the separately accumulated product `∧_k A^(n)(x)`, so
//! planes stay accurate after `s_{k+1}/s_k` drops below machine precision.
//! The filtration at scale `n` is `F_j = v_{τ_{j-1}}(A)(x)^⊥` and the
//! decomposition is `E_j = v_{τ_j}(A*)(x) ∩ v_{τ_{j-1}}(A)(x)^⊥`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cocycle::{adjoint_exterior_iterates, Cocycle, ExteriorIterates};
use crate::dynamics::{BaseSystem, Phase};
use crate::error::{Error, Result};
use crate::grassmann::{
    alignment, subspace_distance, transversality, Decomposition, Flag, Signature, Subspace, THETA_MIN,
};
use crate::linalg::{exterior_power_unchecked, rift, svd_unchecked, Matrix, ScaledMatrix, GAP_TOLERANCE};
use crate::stats::least_squares;

/// Hypothesis constant `c` in `κ_ap ≤ c ε_ap²`.
pub const AP_ADMISSION: f64 = 0.01;

/// Conclusion constant the AP check asserts against.
pub const AP_CONCLUSION: f64 = 100.0;

/// Distances below this are treated as converged by [`convergence_rate`];
/// the reference plane itself carries rounding error near `1e-13`.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// `v^(n)_τ(A)(x)`, or a record of why it is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDirection {
    pub n: usize,
    pub value: Option<Flag>,
    /// `min_j log gr_{τ_j}(A^(n)(x))`.
    pub log_gap: f64,
    /// First `τ_j` without a gap.
    pub failing: Option<usize>,
}

impl PartialDirection {
    pub fn defined(&self) -> bool {
        self.value.is_some()
    }

    pub fn flag(&self) -> Result<&Flag> {
        self.value.as_ref().ok_or_else(|| {
            Error::Undefined(format!("no gap at k={} (scale {})", self.failing.unwrap_or(0), self.n))
        })
    }
}

/// Most expanding τ-flag read off precomputed exterior iterates.
pub fn direction_from(ex: &ExteriorIterates, tau: &Signature) -> Result<PartialDirection> {
    if tau.ambient() != ex.dim {
        return Err(Error::DimensionMismatch(format!("signature in R^{}, cocycle in R^{}", tau.ambient(), ex.dim)));
    }
    let threshold = GAP_TOLERANCE.ln_1p();
    let mut log_gap = f64::INFINITY;
    let mut failing = None;
    for &k in tau.dims() {
        let g = ex.log_gap_ratio(k);
        log_gap = log_gap.min(g);
        if failing.is_none() && !(g > threshold) {
            failing = Some(k);
        }
    }
    if failing.is_some() {
        return Ok(PartialDirection { n: ex.n, value: None, log_gap, failing });
    }
    let planes = tau.dims().iter().map(|&k| ex.top_plane(k)).collect::<Result<Vec<_>>>()?;
    let flag = Flag::nested_from_planes(tau.clone(), &planes)?;
    Ok(PartialDirection { n: ex.n, value: Some(flag), log_gap, failing: None })
}

/// `v^(n)_τ(A)(x)`: defined when `gr_{τ_j}(A^(n)(x)) > 1 + GAP_TOLERANCE` for all `j`.
pub fn finite_direction(
    a: &Cocycle,
    base: &BaseSystem,
    x: &Phase,
    n: usize,
    tau: &Signature,
) -> Result<PartialDirection> {
    let ex = ExteriorIterates::compute(a, base, x, n)?;
    direction_from(&ex, tau)
}

/// `v^(n)_τ(A*)(x)`, from `A^(n)(T^{-n} x)ᵀ`.
pub fn adjoint_direction(
    a: &Cocycle,
    base: &BaseSystem,
    x: &Phase,
    n: usize,
    tau: &Signature,
) -> Result<PartialDirection> {
    let ex = adjoint_exterior_iterates(a, base, x, n)?;
    direction_from(&ex, tau)
}

/// Smallest `l` with `ln 2 / l + 2^{1-l} < ε`, as `r = 2^l`.
pub fn doubling_ratio(eps: f64) -> Option<u64> {
    (1..63u32).find(|&l| std::f64::consts::LN_2 / l as f64 + 2f64.powi(1 - l as i32) < eps).map(|l| 1u64 << l)
}

/// `m_0 = n0 < m_1 < ... < m_k = n` with `m_i = ⌊n0 2^{(1+θ)i}⌋`,
/// `θ = log₂(n/n0)/k - 1`, `k = ⌊log₂(n/n0)⌋`.
///
/// The ratio `r` from [`doubling_ratio`] guarantees the ε-doubling property;
/// ranges below `r n0` are still accepted when the constructed sequence
/// passes the inequality directly, and exact powers of two always pass.
pub fn doubling_sequence(n0: usize, n: usize, eps: f64) -> Result<Vec<usize>> {
    if n0 == 0 || n < n0 || !(eps > 0.0) {
        return Err(Error::InvalidParameter {
            name: "n0, n, eps".into(),
            reason: "need 1 ≤ n0 ≤ n and eps > 0".into(),
        });
    }
    if n == n0 {
        return Ok(vec![n0]);
    }
    let ratio = n as f64 / n0 as f64;
    let k = (ratio.log2().floor() as usize).max(1);
    let theta = ratio.log2() / k as f64 - 1.0;
    let mut seq: Vec<usize> = (0..=k).map(|i| (n0 as f64 * 2f64.powf((1.0 + theta) * i as f64)).floor() as usize).collect();
    seq[0] = n0;
    seq[k] = n;
    let increasing = seq.windows(2).all(|w| w[0] < w[1]);
    if increasing && is_doubling(&seq, eps) {
        return Ok(seq);
    }
    let min = doubling_ratio(eps).map_or(u64::MAX, |r| r.saturating_mul(n0 as u64));
    Err(Error::InfeasibleRange { n: n as u64, min })
}

/// `|m_i - 2 m_{i-1}| < ε m_i` for every `i ≥ 1`.
pub fn is_doubling(seq: &[usize], eps: f64) -> bool {
    seq.windows(2).all(|w| (w[1] as f64 - 2.0 * w[0] as f64).abs() < eps * w[1] as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleStep {
    pub m: usize,
    /// Nominal doubling value before adjustment.
    pub nominal: usize,
    pub log_gap: f64,
    /// Gap of the bridge `A^(m_{i+1} - m_i)(T^{m_i} x)`; absent for the last time.
    pub bridge_log_gap: Option<f64>,
    /// `log ρ(A^(m_i)(x), bridge)`.
    pub log_rift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvalancheSchedule {
    pub n0: usize,
    pub eps: f64,
    pub kappa: f64,
    pub steps: Vec<ScheduleStep>,
}

impl AvalancheSchedule {
    pub fn times(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.m).collect()
    }
}

/// Products of the first `j` step matrices, degrees 1 and 2.
struct Prefix {
    mats: Vec<Matrix>,
    wedge: Vec<Matrix>,
    one: Vec<ScaledMatrix>,
    two: Vec<ScaledMatrix>,
}

impl Prefix {
    fn new(mats: Vec<Matrix>) -> Self {
        let m = mats[0].nrows();
        let wedge: Vec<Matrix> = mats.iter().map(|g| exterior_power_unchecked(g, 2)).collect();
        let mut one = vec![ScaledMatrix::identity(m)];
        let mut two = vec![ScaledMatrix::identity(wedge[0].nrows())];
        for (g, w) in mats.iter().zip(&wedge) {
            let mut p = one.last().unwrap().clone();
            p.left_mul(g);
            one.push(p);
            let mut q = two.last().unwrap().clone();
            q.left_mul(w);
            two.push(q);
        }
        Self { mats, wedge, one, two }
    }

    fn block(&self, i: usize, j: usize) -> (ScaledMatrix, ScaledMatrix) {
        let m = self.mats[0].nrows();
        let mut one = ScaledMatrix::identity(m);
        let mut two = ScaledMatrix::identity(self.wedge[0].nrows());
        for t in i..j {
            one.left_mul(&self.mats[t]);
            two.left_mul(&self.wedge[t]);
        }
        (one, two)
    }
}

fn log_gap1(one: &ScaledMatrix, two: &ScaledMatrix) -> f64 {
    let l1 = one.log_norm();
    let l2 = two.log_norm();
    if l1 == f64::NEG_INFINITY {
        return 0.0;
    }
    if l2 == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    2.0 * l1 - l2
}

/// Adjusts the doubling sequence from `n0` to `n` so every time carries a
/// gap `gr(A^(m_i)(x)) ≥ e^{m_i(κ-2ε)}`, every bridge a gap
/// `≥ e^{m_i(κ-2ε)(1-ε)/(1+ε)}` and every junction a rift `≥ e^{-5 m_i ε}`.
/// Each time moves within `±ε m_i / 6`, scanning outward.
pub fn avalanche_times(
    a: &Cocycle,
    base: &BaseSystem,
    x: &Phase,
    eps: f64,
    kappa: f64,
    n0: usize,
    n: usize,
) -> Result<AvalancheSchedule> {
    if a.dim() < 2 {
        return Err(Error::InvalidParameter { name: "cocycle".into(), reason: "needs dimension ≥ 2".into() });
    }
    if !(eps > 0.0 && eps < kappa) {
        return Err(Error::InvalidParameter { name: "eps".into(), reason: "need 0 < eps < kappa".into() });
    }
    let nominal = doubling_sequence(n0, n, eps)?;
    let window = |m: usize| (eps * m as f64 / 6.0).floor() as usize;
    let reach = n + window(n);
    let pre = Prefix::new(a.matrices_along(base, x, 0, reach)?);
    let gap_at = |m: usize| log_gap1(&pre.one[m], &pre.two[m]);

    let mut steps: Vec<ScheduleStep> = Vec::with_capacity(nominal.len());
    for (i, &nom) in nominal.iter().enumerate() {
        let w = window(nom);
        let floor = steps.last().map_or(1, |s| s.m + 1);
        let mut last_failure = String::new();
        let mut chosen = None;
        for c in outward(nom, w) {
            if c < floor || c > reach {
                continue;
            }
            let g = gap_at(c);
            if g < c as f64 * (kappa - 2.0 * eps) {
                last_failure = format!("gap at m={c}: log gr = {g:.4}");
                continue;
            }
            if let Some(prev) = steps.last() {
                let (one, two) = pre.block(prev.m, c);
                let bg = log_gap1(&one, &two);
                let need = prev.m as f64 * (kappa - 2.0 * eps) * (1.0 - eps) / (1.0 + eps);
                if bg < need {
                    last_failure = format!("bridge gap between m={} and m={c}: log gr = {bg:.4}", prev.m);
                    continue;
                }
                let r = junction_rift(&pre.one[prev.m], &one);
                if r < -5.0 * prev.m as f64 * eps {
                    last_failure = format!("rift between m={} and m={c}: log ρ = {r:.4}", prev.m);
                    continue;
                }
                chosen = Some((c, g, bg, r));
            } else {
                chosen = Some((c, g, f64::NAN, f64::NAN));
            }
            break;
        }
        let Some((c, g, bg, r)) = chosen else {
            return Err(Error::NoSchedule(format!("time {i} (nominal {nom}): {last_failure}")));
        };
        if let Some(prev) = steps.last_mut() {
            prev.bridge_log_gap = Some(bg);
            prev.log_rift = Some(r);
        }
        steps.push(ScheduleStep { m: c, nominal: nom, log_gap: g, bridge_log_gap: None, log_rift: None });
    }
    Ok(AvalancheSchedule { n0, eps, kappa, steps })
}

fn outward(center: usize, w: usize) -> impl Iterator<Item = usize> {
    std::iter::once(center).chain((1..=w).flat_map(move |d| {
        let up = Some(center + d);
        let down = center.checked_sub(d);
        up.into_iter().chain(down)
    }))
}

fn junction_rift(g0: &ScaledMatrix, g1: &ScaledMatrix) -> f64 {
    match rift(g0.factor(), g1.factor()) {
        Ok(r) if r > 0.0 => r.ln(),
        _ => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    pub len: usize,
    pub kappa: f64,
    pub eps: f64,
    /// `d(v(g^(n)*), v(g_{n-1}*))`.
    pub adjoint_distance: f64,
    /// `d(v(g^(n)), v(g_0))`.
    pub forward_distance: f64,
    /// `C_ap κ_ap / ε_ap`.
    pub bound: f64,
    /// `max(distances) ε_ap / κ_ap`.
    pub measured_constant: f64,
    pub within_bound: bool,
}

/// Checks the avalanche-principle hypotheses on a chain `g_0, ..., g_{n-1}`
/// and measures both conclusion distances against `C_ap κ_ap / ε_ap`.
pub fn ap_check(chain: &[Matrix], kappa: f64, eps: f64) -> Result<ApReport> {
    if chain.is_empty() {
        return Err(Error::InvalidParameter { name: "chain".into(), reason: "empty".into() });
    }
    if !(kappa > 0.0 && eps > 0.0 && kappa <= AP_ADMISSION * eps * eps) {
        return Err(Error::InvalidParameter {
            name: "kappa_ap".into(),
            reason: format!("need 0 < κ_ap ≤ {AP_ADMISSION}·ε_ap²"),
        });
    }
    let m = chain[0].nrows();
    if m < 2 || chain.iter().any(|g| g.shape() != (m, m)) {
        return Err(Error::DimensionMismatch("chain needs square matrices of one size ≥ 2".into()));
    }
    let sds: Vec<_> = chain.iter().map(svd_unchecked).collect();
    for (i, sd) in sds.iter().enumerate() {
        let gr = sd.gap_ratio(1)?;
        if !(gr > 1.0 / kappa) {
            return Err(Error::HypothesisFailure { index: i, condition: format!("gap: gr = {gr:e} ≤ 1/κ_ap") });
        }
    }
    for i in 1..chain.len() {
        let r = rift(&chain[i - 1], &chain[i])?;
        if !(r > eps) {
            return Err(Error::HypothesisFailure { index: i, condition: format!("angle: rift = {r:e} ≤ ε_ap") });
        }
    }
    let mut p = ScaledMatrix::identity(m);
    for g in chain {
        p.left_mul(g);
    }
    let prod = svd_unchecked(p.factor());
    let line = |v: nalgebra::DVectorView<f64>| Subspace::from_orthonormal(Matrix::from_column_slice(m, 1, v.as_slice()));
    let top_left = |sd: &crate::linalg::SingularData| line(sd.left.column(0));
    let top_right = |sd: &crate::linalg::SingularData| line(sd.right.column(0));
    let adjoint_distance = subspace_distance(&top_left(&prod), &top_left(sds.last().unwrap()))?;
    let forward_distance = subspace_distance(&top_right(&prod), &top_right(&sds[0]))?;
    let bound = AP_CONCLUSION * kappa / eps;
    let worst = adjoint_distance.max(forward_distance);
    Ok(ApReport {
        len: chain.len(),
        kappa,
        eps,
        adjoint_distance,
        forward_distance,
        bound,
        measured_constant: worst * eps / kappa,
        within_bound: worst <= bound,
    })
}

fn rotation(t: f64) -> Matrix {
    let (s, c) = t.sin_cos();
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// A chain of `R(a_i) diag(σ_i, 1) R(b_i)ᵀ` with `σ_i ∈ [min_gap, 10 min_gap]`
/// and `|a_i|, |b_i| ≤ max_angle`; `max_angle = 0` gives shared axes.
pub fn random_ap_chain(seed: u64, len: usize, min_gap: f64, max_angle: f64) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let sigma = min_gap * rng.random_range(1.0..10.0);
            let a = if max_angle > 0.0 { rng.random_range(-max_angle..=max_angle) } else { 0.0 };
            let b = if max_angle > 0.0 { rng.random_range(-max_angle..=max_angle) } else { 0.0 };
            let d = Matrix::from_row_slice(2, 2, &[sigma, 0.0, 0.0, 1.0]);
            rotation(a) * d * rotation(b).transpose()
        })
        .collect()
}

/// `F_j = v^(n)_{τ_{j-1}}(A)(x)^⊥`, returned as the increasing flag
/// `v_{τ_k}^⊥ ⊂ ... ⊂ v_{τ_1}^⊥` of signature `τ^⊥`.
pub fn oseledets_filtration(a: &Cocycle, base: &BaseSystem, x: &Phase, n: usize, tau: &Signature) -> Result<Flag> {
    let v = finite_direction(a, base, x, n, tau)?;
    Ok(v.flag()?.complement())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OseledetsDecomposition {
    pub decomposition: Decomposition,
    /// `θ_⊓` of the two flags it was built from.
    pub theta: f64,
}

/// `E_j = v^(n)_{τ_j}(A*)(x) ∩ v^(n)_{τ_{j-1}}(A)(x)^⊥`.
pub fn oseledets_decomposition(
    a: &Cocycle,
    base: &BaseSystem,
    x: &Phase,
    n: usize,
    tau: &Signature,
) -> Result<OseledetsDecomposition> {
    let forward = finite_direction(a, base, x, n, tau)?;
    let adjoint = adjoint_direction(a, base, x, n, tau)?;
    decomposition_from(adjoint.flag()?, forward.flag()?)
}

/// Builds `v_τ(A*) ⊓ v_τ(A)^⊥` from the two flags.
pub fn decomposition_from(adjoint: &Flag, forward: &Flag) -> Result<OseledetsDecomposition> {
    let complement = forward.complement();
    let theta = transversality(adjoint, &complement)?;
    let decomposition = crate::grassmann::intersect_with_threshold(adjoint, &complement, THETA_MIN)?;
    Ok(OseledetsDecomposition { decomposition, theta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantObject {
    Filtration,
    Decomposition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    /// `d(A(x) C_j(x), C_j(Tx))` per component.
    pub residuals: Vec<f64>,
    /// Components whose image lost rank under `A(x)`.
    pub collapsed: Vec<usize>,
}

impl InvarianceReport {
    pub fn max(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn image(g: &Matrix, s: &Subspace) -> Option<Subspace> {
    let b = g * s.basis();
    let values = crate::linalg::singular_values(&b);
    let s1 = values[0];
    let rank = values.iter().filter(|&&v| v > 1e-12 * s1).count();
    if s1 <= 0.0 || rank < s.dim() {
        return None;
    }
    Subspace::from_basis(b).ok()
}

/// Compares the image of each component under `A(x)` with the same object
/// computed at `Tx`, both at scale `n`.
pub fn invariance_residual(
    a: &Cocycle,
    base: &BaseSystem,
    x: &Phase,
    n: usize,
    tau: &Signature,
    object: InvariantObject,
) -> Result<InvarianceReport> {
    let tx = base.step(x, 1)?;
    let g = a.eval(base, x)?;
    let (here, there): (Vec<Subspace>, Vec<Subspace>) = match object {
        InvariantObject::Filtration => (
            oseledets_filtration(a, base, x, n, tau)?.components().to_vec(),
            oseledets_filtration(a, base, &tx, n, tau)?.components().to_vec(),
        ),
        InvariantObject::Decomposition => (
            oseledets_decomposition(a, base, x, n, tau)?.decomposition.components().to_vec(),
            oseledets_decomposition(a, base, &tx, n, tau)?.decomposition.components().to_vec(),
        ),
    };
    let mut residuals = Vec::with_capacity(here.len());
    let mut collapsed = Vec::new();
    for (j, (c, d)) in here.iter().zip(&there).enumerate() {
        match image(&g, c) {
            Some(img) => residuals.push(subspace_distance(&img, d)?),
            None => {
                collapsed.push(j);
                residuals.push(f64::NAN);
            }
        }
    }
    Ok(InvarianceReport { residuals, collapsed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    /// `(n, (1/n) log ‖A^(n)(x) v‖)`.
    pub rates: Vec<(usize, f64)>,
    /// Least-squares slope of `log ‖A^(n)(x) v‖` against `n`.
    pub slope: f64,
    pub last: f64,
    /// Max and min of the rates over the upper half of `n_list`.
    pub upper: f64,
    pub lower: f64,
}

/// Growth of `‖A^(n)(x) v‖` along the sorted scales `n_list`.
pub fn growth_rate_along(a: &Cocycle, base: &BaseSystem, x: &Phase, v: &[f64], n_list: &[usize]) -> Result<GrowthReport> {
    let m = a.dim();
    if v.len() != m {
        return Err(Error::DimensionMismatch("vector length".into()));
    }
    let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter { name: "v".into(), reason: "must be nonzero".into() });
    }
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::InvalidParameter { name: "n_list".into(), reason: "strictly increasing, positive".into() });
    }
    let n_max = *n_list.last().unwrap();
    let mats = a.matrices_along(base, x, 0, n_max)?;
    let mut w = nalgebra::DVector::from_iterator(m, v.iter().map(|t| t / norm));
    let mut log = 0.0;
    let mut logs = Vec::with_capacity(n_list.len());
    let mut next = 0;
    for (step, g) in mats.iter().enumerate() {
        if log > f64::NEG_INFINITY {
            w = g * w;
            let s = w.norm();
            if s > 0.0 {
                log += s.ln();
                w /= s;
            } else {
                log = f64::NEG_INFINITY;
            }
        }
        if step + 1 == n_list[next] {
            logs.push(log);
            next += 1;
        }
    }
    let rates: Vec<(usize, f64)> = n_list.iter().zip(&logs).map(|(&n, &l)| (n, l / n as f64)).collect();
    let last = rates.last().unwrap().1;
    let slope = if logs.contains(&f64::NEG_INFINITY) {
        f64::NEG_INFINITY
    } else if n_list.len() >= 2 {
        let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
        least_squares(&xs, &logs).map_or(last, |f| f.slope)
    } else {
        last
    };
    let tail = &rates[rates.len() / 2..];
    let upper = tail.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let lower = tail.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok(GrowthReport { rates, slope, last, upper, lower })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n_max: usize,
    /// Per flag component: `(n, d(v^(n)_{τ_j}, v^(n_max)_{τ_j}))`.
    pub distances: Vec<Vec<(usize, f64)>>,
    /// Per component: the rate `s` of the fit `log d ≈ s n` through the
    /// origin, i.e. the mean of `(1/n) log d` weighted by `n²`, over points
    /// above [`DISTANCE_FLOOR`]. `-inf` when no point is above it.
    pub slopes: Vec<f64>,
    /// Ordinary least-squares slope of `log d` against `n` with a free
    /// intercept; NaN with fewer than two usable points.
    pub free_slopes: Vec<f64>,
}

/// Rate at which `v^(n)_τ(A)(x)` approaches the direction at the largest scale.
pub fn convergence_rate(
    a: &Cocycle,
    base: &BaseSystem,
    x: &Phase,
    tau: &Signature,
    n_list: &[usize],
) -> Result<ConvergenceReport> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::InvalidParameter { name: "n_list".into(), reason: "need ≥ 2 increasing scales".into() });
    }
    let n_max = *n_list.last().unwrap();
    let reference = finite_direction(a, base, x, n_max, tau)?;
    let reference = reference.flag()?;
    let mut distances = vec![Vec::new(); tau.len()];
    for &n in &n_list[..n_list.len() - 1] {
        let v = finite_direction(a, base, x, n, tau)?;
        let v = v.flag()?;
        for (j, (c, r)) in v.components().iter().zip(reference.components()).enumerate() {
            distances[j].push((n, subspace_distance(c, r)?));
        }
    }
    let mut slopes = Vec::with_capacity(tau.len());
    let mut free_slopes = Vec::with_capacity(tau.len());
    for series in &distances {
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            series.iter().filter(|p| p.1 > DISTANCE_FLOOR).map(|&(n, d)| (n as f64, d.ln())).unzip();
        if xs.is_empty() {
            slopes.push(f64::NEG_INFINITY);
        } else {
            let num: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
            let den: f64 = xs.iter().map(|x| x * x).sum();
            slopes.push(num / den);
        }
        free_slopes.push(least_squares(&xs, &ys).map_or(f64::NAN, |f| f.slope));
    }
    Ok(ConvergenceReport { n_max, distances, slopes, free_slopes })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentSeries {
    /// `(n, (1/n) log α(v^(n)(A*)(Tⁿx), v^(n)(A)(Tⁿx)))`.
    pub series: Vec<(usize, f64)>,
    /// `|series|` at the largest scale.
    pub trend: f64,
}

/// Angle between the most expanding directions of `A*` and `A` at `Tⁿx`.
pub fn alpha_alignment_series(a: &Cocycle, base: &BaseSystem, x: &Phase, n_list: &[usize]) -> Result<AlignmentSeries> {
    let tau = Signature::new(a.dim(), vec![1])?;
    let mut series = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let tnx = base.step(x, n as i64)?;
        let adj = adjoint_direction(a, base, &tnx, n, &tau)?;
        let fwd = finite_direction(a, base, &tnx, n, &tau)?;
        let al = alignment(adj.flag()?.component(0), fwd.flag()?.component(0))?;
        series.push((n, al.ln() / n as f64));
    }
    let trend = series.last().map_or(f64::NAN, |p| p.1.abs());
    Ok(AlignmentSeries { series, trend })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::min_angle_sine;
    use crate::linalg::most_expanding;

    fn diag(d: &[f64]) -> Matrix {
        Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))
    }

    fn rot() -> BaseSystem {
        BaseSystem::golden_rotation()
    }

    fn x0() -> Phase {
        rot().sample_phases(1, 0).remove(0)
    }

    fn sig(m: usize, d: &[usize]) -> Signature {
        Signature::new(m, d.to_vec()).unwrap()
    }

    fn line(v: &[f64]) -> Subspace {
        Subspace::from_basis(Matrix::from_column_slice(v.len(), 1, v)).unwrap()
    }

    #[test]
    fn finite_direction_cases() {
        let a = Cocycle::constant(diag(&[3.0, 1.0]));
        for n in [1, 10, 500] {
            let d = finite_direction(&a, &rot(), &x0(), n, &sig(2, &[1])).unwrap();
            let f = d.flag().unwrap();
            assert!(subspace_distance(f.component(0), &Subspace::coordinate(2, &[0])).unwrap() < 1e-15);
        }
        let d = finite_direction(&Cocycle::identity(2), &rot(), &x0(), 20, &sig(2, &[1])).unwrap();
        assert!(!d.defined());
        assert_eq!(d.failing, Some(1));
        assert!(matches!(d.flag(), Err(Error::Undefined(_))));
    }

    #[test]
    fn finite_direction_matches_svd_at_moderate_scale() {
        let a = Cocycle::random_glm(3, 2, 4, 1.0).unwrap();
        let s = BaseSystem::bernoulli(vec![0.5, 0.5]).unwrap();
        let x = s.sample_phases(1, 9).remove(0);
        let n = 6;
        let g = crate::cocycle::iterate(&a, &s, &x, n).unwrap().value.to_matrix();
        let d = finite_direction(&a, &s, &x, n, &sig(3, &[1, 2])).unwrap();
        let f = d.flag().unwrap();
        for (j, k) in [1, 2].into_iter().enumerate() {
            let want = most_expanding(&g, k).unwrap();
            assert!(subspace_distance(f.component(j), &want).unwrap() < 1e-9);
        }
    }

    #[test]
    fn doubling_sequences() {
        assert_eq!(doubling_sequence(10, 160, 1e-6).unwrap(), vec![10, 20, 40, 80, 160]);
        assert_eq!(doubling_sequence(3, 3 * 64, 0.01).unwrap(), vec![3, 6, 12, 24, 48, 96, 192]);
        let s = doubling_sequence(10, 200, 0.1).unwrap();
        assert_eq!((s[0], *s.last().unwrap()), (10, 200));
        for w in s.windows(2) {
            assert!((w[1] as f64 - 2.0 * w[0] as f64).abs() < 0.1 * w[1] as f64);
        }
        assert!(matches!(doubling_sequence(10, 29, 0.01), Err(Error::InfeasibleRange { .. })));
        // the lemma's ratio
        assert_eq!(doubling_ratio(0.1), Some(256));
    }

    #[test]
    fn doubling_sequence_beyond_lemma_ratio_is_doubling() {
        let eps = 0.2;
        let r = doubling_ratio(eps).unwrap() as usize;
        for n0 in [1, 5, 17] {
            for n in [r * n0, r * n0 + 7, 3 * r * n0 + 1] {
                let s = doubling_sequence(n0, n, eps).unwrap();
                assert!(is_doubling(&s, eps), "{n0} {n} {s:?}");
            }
        }
    }

    #[test]
    fn avalanche_constant_and_identity() {
        let kappa: f64 = 1.0;
        let a = Cocycle::constant(diag(&[kappa.exp(), 1.0]));
        let sch = avalanche_times(&a, &rot(), &x0(), 0.1, kappa, 8, 128).unwrap();
        assert_eq!(sch.times(), vec![8, 16, 32, 64, 128]);
        for st in &sch.steps[..sch.steps.len() - 1] {
            assert!(st.log_rift.unwrap().abs() < 1e-12);
        }
        let id = avalanche_times(&Cocycle::identity(2), &rot(), &x0(), 0.1, kappa, 8, 128);
        assert!(matches!(id, Err(Error::NoSchedule(_))));
    }

    #[test]
    fn outward_scan_order() {
        let v: Vec<usize> = outward(10, 2).collect();
        assert_eq!(v, vec![10, 11, 9, 12, 8]);
        let v: Vec<usize> = outward(1, 2).collect();
        assert_eq!(v, vec![1, 2, 0, 3]);
    }

    #[test]
    fn ap_check_trivial_chains() {
        let (kappa, eps) = (1e-4, 0.1);
        let g = diag(&[2.0 / kappa, 1.0]);
        let r = ap_check(std::slice::from_ref(&g), kappa, eps).unwrap();
        assert!(r.forward_distance < 1e-15 && r.adjoint_distance < 1e-15);
        let r = ap_check(&vec![g; 30], kappa, eps).unwrap();
        assert!(r.forward_distance < 1e-15 && r.adjoint_distance < 1e-15);
        assert!(r.within_bound);
    }

    #[test]
    fn ap_check_rejections() {
        let (kappa, eps) = (1e-4, 0.1);
        assert!(ap_check(&[diag(&[2e4, 1.0])], 1e-2, 0.1).is_err());
        let weak = ap_check(&[diag(&[2e4, 1.0]), diag(&[5.0, 1.0])], kappa, eps);
        assert!(matches!(weak, Err(Error::HypothesisFailure { index: 1, .. })));
        let crossed = [diag(&[2e4, 1.0]), diag(&[1.0, 2e4])];
        assert!(matches!(ap_check(&crossed, kappa, eps), Err(Error::HypothesisFailure { index: 1, .. })));
    }

    #[test]
    fn ap_check_random_chains_against_exact_product() {
        let (kappa, eps) = (1e-4, 0.1);
        for seed in 0..50 {
            let chain = random_ap_chain(seed, 20, 2e4, 0.3);
            let r = ap_check(&chain, kappa, eps).unwrap();
            assert!(r.within_bound, "{r:?}");
            // oracle: double-double product and a plain SVD
            let exact = crate::testing::dd_scaled_product(&chain).0;
            let want = most_expanding(&exact, 1).unwrap();
            let g0 = most_expanding(&chain[0], 1).unwrap();
            assert!((subspace_distance(&want, &g0).unwrap() - r.forward_distance).abs() < 1e-9);
        }
    }

    #[test]
    fn filtration_of_diagonal() {
        let a = Cocycle::constant(diag(&[4.0, 2.0, 1.0]));
        let f = oseledets_filtration(&a, &rot(), &x0(), 50, &sig(3, &[1, 2])).unwrap();
        assert_eq!(f.signature().dims(), &[1, 2]);
        assert!(subspace_distance(f.component(0), &Subspace::coordinate(3, &[2])).unwrap() < 1e-12);
        assert!(subspace_distance(f.component(1), &Subspace::coordinate(3, &[1, 2])).unwrap() < 1e-12);
        let empty = oseledets_filtration(&a, &rot(), &x0(), 50, &Signature::empty(3)).unwrap();
        assert!(empty.signature().is_empty());
    }

    #[test]
    fn non_normal_eigen_oracle() {
        // eigenvalues 2, 1/2; eigenvectors (1, 0) and (1, -3/2)
        let g = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let a = Cocycle::constant(g);
        let tau = sig(2, &[1]);
        let f = oseledets_filtration(&a, &rot(), &x0(), 300, &tau).unwrap();
        let stable = line(&[1.0, -1.5]);
        assert!(subspace_distance(f.component(0), &stable).unwrap() < 1e-12);
        let d = oseledets_decomposition(&a, &rot(), &x0(), 300, &tau).unwrap();
        let e = d.decomposition.components();
        assert!(subspace_distance(&e[0], &line(&[1.0, 0.0])).unwrap() < 1e-12);
        assert!(subspace_distance(&e[1], &stable).unwrap() < 1e-12);
        let sine = min_angle_sine(&e[0], &e[1]).unwrap();
        let want = 1.5 / (1.0f64 + 2.25).sqrt();
        assert!((sine - want).abs() < 1e-12);
        assert!(d.theta > 0.0);
    }

    #[test]
    fn decomposition_of_diagonal_and_no_gap() {
        let a = Cocycle::constant(diag(&[4.0, 2.0, 1.0]));
        let d = oseledets_decomposition(&a, &rot(), &x0(), 40, &sig(3, &[1, 2])).unwrap();
        for (j, c) in d.decomposition.components().iter().enumerate() {
            assert!(subspace_distance(c, &Subspace::coordinate(3, &[j])).unwrap() < 1e-12);
        }
        let id = oseledets_decomposition(&Cocycle::identity(2), &rot(), &x0(), 40, &sig(2, &[1]));
        assert!(matches!(id, Err(Error::Undefined(_))));
    }

    #[test]
    fn decomposition_partial_sums_match_flags() {
        let a = Cocycle::random_glm(3, 2, 13, 1.0).unwrap();
        let s = BaseSystem::bernoulli(vec![0.5, 0.5]).unwrap();
        let x = s.sample_phases(1, 2).remove(0);
        let tau = sig(3, &[1, 2]);
        let n = 60;
        let d = oseledets_decomposition(&a, &s, &x, n, &tau).unwrap().decomposition;
        let adj = adjoint_direction(&a, &s, &x, n, &tau).unwrap();
        let fwd = finite_direction(&a, &s, &x, n, &tau).unwrap();
        for l in 1..=2 {
            let lower = d.partial_sum(0..l).unwrap();
            assert!(subspace_distance(&lower, adj.flag().unwrap().component(l - 1)).unwrap() < 1e-8);
            let upper = d.partial_sum(l..3).unwrap();
            let want = fwd.flag().unwrap().component(l - 1).complement();
            assert!(subspace_distance(&upper, &want).unwrap() < 1e-8);
        }
    }

    #[test]
    fn invariance_of_constant_diagonal() {
        let a = Cocycle::constant(diag(&[4.0, 2.0, 1.0]));
        for obj in [InvariantObject::Filtration, InvariantObject::Decomposition] {
            let r = invariance_residual(&a, &rot(), &x0(), 30, &sig(3, &[1, 2]), obj).unwrap();
            assert!(r.max() <= 1e-10);
            assert!(r.collapsed.is_empty());
        }
    }

    #[test]
    fn growth_rates() {
        let a = Cocycle::constant(diag(&[4.0, 2.0, 1.0]));
        let ns = [10, 20, 40, 80];
        let r = growth_rate_along(&a, &rot(), &x0(), &[0.0, 1.0, 0.0], &ns).unwrap();
        assert!((r.slope - 2f64.ln()).abs() < 1e-12);
        assert!((r.last - 2f64.ln()).abs() < 1e-12);
        let r = growth_rate_along(&a, &rot(), &x0(), &[1.0, 1.0, 0.0], &ns).unwrap();
        assert!((r.slope - 4f64.ln()).abs() < 1e-6);
        let k = Cocycle::constant(diag(&[0.0, 1.0]));
        let r = growth_rate_along(&k, &rot(), &x0(), &[1.0, 0.0], &ns).unwrap();
        assert_eq!(r.slope, f64::NEG_INFINITY);
    }

    #[test]
    fn convergence_rates() {
        let a = Cocycle::constant(diag(&[4.0, 2.0]));
        let r = convergence_rate(&a, &rot(), &x0(), &sig(2, &[1]), &[1, 2, 4, 8]).unwrap();
        assert_eq!(r.slopes[0], f64::NEG_INFINITY);
        let g = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let ns: Vec<usize> = (1..=40).collect();
        let r = convergence_rate(&Cocycle::constant(g), &rot(), &x0(), &sig(2, &[1]), &ns).unwrap();
        assert!(r.slopes[0] <= -4f64.ln() + 0.1, "{}", r.slopes[0]);
    }

    #[test]
    fn alignment_series() {
        let sym = Cocycle::constant(diag(&[3.0, 1.0]));
        let s = alpha_alignment_series(&sym, &rot(), &x0(), &[4, 16, 64]).unwrap();
        assert!(s.series.iter().all(|p| p.1.abs() < 1e-14));
        let g = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let s = alpha_alignment_series(&Cocycle::constant(g), &rot(), &x0(), &[50, 100, 200]).unwrap();
        // α is the cosine between the unstable eigenvector and its
        // most-expanding counterpart; constant in n
        let c = s.series[0].1 * 50.0;
        for &(n, v) in &s.series {
            assert!((v * n as f64 - c).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_duality_against_exact_product() {
        let a = Cocycle::random_glm(3, 2, 17, 1.0).unwrap();
        let s = BaseSystem::bernoulli(vec![0.5, 0.5]).unwrap();
        let x = s.sample_phases(1, 4).remove(0);
        for n in [3, 20, 50] {
            let back = s.step(&x, -(n as i64)).unwrap();
            let mats = a.matrices_along(&s, &back, 0, n).unwrap();
            let exact = crate::testing::dd_scaled_product(&mats).0.transpose();
            let want = most_expanding(&exact, 1).unwrap();
            let got = adjoint_direction(&a, &s, &x, n, &sig(3, &[1])).unwrap();
            assert!(subspace_distance(got.flag().unwrap().component(0), &want).unwrap() < 1e-9);
        }
    }
}
