//! Invertible ergodic base systems.
//!
//! Three kinds are built in: torus rotations, two-sided Bernoulli shifts and
//! two-sided stationary Markov chains. Phases carry an integer step count
//! (torus) or offset (symbolic), so `T^a T^b = T^{a+b}` holds exactly and
//! backward orbits are as cheap as forward ones.
//!
//! Symbolic phases are lazy. The bi-infinite sequence of a shift phase is a
//! counter-based function of `(seed, index)`, so any window can be produced
//! by seeking a ChaCha stream. Markov paths are generated outward from index
//! 0 (forward with the transition matrix, backward with the time reversal),
//! so producing a window costs its distance from the origin.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

/// `(√5 - 1) / 2` as a double-double.
pub const GOLDEN_HI: f64 = 0.6180339887498949;
pub const GOLDEN_LO: f64 = -5.432115203682506e-17;

/// Default cap on the symbolic window length (`2 * n_max`).
pub const DEFAULT_WINDOW: usize = 1 << 16;

const INDEX_ORIGIN: i128 = 1 << 62;

/// A point of the base space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phase {
    /// `frac(origin + steps * alpha)` coordinatewise.
    Torus { origin: Vec<f64>, steps: i64 },
    /// Two-sided shift sequence `ω_{offset + i}`, `ω` determined by `seed`.
    Shift { seed: u64, offset: i64 },
    /// Two-sided Markov path position, path determined by `seed`.
    Chain { seed: u64, offset: i64 },
}

/// What a cocycle generator sees at a single phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Site<'a> {
    Torus(&'a [f64]),
    Symbol(usize),
}

impl Site<'_> {
    /// First torus coordinate, or the symbol as a real number.
    pub fn scalar(&self) -> f64 {
        match self {
            Site::Torus(x) => x[0],
            Site::Symbol(s) => *s as f64,
        }
    }
}

/// Consecutive sites `T^{start} x, ..., T^{start+len-1} x`.
#[derive(Debug, Clone)]
pub struct OrbitSegment {
    dim: usize,
    coords: Vec<f64>,
    symbols: Vec<usize>,
    len: usize,
}

impl OrbitSegment {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn site(&self, j: usize) -> Site<'_> {
        if self.dim > 0 {
            Site::Torus(&self.coords[j * self.dim..(j + 1) * self.dim])
        } else {
            Site::Symbol(self.symbols[j])
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = Site<'_>> + '_ {
        (0..self.len).map(move |j| self.site(j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseSpec {
    /// Rotation by `alpha` (one entry per torus coordinate); defaults to the
    /// golden mean on the circle.
    Rotation {
        #[serde(default)]
        alpha: Option<Vec<f64>>,
    },
    Bernoulli {
        weights: Vec<f64>,
        #[serde(default)]
        window: Option<usize>,
    },
    Markov {
        transition: Vec<Vec<f64>>,
        #[serde(default)]
        window: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Rotation { alpha_hi: Vec<f64>, alpha_lo: Vec<f64> },
    Bernoulli { weights: Vec<f64>, cumulative: Vec<f64> },
    Markov { transition: Vec<Vec<f64>>, cumulative: Vec<Vec<f64>>, reversed: Vec<Vec<f64>>, stationary: Vec<f64> },
}

/// An invertible measure-preserving ergodic map with its invariant measure.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSystem {
    kind: Kind,
    window: usize,
}

/// How Monte Carlo phases are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Iid,
    /// Kronecker lattice `frac(shift + j * golden)`; torus only, falls back to
    /// i.i.d. for symbolic systems.
    Lattice,
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn check_distribution(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidBase(format!("{name}: empty distribution")));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidBase(format!("{name}: entries must be finite and nonnegative")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidBase(format!("{name}: entries sum to {s}, not 1")));
    }
    Ok(())
}

fn draw(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

fn unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stationary vector of a row-stochastic matrix: solves `πP = π`, `Σπ = 1`.
fn stationary(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = p.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidBase("markov: stationary vector is not unique".into()))?;
    Ok(x.iter().copied().collect())
}

impl BaseSystem {
    pub fn from_spec(spec: &BaseSpec) -> Result<Self> {
        match spec {
            BaseSpec::Rotation { alpha } => match alpha {
                None => Ok(Self::golden_rotation()),
                Some(a) => Self::rotation(a.clone()),
            },
            BaseSpec::Bernoulli { weights, window } => {
                Ok(Self::bernoulli(weights.clone())?.with_window(window.unwrap_or(DEFAULT_WINDOW)))
            }
            BaseSpec::Markov { transition, window } => {
                Ok(Self::markov(transition.clone())?.with_window(window.unwrap_or(DEFAULT_WINDOW)))
            }
        }
    }

    pub fn golden_rotation() -> Self {
        Self {
            kind: Kind::Rotation { alpha_hi: vec![GOLDEN_HI], alpha_lo: vec![GOLDEN_LO] },
            window: usize::MAX,
        }
    }

    /// Rotation of `T^d` by `alpha`. Entries are reduced mod 1 and must not
    /// be rational with small denominator; that is the caller's business.
    pub fn rotation(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidBase("rotation: alpha must be a nonempty finite vector".into()));
        }
        let lo = alpha.iter().map(|&a| if a == GOLDEN_HI { GOLDEN_LO } else { 0.0 }).collect();
        let hi = alpha.iter().map(|a| a.rem_euclid(1.0)).collect();
        Ok(Self { kind: Kind::Rotation { alpha_hi: hi, alpha_lo: lo }, window: usize::MAX })
    }

    pub fn bernoulli(weights: Vec<f64>) -> Result<Self> {
        check_distribution("bernoulli weights", &weights)?;
        let cumulative = cumulative(&weights);
        Ok(Self { kind: Kind::Bernoulli { weights, cumulative }, window: DEFAULT_WINDOW })
    }

    pub fn markov(transition: Vec<Vec<f64>>) -> Result<Self> {
        let k = transition.len();
        if k == 0 || transition.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidBase("markov: transition matrix must be square".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            check_distribution(&format!("markov row {i}"), row)?;
        }
        let pi = stationary(&transition)?;
        if pi.iter().any(|&p| !(p > 1e-12)) {
            return Err(Error::InvalidBase(format!("markov: stationary vector {pi:?} is not strictly positive")));
        }
        // time reversal P̃(j → i) = π_i P_ij / π_j
        let reversed: Vec<Vec<f64>> =
            (0..k).map(|j| (0..k).map(|i| pi[i] * transition[i][j] / pi[j]).collect()).collect();
        let cum = transition.iter().map(|r| cumulative(r)).collect();
        let rev_cum = reversed.iter().map(|r| cumulative(r)).collect();
        Ok(Self {
            kind: Kind::Markov { transition, cumulative: cum, reversed: rev_cum, stationary: pi },
            window: DEFAULT_WINDOW,
        })
    }

    pub fn with_window(mut self, window: usize) -> Self {
        if !matches!(self.kind, Kind::Rotation { .. }) {
            self.window = window.max(2);
        }
        self
    }

    /// Longest orbit window a symbolic phase is expected to cache.
    pub fn window_capacity(&self) -> usize {
        self.window
    }

    /// Largest scale `n` whose two-sided orbits fit the window.
    pub fn max_scale(&self) -> usize {
        self.window / 2
    }

    pub fn is_symbolic(&self) -> bool {
        !matches!(self.kind, Kind::Rotation { .. })
    }

    pub fn torus_dim(&self) -> usize {
        match &self.kind {
            Kind::Rotation { alpha_hi, .. } => alpha_hi.len(),
            _ => 0,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match &self.kind {
            Kind::Rotation { .. } => 0,
            Kind::Bernoulli { weights, .. } => weights.len(),
            Kind::Markov { stationary, .. } => stationary.len(),
        }
    }

    /// Symbol marginal of the invariant measure (empty for rotations).
    pub fn symbol_law(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Rotation { .. } => Vec::new(),
            Kind::Bernoulli { weights, .. } => weights.clone(),
            Kind::Markov { stationary, .. } => stationary.clone(),
        }
    }

    pub fn transition(&self) -> Option<&[Vec<f64>]> {
        match &self.kind {
            Kind::Markov { transition, .. } => Some(transition),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            Kind::Rotation { alpha_hi, .. } => format!("rotation(alpha={alpha_hi:?})"),
            Kind::Bernoulli { weights, .. } => format!("bernoulli(weights={weights:?})"),
            Kind::Markov { transition, .. } => format!("markov(transition={transition:?})"),
        }
    }

    fn check_phase(&self, x: &Phase) -> Result<()> {
        let ok = match (&self.kind, x) {
            (Kind::Rotation { alpha_hi, .. }, Phase::Torus { origin, .. }) => origin.len() == alpha_hi.len(),
            (Kind::Bernoulli { .. }, Phase::Shift { .. }) => true,
            (Kind::Markov { .. }, Phase::Chain { .. }) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::PhaseMismatch)
        }
    }

    /// `T^n x` for any integer `n`.
    pub fn step(&self, x: &Phase, n: i64) -> Result<Phase> {
        self.check_phase(x)?;
        Ok(match x {
            Phase::Torus { origin, steps } => Phase::Torus { origin: origin.clone(), steps: steps + n },
            Phase::Shift { seed, offset } => Phase::Shift { seed: *seed, offset: offset + n },
            Phase::Chain { seed, offset } => Phase::Chain { seed: *seed, offset: offset + n },
        })
    }

    /// Torus coordinates of a phase, each in `[0, 1)`.
    pub fn coordinates(&self, x: &Phase) -> Result<Vec<f64>> {
        self.check_phase(x)?;
        match (&self.kind, x) {
            (Kind::Rotation { alpha_hi, alpha_lo }, Phase::Torus { origin, steps }) => {
                Ok((0..origin.len()).map(|i| rotate(origin[i], alpha_hi[i], alpha_lo[i], *steps)).collect())
            }
            _ => Err(Error::PhaseMismatch),
        }
    }

    /// The site at a single phase.
    pub fn site_orbit(&self, x: &Phase) -> Result<OrbitSegment> {
        self.orbit(x, 0, 1)
    }

    /// Sites `T^{start} x, ..., T^{start + len - 1} x`.
    pub fn orbit(&self, x: &Phase, start: i64, len: usize) -> Result<OrbitSegment> {
        self.check_phase(x)?;
        match (&self.kind, x) {
            (Kind::Rotation { alpha_hi, alpha_lo }, Phase::Torus { origin, steps }) => {
                let d = origin.len();
                let mut coords = Vec::with_capacity(len * d);
                for j in 0..len as i64 {
                    for i in 0..d {
                        coords.push(rotate(origin[i], alpha_hi[i], alpha_lo[i], steps + start + j));
                    }
                }
                Ok(OrbitSegment { dim: d, coords, symbols: Vec::new(), len })
            }
            (Kind::Bernoulli { cumulative, .. }, Phase::Shift { seed, offset }) => {
                let mut rng = stream(*seed, 0, offset + start);
                let symbols = (0..len).map(|_| draw(cumulative, unit(rng.next_u64()))).collect();
                Ok(OrbitSegment { dim: 0, coords: Vec::new(), symbols, len })
            }
            (Kind::Markov { .. }, Phase::Chain { seed, offset }) => {
                let lo = offset + start;
                let symbols = self.chain_window(*seed, lo, lo + len as i64);
                Ok(OrbitSegment { dim: 0, coords: Vec::new(), symbols, len })
            }
            _ => Err(Error::PhaseMismatch),
        }
    }

    /// Markov path on `[lo, hi)`.
    fn chain_window(&self, seed: u64, lo: i64, hi: i64) -> Vec<usize> {
        let Kind::Markov { cumulative, reversed, stationary, .. } = &self.kind else {
            unreachable!("chain_window on a non-Markov system")
        };
        let start_cum = cumulative_of(stationary);
        let mut fwd = stream(seed, 0, 0);
        let x0 = draw(&start_cum, unit(fwd.next_u64()));
        let mut out = Vec::with_capacity((hi - lo).max(0) as usize);
        if lo < 0 {
            let mut back = stream(seed, 1, 0);
            // path at indices -1, -2, ..., lo
            let mut path = Vec::with_capacity((-lo) as usize);
            let mut cur = x0;
            for _ in 0..(-lo) {
                cur = draw(&reversed[cur], unit(back.next_u64()));
                path.push(cur);
            }
            for idx in lo..hi.min(0) {
                out.push(path[(-idx - 1) as usize]);
            }
        }
        if hi > 0 {
            let mut cur = x0;
            if lo <= 0 {
                out.push(x0);
            }
            for idx in 1..hi {
                cur = draw(&cumulative[cur], unit(fwd.next_u64()));
                if idx >= lo {
                    out.push(cur);
                }
            }
        }
        out
    }

    /// Draws `count` phases from the invariant measure.
    pub fn sample_phases(&self, count: usize, seed: u64) -> Vec<Phase> {
        self.sample_phases_with(count, seed, Sampling::Iid)
    }

    pub fn sample_phases_with(&self, count: usize, seed: u64, scheme: Sampling) -> Vec<Phase> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.kind {
            Kind::Rotation { alpha_hi, .. } => {
                let d = alpha_hi.len();
                match scheme {
                    Sampling::Iid => (0..count)
                        .map(|_| Phase::Torus { origin: (0..d).map(|_| rng.random::<f64>()).collect(), steps: 0 })
                        .collect(),
                    Sampling::Lattice => {
                        let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                        // Kronecker sequence with a distinct irrational per axis
                        let gens: Vec<f64> = (0..d).map(|i| (((i + 2) as f64).sqrt()).fract()).collect();
                        (0..count)
                            .map(|j| Phase::Torus {
                                origin: (0..d)
                                    .map(|i| {
                                        let g = if i == 0 { GOLDEN_HI } else { gens[i] };
                                        (shift[i] + j as f64 * g).rem_euclid(1.0)
                                    })
                                    .collect(),
                                steps: 0,
                            })
                            .collect()
                    }
                }
            }
            Kind::Bernoulli { .. } => (0..count).map(|_| Phase::Shift { seed: rng.next_u64(), offset: 0 }).collect(),
            Kind::Markov { .. } => (0..count).map(|_| Phase::Chain { seed: rng.next_u64(), offset: 0 }).collect(),
        }
    }

    /// `(1/n) Σ_{j<n} ξ(T^j x)`.
    pub fn birkhoff_average<F>(&self, xi: F, x: &Phase, n: usize) -> Result<f64>
    where
        F: Fn(Site<'_>) -> f64,
    {
        if n == 0 {
            return Err(Error::InvalidParameter { name: "n".into(), reason: "must be at least 1".into() });
        }
        let orbit = self.orbit(x, 0, n)?;
        let values: Vec<f64> = orbit.sites().map(&xi).collect();
        Ok(pairwise_sum(&values) / n as f64)
    }
}

fn cumulative_of(w: &[f64]) -> Vec<f64> {
    cumulative(w)
}

/// `frac(origin + steps * (hi + lo))` with the product split exactly.
fn rotate(origin: f64, hi: f64, lo: f64, steps: i64) -> f64 {
    let s = steps as f64;
    let p = s * hi;
    let err = s.mul_add(hi, -p);
    let p_frac = p - p.floor();
    let total = origin + p_frac + (err + s * lo);
    let r = total - total.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// ChaCha stream positioned so that the next `u64` belongs to `index`.
fn stream(seed: u64, id: u64, index: i64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    let pos = 2 * (index as i128 + INDEX_ORIGIN);
    rng.set_word_pos(pos as u128);
    rng
}

/// Observables available from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Constant { value: f64 },
    /// Torus coordinate `x_i`.
    Coordinate { index: usize },
    /// `cos(2π x_i)`.
    Cos2pi { index: usize },
    /// Indicator of symbol `s` at index 0.
    Indicator { symbol: usize },
    /// The symbol value itself.
    Symbol,
}

impl Observable {
    pub fn eval(&self, site: Site<'_>) -> f64 {
        match (self, site) {
            (Observable::Constant { value }, _) => *value,
            (Observable::Coordinate { index }, Site::Torus(x)) => x[*index],
            (Observable::Cos2pi { index }, Site::Torus(x)) => (std::f64::consts::TAU * x[*index]).cos(),
            (Observable::Indicator { symbol }, Site::Symbol(s)) => (s == *symbol) as u8 as f64,
            (Observable::Symbol, Site::Symbol(s)) => s as f64,
            _ => f64::NAN,
        }
    }

    /// Space average with respect to the invariant measure, when known in
    /// closed form.
    pub fn space_average(&self, base: &BaseSystem) -> Option<f64> {
        match self {
            Observable::Constant { value } => Some(*value),
            Observable::Coordinate { .. } if !base.is_symbolic() => Some(0.5),
            Observable::Cos2pi { .. } if !base.is_symbolic() => Some(0.0),
            Observable::Indicator { symbol } if base.is_symbolic() => base.symbol_law().get(*symbol).copied(),
            Observable::Symbol if base.is_symbolic() => {
                Some(base.symbol_law().iter().enumerate().map(|(s, w)| s as f64 * w).sum())
            }
            _ => None,
        }
    }

    pub fn check(&self, base: &BaseSystem) -> Result<()> {
        let ok = match self {
            Observable::Constant { .. } => true,
            Observable::Coordinate { index } | Observable::Cos2pi { index } => *index < base.torus_dim(),
            Observable::Indicator { .. } | Observable::Symbol => base.is_symbolic(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "observable".into(),
                reason: format!("{self:?} is not defined on {}", base.label()),
            })
        }
    }
}
