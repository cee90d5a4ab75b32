//! Linear cocycles over a base system.
//!
//! A cocycle maps each site of the base to an `m x m` matrix. Iterates are
//! accumulated in a [`ScaledMatrix`], renormalizing after every factor, so
//! `log ‖A^(n)(x)‖` is available for any `n` without overflow.
//!
//! Custom-table matrices are read from a CSV block: one matrix per line, the
//! `m²` entries in row-major order, lines indexed by symbol or torus cell.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{BaseSystem, OrbitSegment, Phase, Site};
use crate::error::{Error, Result};
use crate::grassmann::Subspace;
use crate::linalg::{
    binomial, decomposable_span, exterior_power_unchecked, operator_norm, pseudo_inverse_with_cutoff, svd_unchecked,
    Matrix, ScaledMatrix, PINV_CUTOFF,
};

type SiteFn = dyn Fn(Site<'_>) -> Matrix + Send + Sync;

#[derive(Clone)]
enum Generator {
    Constant(Matrix),
    SymbolTable(Vec<Matrix>),
    /// Cells `[cuts[i], cuts[i+1])` of the first torus coordinate.
    TorusTable { cuts: Vec<f64>, matrices: Vec<Matrix> },
    Schrodinger { energy: f64, coupling: f64 },
    Exterior { inner: Box<Cocycle>, k: usize },
    Perturbed { inner: Box<Cocycle>, delta: Matrix, h: f64 },
    Function(Arc<SiteFn>),
}

/// A measurable family of matrices `x ↦ A(x)` with an `L∞` bound.
#[derive(Clone)]
pub struct Cocycle {
    dim: usize,
    label: String,
    sup_norm_bound: f64,
    generator: Generator,
}

impl fmt::Debug for Cocycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cocycle").field("dim", &self.dim).field("label", &self.label).finish()
    }
}

/// Catalog descriptor, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum CocycleSpec {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    /// One diagonal per symbol of a Bernoulli or Markov base.
    DiagonalRandom {
        diagonals: Vec<Vec<f64>>,
    },
    /// `x ↦ [[E - 2λ cos 2πx, -1], [1, 0]]` over a rotation.
    Schrodinger {
        energy: f64,
        coupling: f64,
    },
    /// Independent Gaussian matrices, one per symbol.
    RandomGlm {
        dim: usize,
        symbols: usize,
        seed: u64,
        #[serde(default = "one")]
        scale: f64,
    },
    CustomTable {
        dim: usize,
        partition: TablePartition,
        /// Torus cell boundaries `0 = c_0 < c_1 < ... < c_K = 1`.
        #[serde(default)]
        cuts: Option<Vec<f64>>,
        csv: String,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TablePartition {
    Symbol,
    Torus,
}

/// Names accepted by [`catalog`].
pub const CATALOG: &[&str] = &["constant", "diagonal_random", "schrodinger", "random_glm", "custom_table"];

/// `A^(n)(x)` together with the data it was computed from.
#[derive(Debug, Clone)]
pub struct IterateResult {
    pub value: ScaledMatrix,
    pub n: usize,
    pub start: Phase,
}

impl IterateResult {
    pub fn log_norm(&self) -> f64 {
        self.value.log_norm()
    }
}

/// Backward iterate `A^(-n)(x)` and the numerical rank of the inverted product.
#[derive(Debug, Clone)]
pub struct BackwardIterate {
    pub iterate: IterateResult,
    pub rank: usize,
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter { name: "matrix".into(), reason: "must be a nonempty square array".into() });
    }
    let g = Matrix::from_fn(m, m, |i, j| rows[i][j]);
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(g)
}

/// Parses the custom-table CSV block.
pub fn parse_matrix_table(csv: &str, dim: usize) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    for (lineno, line) in csv.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::InvalidParameter {
            name: format!("csv line {}", lineno + 1),
            reason: e.to_string(),
        })?;
        if vals.len() != dim * dim {
            return Err(Error::InvalidParameter {
                name: format!("csv line {}", lineno + 1),
                reason: format!("expected {} entries, found {}", dim * dim, vals.len()),
            });
        }
        out.push(Matrix::from_row_slice(dim, dim, &vals));
    }
    if out.is_empty() {
        return Err(Error::InvalidParameter { name: "csv".into(), reason: "no matrices".into() });
    }
    Ok(out)
}

/// Builds a catalog cocycle by name from a JSON parameter object.
pub fn catalog(name: &str, params: serde_json::Value) -> Result<Cocycle> {
    if !CATALOG.contains(&name) {
        return Err(Error::UnknownName(name.to_string()));
    }
    let mut obj = match params {
        serde_json::Value::Object(o) => o,
        serde_json::Value::Null => serde_json::Map::new(),
        _ => return Err(Error::InvalidParameter { name: "params".into(), reason: "must be an object".into() }),
    };
    obj.insert("name".into(), serde_json::Value::String(name.into()));
    let spec: CocycleSpec = serde_json::from_value(serde_json::Value::Object(obj))
        .map_err(|e| Error::InvalidParameter { name: name.into(), reason: e.to_string() })?;
    Cocycle::from_spec(&spec)
}

impl Cocycle {
    pub fn from_spec(spec: &CocycleSpec) -> Result<Self> {
        match spec {
            CocycleSpec::Constant { matrix } => Ok(Self::constant(rows_to_matrix(matrix)?)),
            CocycleSpec::DiagonalRandom { diagonals } => Self::diagonal_random(diagonals.clone()),
            CocycleSpec::Schrodinger { energy, coupling } => Self::schrodinger(*energy, *coupling),
            CocycleSpec::RandomGlm { dim, symbols, seed, scale } => Self::random_glm(*dim, *symbols, *seed, *scale),
            CocycleSpec::CustomTable { dim, partition, cuts, csv } => {
                let matrices = parse_matrix_table(csv, *dim)?;
                match partition {
                    TablePartition::Symbol => Self::symbol_table("custom_table", matrices),
                    TablePartition::Torus => {
                        let cuts = match cuts {
                            Some(c) => c.clone(),
                            None => {
                                let k = matrices.len();
                                (0..=k).map(|i| i as f64 / k as f64).collect()
                            }
                        };
                        Self::torus_table(cuts, matrices)
                    }
                }
            }
        }
    }

    pub fn constant(g: Matrix) -> Self {
        let bound = operator_norm(&g);
        Self { dim: g.nrows(), label: "constant".into(), sup_norm_bound: bound, generator: Generator::Constant(g) }
    }

    pub fn identity(m: usize) -> Self {
        let mut c = Self::constant(Matrix::identity(m, m));
        c.label = "identity".into();
        c
    }

    /// Symbol `s` maps to `diag(diagonals[s])`.
    pub fn diagonal_random(diagonals: Vec<Vec<f64>>) -> Result<Self> {
        if diagonals.is_empty() {
            return Err(Error::InvalidParameter { name: "diagonals".into(), reason: "empty".into() });
        }
        let m = diagonals[0].len();
        if m == 0 || diagonals.iter().any(|d| d.len() != m) {
            return Err(Error::InvalidParameter {
                name: "diagonals".into(),
                reason: "all diagonals must have the same positive length".into(),
            });
        }
        let mats =
            diagonals.iter().map(|d| Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))).collect();
        Self::symbol_table("diagonal_random", mats)
    }

    pub fn schrodinger(energy: f64, coupling: f64) -> Result<Self> {
        if !energy.is_finite() || !coupling.is_finite() {
            return Err(Error::InvalidParameter { name: "schrodinger".into(), reason: "E and λ must be finite".into() });
        }
        let top = energy.abs() + 2.0 * coupling.abs();
        Ok(Self {
            dim: 2,
            label: format!("schrodinger(E={energy}, lambda={coupling})"),
            sup_norm_bound: (top * top + 2.0).sqrt(),
            generator: Generator::Schrodinger { energy, coupling },
        })
    }

    pub fn random_glm(dim: usize, symbols: usize, seed: u64, scale: f64) -> Result<Self> {
        if dim == 0 || symbols == 0 || !(scale > 0.0) {
            return Err(Error::InvalidParameter {
                name: "random_glm".into(),
                reason: "dim, symbols and scale must be positive".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = (0..symbols)
            .map(|_| {
                Matrix::from_fn(dim, dim, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
            })
            .collect();
        let mut c = Self::symbol_table("random_glm", mats)?;
        c.label = format!("random_glm(dim={dim}, symbols={symbols}, seed={seed})");
        Ok(c)
    }

    pub fn symbol_table(label: &str, matrices: Vec<Matrix>) -> Result<Self> {
        let m = matrices.first().map(|g| g.nrows()).unwrap_or(0);
        if m == 0 || matrices.iter().any(|g| g.shape() != (m, m)) {
            return Err(Error::InvalidParameter { name: label.into(), reason: "matrices must share a square shape".into() });
        }
        if matrices.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite);
        }
        let bound = matrices.iter().map(operator_norm).fold(0.0, f64::max);
        Ok(Self { dim: m, label: label.into(), sup_norm_bound: bound, generator: Generator::SymbolTable(matrices) })
    }

    pub fn torus_table(cuts: Vec<f64>, matrices: Vec<Matrix>) -> Result<Self> {
        if cuts.len() != matrices.len() + 1
            || cuts.first() != Some(&0.0)
            || cuts.last() != Some(&1.0)
            || cuts.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::InvalidParameter {
                name: "cuts".into(),
                reason: "need 0 = c_0 < ... < c_K = 1 with one matrix per cell".into(),
            });
        }
        let mut c = Self::symbol_table("custom_table", matrices)?;
        let Generator::SymbolTable(matrices) = c.generator else { unreachable!() };
        c.generator = Generator::TorusTable { cuts, matrices };
        Ok(c)
    }

    /// Arbitrary generator; `sup_norm_bound` is the caller's claim.
    pub fn from_fn<F>(dim: usize, label: &str, sup_norm_bound: f64, f: F) -> Self
    where
        F: Fn(Site<'_>) -> Matrix + Send + Sync + 'static,
    {
        Self { dim, label: label.into(), sup_norm_bound, generator: Generator::Function(Arc::new(f)) }
    }

    /// `x ↦ A(x) + h Δ`.
    pub fn perturbed(&self, delta: Matrix, h: f64) -> Result<Self> {
        if delta.shape() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch("perturbation has the wrong shape".into()));
        }
        let bound = self.sup_norm_bound + h.abs() * operator_norm(&delta);
        Ok(Self {
            dim: self.dim,
            label: format!("{} + {h}·Δ", self.label),
            sup_norm_bound: bound,
            generator: Generator::Perturbed { inner: Box::new(self.clone()), delta, h },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sup_norm_bound(&self) -> f64 {
        self.sup_norm_bound
    }

    /// Whether the generator ignores the phase.
    pub fn is_constant(&self) -> bool {
        matches!(self.generator, Generator::Constant(_))
    }

    pub fn constant_matrix(&self) -> Option<&Matrix> {
        match &self.generator {
            Generator::Constant(g) => Some(g),
            _ => None,
        }
    }

    /// Checks that the generator can be evaluated on `base`.
    pub fn check_base(&self, base: &BaseSystem) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidParameter { name: self.label.clone(), reason });
        match &self.generator {
            Generator::SymbolTable(t) => {
                if !base.is_symbolic() {
                    return fail("symbol-indexed cocycle needs a Bernoulli or Markov base".into());
                }
                if t.len() != base.alphabet_size() {
                    return fail(format!("{} matrices for an alphabet of {}", t.len(), base.alphabet_size()));
                }
                Ok(())
            }
            Generator::TorusTable { .. } | Generator::Schrodinger { .. } => {
                if base.is_symbolic() {
                    return fail("torus cocycle needs a rotation base".into());
                }
                Ok(())
            }
            Generator::Exterior { inner, .. } | Generator::Perturbed { inner, .. } => inner.check_base(base),
            Generator::Constant(_) | Generator::Function(_) => Ok(()),
        }
    }

    /// `A` at a single site.
    pub fn matrix_at(&self, site: Site<'_>) -> Matrix {
        match &self.generator {
            Generator::Constant(g) => g.clone(),
            Generator::SymbolTable(t) => match site {
                Site::Symbol(s) => t[s].clone(),
                Site::Torus(_) => panic!("symbol table evaluated on a torus site"),
            },
            Generator::TorusTable { cuts, matrices } => {
                let x = match site {
                    Site::Torus(x) => x[0],
                    Site::Symbol(_) => panic!("torus table evaluated on a symbol site"),
                };
                let cell = cuts[1..].iter().position(|&c| x < c).unwrap_or(matrices.len() - 1);
                matrices[cell].clone()
            }
            Generator::Schrodinger { energy, coupling } => {
                let x = match site {
                    Site::Torus(x) => x[0],
                    Site::Symbol(_) => panic!("schrodinger cocycle evaluated on a symbol site"),
                };
                let v = energy - 2.0 * coupling * (std::f64::consts::TAU * x).cos();
                Matrix::from_row_slice(2, 2, &[v, -1.0, 1.0, 0.0])
            }
            Generator::Exterior { inner, k } => exterior_power_unchecked(&inner.matrix_at(site), *k),
            Generator::Perturbed { inner, delta, h } => inner.matrix_at(site) + delta * *h,
            Generator::Function(f) => f(site),
        }
    }

    /// `A(x)`.
    pub fn eval(&self, base: &BaseSystem, x: &Phase) -> Result<Matrix> {
        let orbit = base.site_orbit(x)?;
        Ok(self.matrix_at(orbit.site(0)))
    }

    /// `A(T^{start} x), ..., A(T^{start+len-1} x)`.
    pub fn matrices_along(&self, base: &BaseSystem, x: &Phase, start: i64, len: usize) -> Result<Vec<Matrix>> {
        let orbit = base.orbit(x, start, len)?;
        Ok(self.matrices_on(&orbit))
    }

    pub(crate) fn matrices_on(&self, orbit: &OrbitSegment) -> Vec<Matrix> {
        orbit.sites().map(|s| self.matrix_at(s)).collect()
    }

    /// Closed-form Lyapunov spectrum of a diagonal symbol table over an
    /// i.i.d. or stationary Markov base: the sorted coordinatewise
    /// expectations `E log |d_i|`.
    pub fn diagonal_spectrum(&self, base: &BaseSystem) -> Option<Vec<f64>> {
        let Generator::SymbolTable(t) = &self.generator else { return None };
        let law = base.symbol_law();
        if law.len() != t.len() {
            return None;
        }
        let diagonal = t.iter().all(|g| {
            (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || g[(i, j)] == 0.0))
        });
        if !diagonal {
            return None;
        }
        let mut out: Vec<f64> = (0..self.dim)
            .map(|i| t.iter().zip(&law).map(|(g, w)| if *w > 0.0 { w * g[(i, i)].abs().ln() } else { 0.0 }).sum())
            .collect();
        out.sort_by(|a, b| b.total_cmp(a));
        Some(out)
    }
}

/// `∧_k A` as a cocycle of dimension `C(m, k)`.
pub fn exterior_cocycle(a: &Cocycle, k: usize) -> Result<Cocycle> {
    if k == 0 || k > a.dim {
        return Err(Error::IndexOutOfRange { index: k, lo: 1, hi: a.dim });
    }
    if k == 1 {
        return Ok(a.clone());
    }
    Ok(Cocycle {
        dim: binomial(a.dim, k),
        label: format!("wedge{k}({})", a.label),
        sup_norm_bound: a.sup_norm_bound.powi(k as i32),
        generator: Generator::Exterior { inner: Box::new(a.clone()), k },
    })
}

fn product(mats: &[Matrix], m: usize) -> ScaledMatrix {
    let mut p = ScaledMatrix::identity(m);
    for g in mats {
        p.left_mul(g);
    }
    p
}

/// `A^(n)(x) = A(T^{n-1} x) ... A(x)`.
pub fn iterate(a: &Cocycle, base: &BaseSystem, x: &Phase, n: usize) -> Result<IterateResult> {
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n".into(), reason: "must be at least 1".into() });
    }
    let mats = a.matrices_along(base, x, 0, n)?;
    Ok(IterateResult { value: product(&mats, a.dim), n, start: x.clone() })
}

/// `(A*)^(n)(x) = A^(n)(T^{-n} x)ᵀ`.
pub fn adjoint_iterate(a: &Cocycle, base: &BaseSystem, x: &Phase, n: usize) -> Result<IterateResult> {
    let back = base.step(x, -(n as i64))?;
    let it = iterate(a, base, &back, n)?;
    Ok(IterateResult { value: it.value.transpose(), n, start: x.clone() })
}

/// `A^(-n)(x) = A^(n)(T^{-n} x)⁺`, cutoff `1e-13 s_1`.
pub fn backward_iterate(a: &Cocycle, base: &BaseSystem, x: &Phase, n: usize) -> Result<BackwardIterate> {
    let back = base.step(x, -(n as i64))?;
    let it = iterate(a, base, &back, n)?;
    let m = a.dim;
    if it.value.is_zero() {
        return Ok(BackwardIterate {
            iterate: IterateResult { value: ScaledMatrix::from_matrix(Matrix::zeros(m, m)), n, start: x.clone() },
            rank: 0,
        });
    }
    let f = it.value.factor();
    let sd = svd_unchecked(f);
    let s1 = sd.values[0];
    let rank = sd.values.iter().filter(|&&s| s > PINV_CUTOFF * s1).count();
    let pinv = pseudo_inverse_with_cutoff(f, PINV_CUTOFF)?;
    // (2^e F)⁺ = 2^{-e} F⁺
    let value = ScaledMatrix::from_matrix(pinv).times_pow2(-it.value.exponent());
    Ok(BackwardIterate { iterate: IterateResult { value, n, start: x.clone() }, rank })
}

/// Products of all exterior powers `∧_k A^(n)(x)`, `k = 0..=m`.
#[derive(Debug, Clone)]
pub struct ExteriorIterates {
    pub n: usize,
    pub dim: usize,
    levels: Vec<ScaledMatrix>,
}

impl ExteriorIterates {
    /// Computes every level from the same orbit segment.
    pub fn compute(a: &Cocycle, base: &BaseSystem, x: &Phase, n: usize) -> Result<Self> {
        let mats = a.matrices_along(base, x, 0, n)?;
        Ok(Self::from_matrices(&mats, a.dim))
    }

    pub fn from_matrices(mats: &[Matrix], m: usize) -> Self {
        let mut levels: Vec<ScaledMatrix> = (0..=m).map(|k| ScaledMatrix::identity(binomial(m, k))).collect();
        for g in mats {
            for (k, level) in levels.iter_mut().enumerate().skip(1) {
                if k == 1 {
                    level.left_mul(g);
                } else {
                    level.left_mul(&exterior_power_unchecked(g, k));
                }
            }
        }
        Self { n: mats.len(), dim: m, levels }
    }

    pub fn level(&self, k: usize) -> &ScaledMatrix {
        &self.levels[k]
    }

    /// `log ‖∧_k A^(n)‖` (0 for `k = 0`).
    pub fn log_norm(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.levels[k].log_norm()
    }

    /// `log s_k(A^(n))`, using `s_k = ‖∧_k‖ / ‖∧_{k-1}‖`.
    pub fn log_singular_value(&self, k: usize) -> f64 {
        let prev = self.log_norm(k - 1);
        if prev == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.log_norm(k) - prev
    }

    /// `log gr_k(A^(n)) = 2 ℓ_k - ℓ_{k-1} - ℓ_{k+1}`, `+inf` when only
    /// `s_{k+1}` vanishes.
    pub fn log_gap_ratio(&self, k: usize) -> f64 {
        let sk = self.log_singular_value(k);
        let sk1 = self.log_singular_value(k + 1);
        match (sk == f64::NEG_INFINITY, sk1 == f64::NEG_INFINITY) {
            (true, _) => 0.0,
            (false, true) => f64::INFINITY,
            _ => sk - sk1,
        }
    }

    /// Most expanding `k`-plane of `A^(n)`, read from the top right singular
    /// vector of `∧_k A^(n)`.
    pub fn top_plane(&self, k: usize) -> Result<Subspace> {
        if k == self.dim {
            return Ok(Subspace::full(self.dim));
        }
        let level = &self.levels[k];
        if level.is_zero() {
            return Err(Error::Undefined(format!("∧_{k} of the product vanishes")));
        }
        let sd = svd_unchecked(level.factor());
        let top = sd.right.column(0).into_owned();
        decomposable_span(&top, self.dim, k)
    }

    /// Exterior iterates of the transposed product.
    pub fn transpose(&self) -> Self {
        Self { n: self.n, dim: self.dim, levels: self.levels.iter().map(ScaledMatrix::transpose).collect() }
    }
}

/// Exterior iterates of the adjoint cocycle at `x`.
pub fn adjoint_exterior_iterates(a: &Cocycle, base: &BaseSystem, x: &Phase, n: usize) -> Result<ExteriorIterates> {
    let back = base.step(x, -(n as i64))?;
    Ok(ExteriorIterates::compute(a, base, &back, n)?.transpose())
}

/// `log ‖A^(j)(x)‖` for `j = 1..=n`.
pub fn log_norm_profile(a: &Cocycle, base: &BaseSystem, x: &Phase, n: usize) -> Result<Vec<f64>> {
    let mats = a.matrices_along(base, x, 0, n)?;
    let mut p = ScaledMatrix::identity(a.dim);
    let mut out = Vec::with_capacity(n);
    for g in &mats {
        p.left_mul(g);
        out.push(p.log_norm());
    }
    Ok(out)
}

/// `max_x ‖A(x) - B(x)‖` over the given phases.
pub fn sup_distance(a: &Cocycle, b: &Cocycle, base: &BaseSystem, phases: &[Phase]) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch("cocycles of different dimension".into()));
    }
    let mut d: f64 = 0.0;
    for x in phases {
        let site = base.site_orbit(x)?;
        d = d.max(operator_norm(&(a.matrix_at(site.site(0)) - b.matrix_at(site.site(0)))));
    }
    Ok(d)
}
