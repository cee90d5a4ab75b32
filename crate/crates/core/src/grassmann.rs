//! Grassmannian, flag and decomposition geometry.
//!
//! A [`Subspace`] is stored as an `m x k` frame with orthonormal columns. The
//! distance on `Gr_k(R^m)` is the operator norm of the difference of the
//! orthogonal projectors, which equals the sine of the largest principal
//! angle. Flags store cumulative subspaces `F_1 ⊂ F_2 ⊂ ...`; decompositions
//! store the `k + 1` summands.

use std::fmt;

use crate::linalg::{full_svd, singular_values, thin_svd};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Nesting residual allowed between consecutive flag components.
pub const NESTING_TOLERANCE: f64 = 1e-9;

/// Below this `θ_⊓` the intersection of two flags is not computed.
pub const THETA_MIN: f64 = 1e-8;

/// Smallest singular value of the stacked summand bases for a direct sum.
pub const DIRECT_SUM_FLOOR: f64 = 1e-13;

/// A point of `Gr_k(R^m)` given by an orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    /// Orthonormalizes the columns of `basis`; they must be independent.
    pub fn from_basis(basis: Matrix) -> Result<Self> {
        let (m, k) = basis.shape();
        if k == 0 {
            return Ok(Self { basis });
        }
        if k > m {
            return Err(Error::DimensionMismatch(format!("{k} vectors in R^{m}")));
        }
        if basis.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let (s, u, _) = thin_svd(&basis);
        let smax = s[0];
        if !(smax > 0.0) || s[k - 1] <= 1e-12 * smax {
            return Err(Error::DimensionMismatch("basis vectors are linearly dependent".into()));
        }
        Ok(Self { basis: u.columns(0, k).into_owned() })
    }

    /// Wraps a frame that is already orthonormal.
    pub fn from_orthonormal(basis: Matrix) -> Self {
        debug_assert!(
            basis.ncols() == 0
                || (basis.transpose() * &basis - Matrix::identity(basis.ncols(), basis.ncols())).abs().max() < 1e-8
        );
        Self { basis }
    }

    /// Span of the listed coordinate axes (0-based).
    pub fn coordinate(m: usize, axes: &[usize]) -> Self {
        let mut b = Matrix::zeros(m, axes.len());
        for (j, &i) in axes.iter().enumerate() {
            b[(i, j)] = 1.0;
        }
        Self { basis: b }
    }

    pub fn full(m: usize) -> Self {
        Self { basis: Matrix::identity(m, m) }
    }

    pub fn zero(m: usize) -> Self {
        Self { basis: Matrix::zeros(m, 0) }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// Residual of projecting `v` onto the orthogonal complement.
    pub fn residual(&self, v: &Matrix) -> Matrix {
        v - &self.basis * (self.basis.transpose() * v)
    }

    pub fn complement(&self) -> Subspace {
        let m = self.ambient_dim();
        let k = self.dim();
        if k == 0 {
            return Subspace::full(m);
        }
        if k == m {
            return Subspace::zero(m);
        }
        let (_, u, _) = thin_svd(&self.projector());
        Subspace { basis: u.columns(k, m - k).into_owned() }
    }

    /// `‖(I - P_self) B_other‖`: zero iff `other ⊆ self`.
    pub fn containment_residual(&self, other: &Subspace) -> f64 {
        op_norm_rect(&self.residual(&other.basis))
    }

    /// Orthonormal frame of `self ⊕ other` (the sum need not be direct).
    pub fn sum(&self, other: &Subspace) -> Result<Subspace> {
        let mut stacked = Matrix::zeros(self.ambient_dim(), self.dim() + other.dim());
        stacked.columns_mut(0, self.dim()).copy_from(&self.basis);
        stacked.columns_mut(self.dim(), other.dim()).copy_from(&other.basis);
        Subspace::from_basis(stacked)
    }
}

pub(crate) fn op_norm_rect(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a)[0]
}

pub(crate) fn min_singular_rect(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    if a.nrows() < a.ncols() {
        // wide matrices always have a nontrivial kernel
        return 0.0;
    }
    singular_values(a)[a.ncols() - 1]
}

/// `‖P_E - P_F‖`, the sine of the largest principal angle.
pub fn subspace_distance(e: &Subspace, f: &Subspace) -> Result<f64> {
    if e.ambient_dim() != f.ambient_dim() || e.dim() != f.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Gr_{}(R^{}) vs Gr_{}(R^{})",
            e.dim(),
            e.ambient_dim(),
            f.dim(),
            f.ambient_dim()
        )));
    }
    Ok(e.containment_residual(f).min(1.0))
}

/// `|det(B_Eᵀ B_F)|`, the product of the cosines of the principal angles.
pub fn alignment(e: &Subspace, f: &Subspace) -> Result<f64> {
    if e.ambient_dim() != f.ambient_dim() || e.dim() != f.dim() {
        return Err(Error::DimensionMismatch("alignment needs equal dimensions".into()));
    }
    if e.dim() == 0 {
        return Ok(1.0);
    }
    let c = e.basis.transpose() * &f.basis;
    Ok(c.lu().determinant().abs().min(1.0))
}

/// Sine of the minimal angle between `U` and `W`, with `dim U + dim W = m`.
/// Zero iff `U ∩ W ≠ {0}`.
pub fn min_angle_sine(u: &Subspace, w: &Subspace) -> Result<f64> {
    if u.ambient_dim() != w.ambient_dim() || u.dim() + w.dim() != u.ambient_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dimensions {} + {} do not add up to {}",
            u.dim(),
            w.dim(),
            u.ambient_dim()
        )));
    }
    if u.dim() == 0 || w.dim() == 0 {
        return Ok(1.0);
    }
    Ok(min_singular_rect(&u.residual(&w.basis)).min(1.0))
}

/// A strictly increasing list `1 ≤ τ_1 < ... < τ_k < m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    ambient: usize,
    dims: Vec<usize>,
}

impl Signature {
    pub fn new(ambient: usize, dims: Vec<usize>) -> Result<Self> {
        if ambient == 0 {
            return Err(Error::InvalidSignature("ambient dimension must be positive".into()));
        }
        for (i, &d) in dims.iter().enumerate() {
            if d == 0 || d >= ambient {
                return Err(Error::InvalidSignature(format!("entry {d} outside 1..{ambient}")));
            }
            if i > 0 && dims[i - 1] >= d {
                return Err(Error::InvalidSignature(format!("{dims:?} is not strictly increasing")));
            }
        }
        Ok(Self { ambient, dims })
    }

    pub fn empty(ambient: usize) -> Self {
        Self { ambient, dims: Vec::new() }
    }

    /// `(1, 2, ..., m-1)`.
    pub fn full(ambient: usize) -> Self {
        Self { ambient, dims: (1..ambient).collect() }
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// `τ_j` with the conventions `τ_0 = 0`, `τ_{k+1} = m`.
    pub fn extended(&self, j: usize) -> usize {
        if j == 0 {
            0
        } else if j <= self.dims.len() {
            self.dims[j - 1]
        } else {
            self.ambient
        }
    }

    /// `τ^⊥ = (m - τ_k, ..., m - τ_1)`.
    pub fn complement(&self) -> Signature {
        Signature { ambient: self.ambient, dims: self.dims.iter().rev().map(|d| self.ambient - d).collect() }
    }

    /// Whether `self` refines `coarser`: every entry of `coarser` occurs in `self`.
    pub fn refines(&self, coarser: &Signature) -> bool {
        self.ambient == coarser.ambient && coarser.dims.iter().all(|d| self.dims.contains(d))
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Free-function form of [`Signature::refines`].
pub fn refines(tau: &Signature, coarser: &Signature) -> bool {
    tau.refines(coarser)
}

/// A τ-flag `F_1 ⊂ ... ⊂ F_k` with `dim F_j = τ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Flag {
    signature: Signature,
    components: Vec<Subspace>,
}

impl Flag {
    pub fn new(signature: Signature, components: Vec<Subspace>) -> Result<Self> {
        if components.len() != signature.len() {
            return Err(Error::InvalidFlag(format!(
                "{} components for signature {}",
                components.len(),
                signature
            )));
        }
        for (j, c) in components.iter().enumerate() {
            if c.ambient_dim() != signature.ambient() || c.dim() != signature.dims()[j] {
                return Err(Error::InvalidFlag(format!(
                    "component {} has dimension {}, expected {}",
                    j + 1,
                    c.dim(),
                    signature.dims()[j]
                )));
            }
        }
        for j in 1..components.len() {
            let r = components[j].containment_residual(&components[j - 1]);
            if r > NESTING_TOLERANCE {
                return Err(Error::InvalidFlag(format!("F_{} ⊄ F_{} (residual {r:e})", j, j + 1)));
            }
        }
        Ok(Self { signature, components })
    }

    /// Builds a nested flag from independently computed planes: each
    /// component is the previous one plus the best-fitting complement
    /// taken from the next plane.
    pub fn nested_from_planes(signature: Signature, planes: &[Subspace]) -> Result<Self> {
        if planes.len() != signature.len() {
            return Err(Error::InvalidFlag("plane count does not match signature".into()));
        }
        let m = signature.ambient();
        let mut components: Vec<Subspace> = Vec::with_capacity(planes.len());
        for (j, plane) in planes.iter().enumerate() {
            let next = match components.last() {
                None => plane.clone(),
                Some(prev) => {
                    let extra = plane.dim() - prev.dim();
                    let residual = prev.residual(plane.basis());
                    let (_, u, _) = thin_svd(&residual);
                    let mut b = Matrix::zeros(m, plane.dim());
                    b.columns_mut(0, prev.dim()).copy_from(prev.basis());
                    b.columns_mut(prev.dim(), extra).copy_from(&u.columns(0, extra));
                    Subspace::from_basis(b)?
                }
            };
            if next.dim() != signature.dims()[j] {
                return Err(Error::InvalidFlag("plane dimension does not match signature".into()));
            }
            components.push(next);
        }
        Flag::new(signature, components)
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn components(&self) -> &[Subspace] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &Subspace {
        &self.components[j]
    }

    /// `F_j` with the conventions `F_0 = {0}`, `F_{k+1} = R^m` (1-based).
    pub fn extended(&self, j: usize) -> Subspace {
        let m = self.signature.ambient();
        if j == 0 {
            Subspace::zero(m)
        } else if j <= self.components.len() {
            self.components[j - 1].clone()
        } else {
            Subspace::full(m)
        }
    }

    /// `F^⊥ = (F_k^⊥, ..., F_1^⊥)` with signature `τ^⊥`.
    pub fn complement(&self) -> Flag {
        Flag {
            signature: self.signature.complement(),
            components: self.components.iter().rev().map(Subspace::complement).collect(),
        }
    }

    /// Successive increments `F_j ⊖ F_{j-1}`, `j = 1..=k+1`.
    pub fn increments(&self) -> Vec<Subspace> {
        let k = self.components.len();
        (1..=k + 1)
            .map(|j| {
                let upper = self.extended(j);
                let lower = self.extended(j - 1);
                let r = lower.residual(upper.basis());
                let extra = upper.dim() - lower.dim();
                let (_, u, _) = thin_svd(&r);
                Subspace::from_orthonormal(u.columns(0, extra).into_owned())
            })
            .collect()
    }

    /// Keeps the components whose dimension belongs to `coarser`.
    pub fn project(&self, coarser: &Signature) -> Result<Flag> {
        if !self.signature.refines(coarser) {
            return Err(Error::NotARefinement {
                fine: self.signature.dims().to_vec(),
                coarse: coarser.dims().to_vec(),
            });
        }
        let components = self
            .components
            .iter()
            .zip(self.signature.dims())
            .filter(|(_, d)| coarser.dims().contains(d))
            .map(|(c, _)| c.clone())
            .collect();
        Ok(Flag { signature: coarser.clone(), components })
    }
}

pub fn complement_flag(f: &Flag) -> Flag {
    f.complement()
}

pub fn project_flag(f: &Flag, coarser: &Signature) -> Result<Flag> {
    f.project(coarser)
}

/// `d_τ(F, F') = max_j d(F_j, F'_j)`.
pub fn flag_distance(f: &Flag, g: &Flag) -> Result<f64> {
    if f.signature != g.signature {
        return Err(Error::SignatureMismatch {
            expected: f.signature.dims().to_vec(),
            got: g.signature.dims().to_vec(),
        });
    }
    let mut d: f64 = 0.0;
    for (a, b) in f.components.iter().zip(&g.components) {
        d = d.max(subspace_distance(a, b)?);
    }
    Ok(d)
}

/// A τ-decomposition `R^m = E_1 ⊕ ... ⊕ E_{k+1}`, `dim E_j = τ_j - τ_{j-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    signature: Signature,
    components: Vec<Subspace>,
}

impl Decomposition {
    pub fn new(signature: Signature, components: Vec<Subspace>) -> Result<Self> {
        let k = signature.len();
        if components.len() != k + 1 {
            return Err(Error::InvalidDecomposition(format!(
                "{} summands for signature {}",
                components.len(),
                signature
            )));
        }
        for (j, c) in components.iter().enumerate() {
            let want = signature.extended(j + 1) - signature.extended(j);
            if c.ambient_dim() != signature.ambient() || c.dim() != want {
                return Err(Error::InvalidDecomposition(format!(
                    "summand {} has dimension {}, expected {want}",
                    j + 1,
                    c.dim()
                )));
            }
        }
        let d = Decomposition { signature, components };
        let s = d.direct_sum_margin();
        if !(s > DIRECT_SUM_FLOOR) {
            return Err(Error::InvalidDecomposition(format!("summands are not independent (margin {s:e})")));
        }
        Ok(d)
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn components(&self) -> &[Subspace] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &Subspace {
        &self.components[j]
    }

    /// Smallest singular value of the stacked summand bases.
    pub fn direct_sum_margin(&self) -> f64 {
        let m = self.signature.ambient();
        let mut stacked = Matrix::zeros(m, m);
        let mut at = 0;
        for c in &self.components {
            stacked.columns_mut(at, c.dim()).copy_from(c.basis());
            at += c.dim();
        }
        min_singular_rect(&stacked)
    }

    /// `E_1 ⊕ ... ⊕ E_l` (orthonormalized).
    pub fn partial_sum(&self, range: std::ops::Range<usize>) -> Result<Subspace> {
        let m = self.signature.ambient();
        let total: usize = self.components[range.clone()].iter().map(Subspace::dim).sum();
        let mut b = Matrix::zeros(m, total);
        let mut at = 0;
        for c in &self.components[range] {
            b.columns_mut(at, c.dim()).copy_from(c.basis());
            at += c.dim();
        }
        Subspace::from_basis(b)
    }

    /// Merges consecutive summands so the result has signature `coarser`.
    pub fn project(&self, coarser: &Signature) -> Result<Decomposition> {
        if !self.signature.refines(coarser) {
            return Err(Error::NotARefinement {
                fine: self.signature.dims().to_vec(),
                coarse: coarser.dims().to_vec(),
            });
        }
        let k = self.signature.len();
        let mut out = Vec::with_capacity(coarser.len() + 1);
        let mut start = 0;
        for j in 1..=k + 1 {
            let upper = self.signature.extended(j);
            if j == k + 1 || coarser.dims().contains(&upper) {
                out.push(self.partial_sum(start..j)?);
                start = j;
            }
        }
        Decomposition::new(coarser.clone(), out)
    }
}

pub fn project_decomposition(d: &Decomposition, coarser: &Signature) -> Result<Decomposition> {
    d.project(coarser)
}

/// `max_j d(E_j, E'_j)`.
pub fn decomposition_distance(a: &Decomposition, b: &Decomposition) -> Result<f64> {
    if a.signature != b.signature {
        return Err(Error::SignatureMismatch {
            expected: a.signature.dims().to_vec(),
            got: b.signature.dims().to_vec(),
        });
    }
    let mut d: f64 = 0.0;
    for (x, y) in a.components.iter().zip(&b.components) {
        d = d.max(subspace_distance(x, y)?);
    }
    Ok(d)
}

fn check_complementary(f: &Flag, g: &Flag) -> Result<()> {
    let want = f.signature.complement();
    if g.signature != want {
        return Err(Error::SignatureMismatch { expected: want.dims().to_vec(), got: g.signature.dims().to_vec() });
    }
    Ok(())
}

/// `θ_⊓(F, F') = min_i α(F_i, (F'_{k-i+1})^⊥)` for `F` of signature τ and
/// `F'` of signature `τ^⊥`.
pub fn transversality(f: &Flag, g: &Flag) -> Result<f64> {
    check_complementary(f, g)?;
    let k = f.signature.len();
    let mut theta: f64 = 1.0;
    for i in 1..=k {
        let partner = g.components[k - i].complement();
        theta = theta.min(alignment(&f.components[i - 1], &partner)?);
    }
    Ok(theta)
}

/// Index of the pair realizing `θ_⊓`, 1-based.
fn weakest_pair(f: &Flag, g: &Flag) -> Result<(usize, f64)> {
    let k = f.signature.len();
    let mut best = (0, 1.0);
    for i in 1..=k {
        let partner = g.components[k - i].complement();
        let a = alignment(&f.components[i - 1], &partner)?;
        if a < best.1 {
            best = (i, a);
        }
    }
    Ok(best)
}

/// `F ⊓ F' = {F_j ∩ F'_{k-j+2}}_{j=1..k+1}`, guarded by `θ_⊓ > THETA_MIN`.
pub fn intersect(f: &Flag, g: &Flag) -> Result<Decomposition> {
    intersect_with_threshold(f, g, THETA_MIN)
}

pub fn intersect_with_threshold(f: &Flag, g: &Flag, theta_min: f64) -> Result<Decomposition> {
    check_complementary(f, g)?;
    let (pair, theta) = weakest_pair(f, g)?;
    if !(theta > theta_min) {
        return Err(Error::NonTransversal { pair, theta });
    }
    let m = f.signature.ambient();
    let k = f.signature.len();
    let mut components = Vec::with_capacity(k + 1);
    for j in 1..=k + 1 {
        let a = f.extended(j);
        let b = g.extended(k + 2 - j);
        let want = f.signature.extended(j) - f.signature.extended(j - 1);
        components.push(intersection(&a, &b, want));
    }
    debug_assert!(components.iter().all(|c| c.ambient_dim() == m));
    Decomposition::new(f.signature.clone(), components).map_err(|_| Error::NonTransversal { pair, theta })
}

/// `A ∩ B` of known dimension, as the null space of the stacked bases of
/// `A^⊥` and `B^⊥`.
fn intersection(a: &Subspace, b: &Subspace, dim: usize) -> Subspace {
    let m = a.ambient_dim();
    if a.dim() == m {
        return b.clone();
    }
    if b.dim() == m {
        return a.clone();
    }
    let ac = a.complement();
    let bc = b.complement();
    let mut stacked = Matrix::zeros(m, m);
    let rows = ac.dim() + bc.dim();
    stacked.rows_mut(0, ac.dim()).copy_from(&ac.basis().transpose());
    stacked.rows_mut(ac.dim(), bc.dim()).copy_from(&bc.basis().transpose());
    debug_assert!(rows <= m);
    let (_, _, v) = full_svd(&stacked);
    Subspace::from_orthonormal(v.columns(m - dim, dim).into_owned())
}
