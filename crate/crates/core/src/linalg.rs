//! Matrix primitives built on singular values.
//!
//! Everything here works on square real matrices (`Matrix = DMatrix<f64>`).
//! The operator norm is always `s_1` from an SVD. Exterior powers use the
//! lexicographic ordering of k-subsets of `{0, .., m-1}`, so the entry at
//! `(I, J)` of `∧_k g` is the minor of `g` on rows `I` and columns `J`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grassmann::{Flag, Signature, Subspace};

pub type Matrix = DMatrix<f64>;

/// Relative tolerance for declaring `gr_k(g) > 1`.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// Singular values at or below this are treated as zero by the sentinels.
pub const UNDERFLOW_THRESHOLD: f64 = 1e-300;

/// Relative singular-value cutoff used by [`pseudo_inverse`].
pub const PINV_CUTOFF: f64 = 1e-13;

/// Ordered singular values with canonically signed singular frames.
///
/// Columns of `left` and `right` are the left/right singular vectors, so
/// `g = left * diag(values) * right^T`. Each right singular vector has its
/// largest-magnitude coordinate positive (the matching left vector is
/// flipped with it).
#[derive(Debug, Clone)]
pub struct SingularData {
    pub values: DVector<f64>,
    pub left: Matrix,
    pub right: Matrix,
}

impl SingularData {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U diag(s) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        &self.left * Matrix::from_diagonal(&self.values) * self.right.transpose()
    }

    /// `s_k / s_{k+1}` with 1-based `k`, `+inf` when only the denominator
    /// underflows.
    pub fn gap_ratio(&self, k: usize) -> Result<f64> {
        let m = self.dim();
        if k == 0 || k >= m {
            return Err(Error::IndexOutOfRange { index: k, lo: 1, hi: m.saturating_sub(1) });
        }
        Ok(ratio_with_sentinel(self.values[k - 1], self.values[k]))
    }

    /// Span of the first `k` right singular vectors.
    pub fn top_right(&self, k: usize) -> Subspace {
        Subspace::from_orthonormal(self.right.columns(0, k).into_owned())
    }
}

fn ratio_with_sentinel(num: f64, den: f64) -> f64 {
    if den <= UNDERFLOW_THRESHOLD {
        if num > UNDERFLOW_THRESHOLD {
            f64::INFINITY
        } else {
            // 0/0: no gap is detectable
            1.0
        }
    } else {
        num / den
    }
}

pub(crate) fn check_square_finite(g: &Matrix) -> Result<usize> {
    if g.nrows() != g.ncols() {
        return Err(Error::NotSquare { rows: g.nrows(), cols: g.ncols() });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(g.nrows())
}

/// Copies `g` into faer, scaled by a power of two so the largest entry has
/// magnitude in `[1, 2)`; returns the scale applied. Entries that are
/// subnormal after scaling are flushed to zero (faer's QR sweeps do not
/// converge on them), a perturbation far below `UNDERFLOW_THRESHOLD`.
fn to_faer(g: &Matrix) -> (faer::Mat<f64>, f64) {
    let amax = g.amax();
    let scale = if amax > 0.0 && amax.is_finite() { 2f64.powi(-(amax.log2().floor() as i32)) } else { 1.0 };
    let entry = |x: f64| {
        let y = x * scale;
        if y.abs() < f64::MIN_POSITIVE { 0.0 } else { y }
    };
    (faer::Mat::from_fn(g.nrows(), g.ncols(), |i, j| entry(g[(i, j)])), scale)
}

fn from_faer(a: faer::MatRef<'_, f64>) -> Matrix {
    Matrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn unscaled(s: faer::diag::DiagRef<'_, f64>, scale: f64) -> DVector<f64> {
    DVector::from_iterator(s.dim(), s.column_vector().iter().map(|x| x / scale))
}

/// Thin SVD `g = u diag(values) vᵀ` of a matrix of any shape, values
/// nonincreasing. nalgebra's bidiagonal SVD occasionally returns wrong
/// factors for rank-deficient input, so all decompositions go through faer.
pub(crate) fn thin_svd(g: &Matrix) -> (DVector<f64>, Matrix, Matrix) {
    let (r, c) = g.shape();
    if r == 0 || c == 0 {
        let k = r.min(c);
        return (DVector::zeros(k), Matrix::zeros(r, k), Matrix::zeros(c, k));
    }
    let (a, scale) = to_faer(g);
    let dec = a.thin_svd().expect("svd of a finite matrix converges");
    (unscaled(dec.S(), scale), from_faer(dec.U()), from_faer(dec.V()))
}

/// Full SVD; `u` is `r x r` and `v` is `c x c`.
pub(crate) fn full_svd(g: &Matrix) -> (DVector<f64>, Matrix, Matrix) {
    let (r, c) = g.shape();
    if r == 0 || c == 0 {
        return (DVector::zeros(0), Matrix::identity(r, r), Matrix::identity(c, c));
    }
    let (a, scale) = to_faer(g);
    let dec = a.svd().expect("svd of a finite matrix converges");
    (unscaled(dec.S(), scale), from_faer(dec.U()), from_faer(dec.V()))
}

/// Nonincreasing singular values of a matrix of any shape.
pub(crate) fn singular_values(g: &Matrix) -> DVector<f64> {
    if g.is_empty() {
        return DVector::zeros(0);
    }
    let (a, scale) = to_faer(g);
    let s = a.singular_values().expect("svd of a finite matrix converges");
    DVector::from_iterator(s.len(), s.into_iter().map(|x| x / scale))
}

/// Full SVD of a square matrix, values sorted nonincreasing.
pub fn svd(g: &Matrix) -> Result<SingularData> {
    check_square_finite(g)?;
    Ok(svd_unchecked(g))
}

pub(crate) fn svd_unchecked(g: &Matrix) -> SingularData {
    let m = g.nrows();
    let (values, mut left, mut right) = thin_svd(g);
    debug_assert_eq!(left.ncols(), m);
    for j in 0..m {
        let col = right.column(j);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            right.column_mut(j).neg_mut();
            left.column_mut(j).neg_mut();
        }
    }
    SingularData { values, left, right }
}

/// Operator (spectral) norm `s_1(g)`.
pub fn operator_norm(g: &Matrix) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    singular_values(g)[0]
}

pub fn gap_ratio(g: &Matrix, k: usize) -> Result<f64> {
    svd(g)?.gap_ratio(k)
}

/// The most expanding `k`-plane of `g`: span of its top `k` right singular
/// vectors. Undefined (an error) unless `gr_k(g) > 1 + GAP_TOLERANCE`.
pub fn most_expanding(g: &Matrix, k: usize) -> Result<Subspace> {
    let sd = svd(g)?;
    let ratio = sd.gap_ratio(k)?;
    if !(ratio > 1.0 + GAP_TOLERANCE) {
        return Err(Error::DegenerateGap { k, ratio });
    }
    Ok(sd.top_right(k))
}

/// The most expanding τ-flag. Fails at the first `τ_j` without a gap.
pub fn most_expanding_flag(g: &Matrix, tau: &Signature) -> Result<Flag> {
    let sd = svd(g)?;
    if tau.ambient() != sd.dim() {
        return Err(Error::DimensionMismatch(format!(
            "signature lives in R^{}, matrix is {}x{}",
            tau.ambient(),
            sd.dim(),
            sd.dim()
        )));
    }
    let mut components = Vec::with_capacity(tau.len());
    for &k in tau.dims() {
        let ratio = sd.gap_ratio(k)?;
        if !(ratio > 1.0 + GAP_TOLERANCE) {
            return Err(Error::DegenerateGap { k, ratio });
        }
        components.push(sd.top_right(k));
    }
    Flag::new(tau.clone(), components)
}

/// Lexicographically ordered `k`-subsets of `0..m`.
pub fn k_subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // rightmost position that can still advance
        let mut i = k;
        while i > 0 && idx[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn binomial(m: usize, k: usize) -> usize {
    if k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// `∧_k g`, the `C(m,k) x C(m,k)` matrix of `k x k` minors.
pub fn exterior_power(g: &Matrix, k: usize) -> Result<Matrix> {
    let m = check_square_finite(g)?;
    if k > m {
        return Err(Error::IndexOutOfRange { index: k, lo: 0, hi: m });
    }
    Ok(exterior_power_unchecked(g, k))
}

pub(crate) fn exterior_power_unchecked(g: &Matrix, k: usize) -> Matrix {
    let m = g.nrows();
    if k == 0 {
        return Matrix::from_element(1, 1, 1.0);
    }
    if k == 1 {
        return g.clone();
    }
    let subsets = k_subsets(m, k);
    let d = subsets.len();
    let mut out = Matrix::zeros(d, d);
    let mut minor = Matrix::zeros(k, k);
    for (a, rows) in subsets.iter().enumerate() {
        for (b, cols) in subsets.iter().enumerate() {
            for (i, &r) in rows.iter().enumerate() {
                for (j, &c) in cols.iter().enumerate() {
                    minor[(i, j)] = g[(r, c)];
                }
            }
            out[(a, b)] = determinant(&minor);
        }
    }
    out
}

fn determinant(a: &Matrix) -> f64 {
    match a.nrows() {
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        _ => eliminate(a.clone()),
    }
}

/// Determinant by Gaussian elimination with partial pivoting. Multipliers
/// are formed as quotients rather than through a reciprocal pivot, which
/// overflows to `inf` for subnormal pivots.
fn eliminate(mut a: Matrix) -> f64 {
    let k = a.nrows();
    let mut det = 1.0;
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).expect("nonempty");
        let pivot = a[(p, c)];
        if pivot == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap_rows(p, c);
            det = -det;
        }
        det *= pivot;
        for r in c + 1..k {
            let l = a[(r, c)] / pivot;
            if l != 0.0 {
                for j in c + 1..k {
                    a[(r, j)] -= l * a[(c, j)];
                }
            }
        }
    }
    det
}

/// Recovers the `k`-plane represented by an (approximately) decomposable
/// `k`-vector in the lexicographic basis of `∧_k R^m`.
///
/// Each contraction `e_J ⌟ ω` over `(k-1)`-subsets `J` lies in the plane;
/// the plane is the top-`k` left singular subspace of all contractions.
pub fn decomposable_span(omega: &DVector<f64>, m: usize, k: usize) -> Result<Subspace> {
    if k == 0 || k > m {
        return Err(Error::IndexOutOfRange { index: k, lo: 1, hi: m });
    }
    let subsets = k_subsets(m, k);
    if omega.len() != subsets.len() {
        return Err(Error::DimensionMismatch(format!(
            "k-vector has {} coordinates, C({m},{k}) = {}",
            omega.len(),
            subsets.len()
        )));
    }
    if k == 1 {
        return Subspace::from_basis(Matrix::from_column_slice(m, 1, omega.as_slice()));
    }
    if k == m {
        return Ok(Subspace::full(m));
    }
    let position = |s: &[usize]| subsets.binary_search_by(|probe| probe.as_slice().cmp(s)).ok();
    let lower = k_subsets(m, k - 1);
    let mut contractions = Matrix::zeros(m, lower.len());
    let mut merged = Vec::with_capacity(k);
    for (col, j) in lower.iter().enumerate() {
        for i in 0..m {
            if j.contains(&i) {
                continue;
            }
            merged.clear();
            merged.extend_from_slice(j);
            let above = j.iter().filter(|&&x| x > i).count();
            let at = merged.len() - above;
            merged.insert(at, i);
            let sign = if above % 2 == 0 { 1.0 } else { -1.0 };
            if let Some(p) = position(&merged) {
                contractions[(i, col)] = sign * omega[p];
            }
        }
    }
    let (_, u, _) = thin_svd(&contractions);
    Ok(Subspace::from_orthonormal(u.columns(0, k).into_owned()))
}

/// Moore-Penrose pseudo-inverse with the default relative cutoff.
pub fn pseudo_inverse(g: &Matrix) -> Result<Matrix> {
    pseudo_inverse_with_cutoff(g, PINV_CUTOFF)
}

/// Pseudo-inverse discarding singular values below `rel_cutoff * s_1`.
pub fn pseudo_inverse_with_cutoff(g: &Matrix, rel_cutoff: f64) -> Result<Matrix> {
    let m = check_square_finite(g)?;
    let sd = svd_unchecked(g);
    let s1 = if m > 0 { sd.values[0] } else { 0.0 };
    let threshold = (rel_cutoff * s1).max(UNDERFLOW_THRESHOLD);
    let inv = sd.values.map(|s| if s > threshold { 1.0 / s } else { 0.0 });
    Ok(&sd.right * Matrix::from_diagonal(&inv) * sd.left.transpose())
}

/// Numerical rank relative to `rel_cutoff * s_1`.
pub fn numerical_rank(g: &Matrix, rel_cutoff: f64) -> usize {
    let s = singular_values(g);
    let s1 = s.iter().copied().fold(0.0, f64::max);
    if s1 <= UNDERFLOW_THRESHOLD {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_cutoff * s1).count()
}

/// Expansion rift `‖g1 g0‖ / (‖g1‖ ‖g0‖)`.
pub fn rift(g0: &Matrix, g1: &Matrix) -> Result<f64> {
    check_square_finite(g0)?;
    check_square_finite(g1)?;
    if g0.nrows() != g1.nrows() {
        return Err(Error::DimensionMismatch("rift of matrices of different size".into()));
    }
    let n0 = operator_norm(g0);
    let n1 = operator_norm(g1);
    if n0 <= UNDERFLOW_THRESHOLD || n1 <= UNDERFLOW_THRESHOLD {
        return Err(Error::ZeroMatrix);
    }
    // normalize first so the product cannot overflow
    let p = (g1 / n1) * (g0 / n0);
    Ok(operator_norm(&p))
}

/// `‖g1 - g2‖ / max(‖g1‖, ‖g2‖)`.
pub fn relative_distance(g1: &Matrix, g2: &Matrix) -> Result<f64> {
    check_square_finite(g1)?;
    check_square_finite(g2)?;
    if g1.shape() != g2.shape() {
        return Err(Error::DimensionMismatch("relative distance of matrices of different size".into()));
    }
    let scale = operator_norm(g1).max(operator_norm(g2));
    if scale <= UNDERFLOW_THRESHOLD {
        return Err(Error::ZeroMatrix);
    }
    Ok(operator_norm(&((g1 - g2) / scale)))
}

/// A matrix stored as `2^exponent * factor` with `‖factor‖ ∈ [1/2, 2]`.
///
/// Rescaling is by exact powers of two, so renormalization never rounds and
/// the log scale is an integer multiple of `ln 2`. A zero product is kept as
/// a zero factor and reports `-inf` for its log-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMatrix {
    factor: Matrix,
    exponent: i64,
    zero: bool,
}

impl ScaledMatrix {
    pub fn identity(m: usize) -> Self {
        Self { factor: Matrix::identity(m, m), exponent: 0, zero: false }
    }

    pub fn from_matrix(g: Matrix) -> Self {
        let mut out = Self { factor: g, exponent: 0, zero: false };
        out.renormalize();
        out
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Natural-log scale: represented matrix is `e^{log_scale} * factor`.
    pub fn log_scale(&self) -> f64 {
        self.exponent as f64 * std::f64::consts::LN_2
    }

    /// `log ‖self‖`, or `-inf` for a zero product.
    pub fn log_norm(&self) -> f64 {
        if self.zero {
            return f64::NEG_INFINITY;
        }
        let n = operator_norm(&self.factor);
        if n <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.log_scale() + n.ln()
    }

    /// The represented matrix; entries overflow to `inf` if the scale is
    /// beyond `f64` range.
    pub fn to_matrix(&self) -> Matrix {
        if self.zero {
            return Matrix::zeros(self.dim(), self.dim());
        }
        scale_by_pow2(&self.factor, self.exponent)
    }

    /// Replaces `self` with `a * self`.
    pub fn left_mul(&mut self, a: &Matrix) {
        if self.zero {
            return;
        }
        self.factor = a * &self.factor;
        self.renormalize();
    }

    /// Replaces `self` with `self * a`.
    pub fn right_mul(&mut self, a: &Matrix) {
        if self.zero {
            return;
        }
        self.factor = &self.factor * a;
        self.renormalize();
    }

    /// `later * self`, scales adding.
    pub fn then(&self, later: &ScaledMatrix) -> ScaledMatrix {
        if self.zero || later.zero {
            return ScaledMatrix { factor: Matrix::zeros(self.dim(), self.dim()), exponent: 0, zero: true };
        }
        let mut out = ScaledMatrix {
            factor: &later.factor * &self.factor,
            exponent: self.exponent + later.exponent,
            zero: false,
        };
        out.renormalize();
        out
    }

    /// The represented matrix times `2^e`.
    pub fn times_pow2(&self, e: i64) -> ScaledMatrix {
        ScaledMatrix { factor: self.factor.clone(), exponent: self.exponent + e, zero: self.zero }
    }

    pub fn transpose(&self) -> ScaledMatrix {
        ScaledMatrix { factor: self.factor.transpose(), exponent: self.exponent, zero: self.zero }
    }

    fn renormalize(&mut self) {
        let d = self.factor.nrows();
        let fro = self.factor.norm();
        if !(fro > 0.0) || !fro.is_finite() {
            if fro == 0.0 {
                self.zero = true;
            }
            return;
        }
        let e1 = fro.log2().floor() as i64;
        self.apply_pow2(e1);
        if d > 4 {
            // ‖(gᵀg)²‖_F^{1/4} lies in [s_1, d^{1/8} s_1]
            let gtg = self.factor.transpose() * &self.factor;
            let nu = (&gtg * &gtg).norm().sqrt().sqrt();
            if nu > 0.0 {
                let e2 = nu.log2().floor() as i64;
                self.apply_pow2(e2);
            }
        }
    }

    fn apply_pow2(&mut self, e: i64) {
        if e == 0 {
            return;
        }
        self.factor = scale_by_pow2(&self.factor, -e);
        self.exponent += e;
    }
}

fn scale_by_pow2(g: &Matrix, e: i64) -> Matrix {
    // split so each multiplier stays a normal f64
    let mut out = g.clone();
    let mut rem = e;
    while rem != 0 {
        let step = rem.clamp(-1000, 1000);
        let f = 2f64.powi(step as i32);
        out *= f;
        rem -= step;
    }
    out
}
