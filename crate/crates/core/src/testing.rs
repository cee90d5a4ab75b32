//! Oracles shared by unit tests.

use crate::linalg::Matrix;

/// Double-double number `hi + lo`.
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn scale(self, s: f64) -> Dd {
        Dd { hi: self.hi * s, lo: self.lo * s }
    }
}

/// `mats[n-1] ... mats[0]` in double-double arithmetic, rescaled by powers
/// of two and returned as a plain matrix times `2^exponent`.
pub fn dd_scaled_product(mats: &[Matrix]) -> (Matrix, i64) {
    let m = mats[0].nrows();
    let mut p: Vec<Dd> = (0..m * m).map(|i| Dd::from(if i / m == i % m { 1.0 } else { 0.0 })).collect();
    let mut exponent = 0i64;
    for g in mats {
        let mut q = vec![Dd::ZERO; m * m];
        for i in 0..m {
            for j in 0..m {
                let mut acc = Dd::ZERO;
                for k in 0..m {
                    acc = acc.add(Dd::from(g[(i, k)]).mul(p[k * m + j]));
                }
                q[i * m + j] = acc;
            }
        }
        let big = q.iter().map(|d| d.hi.abs()).fold(0.0, f64::max);
        if big > 0.0 {
            let e = big.log2().floor() as i32;
            let s = 2f64.powi(-e);
            for d in q.iter_mut() {
                *d = d.scale(s);
            }
            exponent += e as i64;
        }
        p = q;
    }
    (Matrix::from_fn(m, m, |i, j| p[i * m + j].hi), exponent)
}

/// `mats[n-1] ... mats[0]` in double-double arithmetic; the product must fit
/// in `f64` range.
pub fn dd_product(mats: &[Matrix]) -> Matrix {
    let (f, e) = dd_scaled_product(mats);
    f * 2f64.powi(e as i32)
}
