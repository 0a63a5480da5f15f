//! Thin dense linear-algebra layer over `faer`.
//!
//! Everything here works on small-to-moderate dense matrices (a few thousand
//! rows at most). Singularity is detected from the pivots of a partially
//! pivoted LU, which is cheap and adequate for the well-scaled operators
//! this crate builds.

use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Solve};
use faer::traits::ComplexField;
use faer::{c64, Mat, MatRef, Side};

use crate::error::{Error, Result};

pub type RealMat = Mat<f64>;
pub type CplxMat = Mat<c64>;

/// Scalars we factor and decompose: `f64` and `c64`.
pub trait Scalar: ComplexField<Canonical = Self, Real = f64> + Copy + Send + Sync {
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for c64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Partially pivoted LU that refuses numerically singular input.
pub struct CheckedLu<T: Scalar> {
    lu: PartialPivLu<T>,
}

impl<T: Scalar> CheckedLu<T> {
    pub fn new(a: MatRef<'_, T>, what: &str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "{what}: expected square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let lu = a.partial_piv_lu();
        let u = lu.U();
        let mut max_pivot = 0.0_f64;
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let p = u[(i, i)].modulus();
            max_pivot = max_pivot.max(p);
            min_pivot = min_pivot.min(p);
        }
        if n > 0 && (!min_pivot.is_finite() || min_pivot <= n as f64 * f64::EPSILON * max_pivot) {
            return Err(Error::Singular {
                what: what.to_string(),
            });
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, rhs: MatRef<'_, T>) -> Mat<T> {
        self.lu.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &[T]) -> Vec<T> {
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn inverse(&self) -> Mat<T> {
        self.lu.inverse()
    }
}

pub fn solve<T: Scalar>(a: MatRef<'_, T>, rhs: MatRef<'_, T>, what: &str) -> Result<Mat<T>> {
    Ok(CheckedLu::new(a, what)?.solve(rhs))
}

pub fn inverse<T: Scalar>(a: MatRef<'_, T>, what: &str) -> Result<Mat<T>> {
    Ok(CheckedLu::new(a, what)?.inverse())
}

/// Singular values in non-increasing order.
pub fn singular_values<T: Scalar>(a: MatRef<'_, T>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values()
        .map_err(|e| Error::Decomposition(format!("svd: {e:?}")))
}

pub fn sigma_max<T: Scalar>(a: MatRef<'_, T>) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

pub fn sigma_min<T: Scalar>(a: MatRef<'_, T>) -> Result<f64> {
    Ok(singular_values(a)?.last().copied().unwrap_or(0.0))
}

pub fn to_complex(a: MatRef<'_, f64>) -> CplxMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| c64::new(a[(i, j)], 0.0))
}

pub fn identity(n: usize) -> RealMat {
    Mat::identity(n, n)
}

/// `a^k` by binary powering; `a^0 = I`.
pub fn matrix_power(a: MatRef<'_, f64>, mut k: usize) -> RealMat {
    let n = a.nrows();
    let mut result = identity(n);
    let mut base = a.to_owned();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Principal square root of a Hermitian positive (semi)definite matrix.
pub fn hpd_sqrt(a: MatRef<'_, c64>) -> Result<CplxMat> {
    let n = a.nrows();
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("self-adjoint evd: {e:?}")))?;
    let u = evd.U();
    let s = evd.S().column_vector();
    let scaled = Mat::from_fn(n, n, |i, j| u[(i, j)] * s[j].re.max(0.0).sqrt());
    Ok(&scaled * u.adjoint())
}

pub fn frobenius<T: Scalar>(a: MatRef<'_, T>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)].modulus();
            acc += v * v;
        }
    }
    acc.sqrt()
}

pub fn vec_norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter()
        .map(|v| {
            let m = v.modulus();
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

/// `y = a x` for a complex matrix and vector.
pub fn cmatvec(a: MatRef<'_, c64>, x: &[c64]) -> Vec<c64> {
    let mut y = vec![c64::new(0.0, 0.0); a.nrows()];
    for j in 0..a.ncols() {
        let xj = x[j];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += a[(i, j)] * xj;
        }
    }
    y
}

/// Hermitian inner product `<a, b> = b^* a`.
pub fn inner(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}
