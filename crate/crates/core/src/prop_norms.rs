//! Exact two-level propagator norms on the coarse grid.
//!
//! With `D_i = A_i - Psi_i` (`A_i` the exact `k`-step product on coarse
//! interval `i`), the coarse error and residual propagators factor through
//! block lower-bidiagonal matrices, so their norms are reciprocals of a
//! smallest singular value:
//!
//! * residual, F-relaxation: rows `r`, diagonal `D_{r+1}^{-1}`, subdiagonal `-Psi_r D_r^{-1}`;
//! * error, F-relaxation: diagonal `D_{r+1}^{-1}`, subdiagonal `-D_{r+1}^{-1} Psi_{r+1}`;
//! * error, FCF-relaxation: with `G_i = D_i A_{i-1}`, diagonal `G_{r+2}^{-1}`,
//!   subdiagonal `-G_{r+2}^{-1} Psi_{r+2}`.
//!
//! Block lists below are indexed from zero: `aprod[i-1]` holds `A_i`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CheckedLu, RealMat};
use crate::schemes::ButcherTableau;
use crate::spacetime::{Relaxation, SpaceTimeSystem};

/// Largest dimension handled by a dense SVD; above it the smallest singular
/// value comes from inverse iteration.
pub const DENSE_SVD_LIMIT: usize = 4000;
pub const INVERSE_ITERATION_TOL: f64 = 1e-10;
pub const INVERSE_ITERATION_CAP: usize = 500;

/// Time-independent fine/coarse step pair.
#[derive(Debug, Clone)]
pub struct PropagatorPair {
    pub phi: RealMat,
    pub psi: RealMat,
    pub phi_k: RealMat,
    pub k: usize,
    pub n_coarse: usize,
    pub dt: Option<f64>,
}

impl PropagatorPair {
    pub fn from_matrices(phi: RealMat, psi: RealMat, k: usize, n_coarse: usize) -> Result<Self> {
        if phi.nrows() != phi.ncols() || psi.nrows() != psi.ncols() || phi.nrows() != psi.nrows() {
            return Err(Error::Dimension(format!(
                "Phi is {}x{}, Psi is {}x{}",
                phi.nrows(),
                phi.ncols(),
                psi.nrows(),
                psi.ncols()
            )));
        }
        if k == 0 || n_coarse < 2 {
            return Err(Error::TimeLayout(format!(
                "need k >= 1 and N_c >= 2, got k = {k}, N_c = {n_coarse}"
            )));
        }
        let phi_k = linalg::matrix_power(phi.as_ref(), k);
        Ok(Self {
            phi,
            psi,
            phi_k,
            k,
            n_coarse,
            dt: None,
        })
    }

    /// `Phi = R_fine(-dt L)`, `Psi = R_coarse(-k dt L)`.
    pub fn from_schemes(
        l: MatRef<'_, f64>,
        fine: &ButcherTableau,
        coarse: &ButcherTableau,
        dt: f64,
        k: usize,
        n_coarse: usize,
    ) -> Result<Self> {
        let phi = fine.propagator_matrix(l, dt)?;
        let psi = coarse.propagator_matrix(l, k as f64 * dt)?;
        let mut pair = Self::from_matrices(phi, psi, k, n_coarse)?;
        pair.dt = Some(dt);
        Ok(pair)
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    /// `(A_i, Psi_i)` for `i = 1..N_c-1`.
    pub fn block_lists(&self) -> (Vec<RealMat>, Vec<RealMat>) {
        let m = self.n_coarse - 1;
        (vec![self.phi_k.clone(); m], vec![self.psi.clone(); m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BidiagonalLayout {
    ResidualF,
    ErrorF,
    ErrorFCF,
}

/// Block lower-bidiagonal matrix: `diag[r]` at `(r, r)`, `sub[r-1]` at `(r, r-1)`.
#[derive(Debug, Clone)]
pub struct ReducedBidiagonal {
    pub diag: Vec<RealMat>,
    pub sub: Vec<RealMat>,
    pub layout: BidiagonalLayout,
}

fn check_lists(aprod: &[RealMat], psi: &[RealMat]) -> Result<usize> {
    if aprod.is_empty() || aprod.len() != psi.len() {
        return Err(Error::TimeLayout(format!(
            "need matching non-empty block lists, got {} and {}",
            aprod.len(),
            psi.len()
        )));
    }
    let n = aprod[0].nrows();
    if aprod
        .iter()
        .chain(psi)
        .any(|m| m.nrows() != n || m.ncols() != n)
    {
        return Err(Error::Dimension("coarse blocks must all be n x n".into()));
    }
    Ok(n)
}

fn difference_inverses(aprod: &[RealMat], psi: &[RealMat]) -> Result<Vec<RealMat>> {
    aprod
        .iter()
        .zip(psi)
        .enumerate()
        .map(|(i, (a, p))| {
            let d = a - p;
            linalg::inverse(d.as_ref(), "A_i - Psi_i")
                .map_err(|_| Error::SingularDifference { block: i + 1 })
        })
        .collect()
}

impl ReducedBidiagonal {
    pub fn residual_f(aprod: &[RealMat], psi: &[RealMat]) -> Result<Self> {
        check_lists(aprod, psi)?;
        let dinv = difference_inverses(aprod, psi)?;
        let sub = (1..dinv.len())
            .map(|r| -(&psi[r - 1] * &dinv[r - 1]))
            .collect();
        Ok(Self {
            diag: dinv,
            sub,
            layout: BidiagonalLayout::ResidualF,
        })
    }

    pub fn error_f(aprod: &[RealMat], psi: &[RealMat]) -> Result<Self> {
        check_lists(aprod, psi)?;
        let dinv = difference_inverses(aprod, psi)?;
        let sub = (1..dinv.len()).map(|r| -(&dinv[r] * &psi[r])).collect();
        Ok(Self {
            diag: dinv,
            sub,
            layout: BidiagonalLayout::ErrorF,
        })
    }

    /// Empty (dimension 0) when there are only two coarse points.
    pub fn error_fcf(aprod: &[RealMat], psi: &[RealMat]) -> Result<Self> {
        check_lists(aprod, psi)?;
        let m = aprod.len();
        let mut diag = Vec::with_capacity(m.saturating_sub(1));
        for i in 2..=m {
            let d = &aprod[i - 1] - &psi[i - 1];
            CheckedLu::new(d.as_ref(), "A_i - Psi_i")
                .map_err(|_| Error::SingularDifference { block: i })?;
            CheckedLu::new(aprod[i - 2].as_ref(), "A_i").map_err(|_| Error::Singular {
                what: format!("fine product on coarse interval {}", i - 1),
            })?;
            let g = &d * &aprod[i - 2];
            diag.push(linalg::inverse(g.as_ref(), "(A_i - Psi_i) A_{i-1}")?);
        }
        let sub = (1..diag.len()).map(|r| -(&diag[r] * &psi[r + 1])).collect();
        Ok(Self {
            diag,
            sub,
            layout: BidiagonalLayout::ErrorFCF,
        })
    }

    pub fn block_size(&self) -> usize {
        self.diag.first().map_or(0, |d| d.nrows())
    }

    pub fn dim(&self) -> usize {
        self.diag.len() * self.block_size()
    }

    pub fn to_dense(&self) -> RealMat {
        let n = self.block_size();
        let mut m = Mat::<f64>::zeros(self.dim(), self.dim());
        let mut put = |r: usize, c: usize, b: &RealMat| {
            for i in 0..n {
                for j in 0..n {
                    m[(r * n + i, c * n + j)] = b[(i, j)];
                }
            }
        };
        for (r, d) in self.diag.iter().enumerate() {
            put(r, r, d);
        }
        for (r, s) in self.sub.iter().enumerate() {
            put(r + 1, r, s);
        }
        m
    }

    pub fn sigma_min(&self) -> Result<f64> {
        if self.dim() == 0 {
            return Ok(f64::INFINITY);
        }
        if self.dim() <= DENSE_SVD_LIMIT {
            linalg::sigma_min(self.to_dense().as_ref())
        } else {
            self.sigma_min_iterative(INVERSE_ITERATION_TOL, INVERSE_ITERATION_CAP)
        }
    }

    /// Power iteration on `M^{-T} M^{-1}` using block substitutions.
    pub fn sigma_min_iterative(&self, tol: f64, cap: usize) -> Result<f64> {
        let n = self.block_size();
        let rows = self.diag.len();
        if rows == 0 {
            return Ok(f64::INFINITY);
        }
        let lu: Vec<CheckedLu<f64>> = self
            .diag
            .iter()
            .map(|d| CheckedLu::new(d.as_ref(), "diagonal block"))
            .collect::<Result<_>>()?;
        let lu_t: Vec<CheckedLu<f64>> = self
            .diag
            .iter()
            .map(|d| CheckedLu::new(d.transpose(), "diagonal block"))
            .collect::<Result<_>>()?;
        let matvec = |m: &RealMat, x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| (0..n).map(|j| m[(i, j)] * x[j]).sum())
                .collect()
        };
        let matvec_t = |m: &RealMat, x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|j| (0..n).map(|i| m[(i, j)] * x[i]).sum())
                .collect()
        };
        let forward = |x: &[f64]| -> Vec<f64> {
            let mut y = vec![0.0; rows * n];
            for r in 0..rows {
                let mut rhs = x[r * n..(r + 1) * n].to_vec();
                if r > 0 {
                    let s = matvec(&self.sub[r - 1], &y[(r - 1) * n..r * n]);
                    for (a, b) in rhs.iter_mut().zip(&s) {
                        *a -= b;
                    }
                }
                y[r * n..(r + 1) * n].copy_from_slice(&lu[r].solve_vec(&rhs));
            }
            y
        };
        let backward = |x: &[f64]| -> Vec<f64> {
            let mut y = vec![0.0; rows * n];
            for r in (0..rows).rev() {
                let mut rhs = x[r * n..(r + 1) * n].to_vec();
                if r + 1 < rows {
                    let s = matvec_t(&self.sub[r], &y[(r + 1) * n..(r + 2) * n]);
                    for (a, b) in rhs.iter_mut().zip(&s) {
                        *a -= b;
                    }
                }
                y[r * n..(r + 1) * n].copy_from_slice(&lu_t[r].solve_vec(&rhs));
            }
            y
        };
        let mut x: Vec<f64> = (0..rows * n)
            .map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64)
            .collect();
        let mut norm = linalg::vec_norm(&x);
        x.iter_mut().for_each(|v| *v /= norm);
        let mut estimate = 0.0_f64;
        for _ in 0..cap {
            let y = backward(&forward(&x));
            norm = linalg::vec_norm(&y);
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Decomposition("inverse iteration broke down".into()));
            }
            x = y.iter().map(|v| v / norm).collect();
            let converged = (norm - estimate).abs() <= tol * norm;
            estimate = norm;
            if converged {
                break;
            }
        }
        // estimate approximates sigma_max(M^{-1})^2
        Ok(1.0 / estimate.sqrt())
    }

    /// `1 / sigma_min`, the propagator norm; zero for an empty operator.
    pub fn propagator_norm(&self) -> Result<f64> {
        let s = self.sigma_min()?;
        Ok(if s.is_infinite() { 0.0 } else { 1.0 / s })
    }
}

pub fn residual_norm_f_blocks(aprod: &[RealMat], psi: &[RealMat]) -> Result<f64> {
    ReducedBidiagonal::residual_f(aprod, psi)?.propagator_norm()
}

pub fn error_norm_f_blocks(aprod: &[RealMat], psi: &[RealMat]) -> Result<f64> {
    ReducedBidiagonal::error_f(aprod, psi)?.propagator_norm()
}

pub fn error_norm_fcf_blocks(aprod: &[RealMat], psi: &[RealMat]) -> Result<f64> {
    ReducedBidiagonal::error_fcf(aprod, psi)?.propagator_norm()
}

/// `||I - A_Delta B_Delta^{-1}||`.
pub fn residual_norm_f(pair: &PropagatorPair) -> Result<f64> {
    let (a, p) = pair.block_lists();
    residual_norm_f_blocks(&a, &p)
}

/// `||I - B_Delta^{-1} A_Delta||`.
pub fn error_norm_f(pair: &PropagatorPair) -> Result<f64> {
    let (a, p) = pair.block_lists();
    error_norm_f_blocks(&a, &p)
}

/// `||(I - B_Delta^{-1} A_Delta)(I - A_Delta)||`.
pub fn error_norm_fcf(pair: &PropagatorPair) -> Result<f64> {
    let (a, p) = pair.block_lists();
    error_norm_fcf_blocks(&a, &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    Error,
    Residual,
}

/// Largest coarse dimension `N_c n` formed densely by the oracle.
pub const ORACLE_DIM_LIMIT: usize = 4000;

/// Dense unit lower block-bidiagonal matrix with `-blocks[i-1]` at `(i, i-1)`.
pub fn coarse_operator(blocks: &[RealMat]) -> RealMat {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let nc = blocks.len() + 1;
    let mut m = Mat::<f64>::identity(nc * n, nc * n);
    for (i, b) in blocks.iter().enumerate() {
        for r in 0..n {
            for c in 0..n {
                m[((i + 1) * n + r, i * n + c)] = -b[(r, c)];
            }
        }
    }
    m
}

/// Forms the coarse propagator explicitly and returns its spectral norm.
pub fn direct_norm_oracle(
    aprod: &[RealMat],
    psi: &[RealMat],
    relax: Relaxation,
    quantity: Quantity,
) -> Result<f64> {
    let n = check_lists(aprod, psi)?;
    let dim = (aprod.len() + 1) * n;
    if dim > ORACLE_DIM_LIMIT {
        return Err(Error::SizeGuard {
            limit: ORACLE_DIM_LIMIT,
            requested: dim,
        });
    }
    let op = direct_operator(aprod, psi, relax, quantity)?;
    linalg::sigma_max(op.as_ref())
}

/// The dense coarse error or residual propagator.
pub fn direct_operator(
    aprod: &[RealMat],
    psi: &[RealMat],
    relax: Relaxation,
    quantity: Quantity,
) -> Result<RealMat> {
    let a = coarse_operator(aprod);
    let b = coarse_operator(psi);
    let dim = a.nrows();
    let id = Mat::<f64>::identity(dim, dim);
    let binv = linalg::inverse(b.as_ref(), "B_Delta")?;
    let base = match quantity {
        Quantity::Error => &id - &binv * &a,
        Quantity::Residual => &id - &a * &binv,
    };
    Ok(match relax {
        Relaxation::F => base,
        Relaxation::FCF => base * (&id - &a),
    })
}

/// Ideal interpolation `[-A_ff^{-1} A_fc; I]`, mapping C-point values to
/// all fine points (rows and columns in natural time order).
pub fn ideal_interpolation(sys: &SpaceTimeSystem) -> RealMat {
    let n = sys.n();
    let k = sys.k();
    let mut p = Mat::<f64>::zeros(sys.n_points() * n, sys.n_coarse() * n);
    for j in 0..sys.n_coarse() {
        let mut block = Mat::<f64>::identity(n, n);
        let span = if j + 1 == sys.n_coarse() { 1 } else { k };
        for off in 0..span {
            let l = j * k + off;
            if off > 0 {
                block = sys.steps()[l - 1].to_dense() * &block;
            }
            for a in 0..n {
                for b in 0..n {
                    p[(l * n + a, j * n + b)] = block[(a, b)];
                }
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::{DenseStep, StepRef};
    use std::sync::Arc;

    fn scalar(v: f64) -> RealMat {
        Mat::from_fn(1, 1, |_, _| v)
    }

    fn lists(lam: f64, mu: f64, k: usize, nc: usize) -> (Vec<RealMat>, Vec<RealMat>) {
        (
            vec![scalar(lam.powi(k as i32)); nc - 1],
            vec![scalar(mu); nc - 1],
        )
    }

    #[test]
    fn two_point_scalar_is_the_difference() {
        let (lam, mu) = (0.9, 0.7);
        let (a, p) = lists(lam, mu, 3, 2);
        let want = (mu - lam.powi(3)).abs();
        assert!((residual_norm_f_blocks(&a, &p).unwrap() - want).abs() < 1e-15);
        assert!((error_norm_f_blocks(&a, &p).unwrap() - want).abs() < 1e-15);
        assert_eq!(error_norm_fcf_blocks(&a, &p).unwrap(), 0.0);
    }

    #[test]
    fn backward_euler_rational_example() {
        let (a, p) = lists(10.0 / 11.0, 5.0 / 6.0, 2, 2);
        let v = residual_norm_f_blocks(&a, &p).unwrap();
        assert!((v - 5.0 / 726.0).abs() < 1e-15);
    }

    #[test]
    fn fcf_three_points_scalar() {
        let (lam, mu, k) = (0.8_f64, 0.5, 2);
        let (a, p) = lists(lam, mu, k, 3);
        let v = error_norm_fcf_blocks(&a, &p).unwrap();
        let oracle = direct_norm_oracle(&a, &p, Relaxation::FCF, Quantity::Error).unwrap();
        assert!((v - oracle).abs() < 1e-13);
        assert!((v - lam.powi(2) * (mu - lam.powi(2)).abs()).abs() < 1e-13);
    }

    #[test]
    fn singular_difference_is_reported() {
        let (a, p) = lists(0.5, 0.25, 2, 4);
        assert!(matches!(
            residual_norm_f_blocks(&a, &p),
            Err(Error::SingularDifference { block: 1 })
        ));
    }

    #[test]
    fn oracle_vanishes_for_exact_coarse() {
        let (a, _) = lists(0.9, 0.0, 2, 5);
        for relax in [Relaxation::F, Relaxation::FCF] {
            for q in [Quantity::Error, Quantity::Residual] {
                assert!(direct_norm_oracle(&a, &a, relax, q).unwrap() < 1e-15);
            }
        }
    }

    #[test]
    fn oracle_size_guard() {
        let a = vec![Mat::<f64>::zeros(500, 500); 8];
        assert!(matches!(
            direct_norm_oracle(&a, &a, Relaxation::F, Quantity::Error),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn iterative_sigma_min_agrees_with_svd() {
        let blocks: Vec<RealMat> = (0..6)
            .map(|s| {
                Mat::from_fn(3, 3, |i, j| {
                    0.2 * ((s * 9 + i * 3 + j) as f64).cos() + if i == j { 0.5 } else { 0.0 }
                })
            })
            .collect();
        let psi: Vec<RealMat> = (0..6)
            .map(|s| Mat::from_fn(3, 3, |i, j| 0.3 * ((s + 2 * i + j) as f64).sin()))
            .collect();
        let rb = ReducedBidiagonal::error_f(&blocks, &psi).unwrap();
        let dense = rb.sigma_min().unwrap();
        let it = rb.sigma_min_iterative(1e-13, 5000).unwrap();
        assert!((dense - it).abs() < 1e-6 * dense, "{dense} vs {it}");
    }

    #[test]
    fn ideal_interpolation_bounded_by_k() {
        let phi = Mat::from_fn(2, 2, |i, j| [[0.6, 0.3], [-0.3, 0.6]][i][j]);
        let k = 4;
        let sys = SpaceTimeSystem::uniform(
            Arc::new(DenseStep::new(&phi)) as StepRef,
            13,
            k,
            vec![0.0; 26],
        )
        .unwrap();
        let p = ideal_interpolation(&sys);
        assert!(linalg::sigma_max(p.as_ref()).unwrap() <= k as f64);
    }
}
