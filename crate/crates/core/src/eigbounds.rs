//! Eigenvalue-based convergence bounds for simultaneously diagonalisable
//! fine and coarse steps.
//!
//! A spatial eigenvalue `xi` gives the fine multiplier `lambda = R(-dt xi)`
//! and coarse multiplier `mu = R_c(-k dt xi)`. All bounds are suprema over
//! modes of scalar expressions in `(lambda, mu)`.

use std::f64::consts::PI;

use faer::{c64, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CplxMat};
use crate::schemes::ButcherTableau;
use crate::spacetime::Relaxation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePair {
    pub xi: c64,
    pub lambda: c64,
    pub mu: c64,
}

pub fn mode_pairs(
    fine: &ButcherTableau,
    coarse: &ButcherTableau,
    xi: &[c64],
    dt: f64,
    k: usize,
) -> Result<Vec<ModePair>> {
    xi.iter()
        .map(|&x| {
            Ok(ModePair {
                xi: x,
                lambda: fine.stability_value(-x * dt)?,
                mu: coarse.stability_value(-x * (k as f64 * dt))?,
            })
        })
        .collect()
}

fn numerator(m: &ModePair, k: usize, relax: Relaxation) -> f64 {
    let lk = m.lambda.powi(k as i32);
    let base = (m.mu - lk).norm();
    match relax {
        Relaxation::F => base,
        Relaxation::FCF => base * lk.norm(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Finite-`N_c` bounds: `|mu - lambda^k| / sqrt((1 - |mu|)^2 + c pi^2 |mu| / N_c^2)`
/// with `c = 1` (lower) and `c = 1/6` (upper), FCF adding `|lambda|^k`.
pub fn finite_nc_bounds(
    modes: &[ModePair],
    k: usize,
    n_coarse: usize,
    relax: Relaxation,
) -> FiniteBounds {
    let nc2 = (n_coarse as f64).powi(2);
    let (mut lower, mut upper) = (0.0_f64, 0.0_f64);
    for m in modes {
        let num = numerator(m, k, relax);
        let a = m.mu.norm();
        let base = (1.0 - a).powi(2);
        lower = lower.max(num / (base + PI * PI * a / nc2).sqrt());
        upper = upper.max(num / (base + PI * PI * a / (6.0 * nc2)).sqrt());
    }
    FiniteBounds { lower, upper }
}

fn eval_mode(m: &ModePair, k: usize, relax: Relaxation) -> f64 {
    let num = numerator(m, k, relax);
    let a = m.mu.norm();
    if num == 0.0 {
        0.0
    } else if a >= 1.0 {
        f64::INFINITY
    } else {
        num / (1.0 - a)
    }
}

/// `sup |mu - lambda^k| / (1 - |mu|)`; `+inf` when a mode with `|mu| >= 1`
/// has a nonzero numerator.
pub fn eval_bound_limit(modes: &[ModePair], k: usize, relax: Relaxation) -> f64 {
    modes
        .iter()
        .map(|m| eval_mode(m, k, relax))
        .fold(0.0, f64::max)
}

/// `sqrt((1 - a^{2k}) / (1 - a^2))`, summed directly near `a = 1`.
pub fn single_it_factor(a: f64, k: usize) -> f64 {
    if (a - 1.0).abs() < 1e-6 {
        let a2 = a * a;
        let mut term = 1.0;
        let mut sum = 0.0;
        for _ in 0..k {
            sum += term;
            term *= a2;
        }
        sum.sqrt()
    } else {
        ((1.0 - a.powi(2 * k as i32)) / (1.0 - a * a)).sqrt()
    }
}

/// Single-iteration eigenvalue bound (`N_c -> infinity`).
pub fn single_it_eig(modes: &[ModePair], k: usize, relax: Relaxation) -> f64 {
    modes
        .iter()
        .map(|m| {
            let e = eval_mode(m, k, relax);
            if e == 0.0 {
                0.0
            } else {
                single_it_factor(m.lambda.norm(), k) * e
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    Eval,
    SingleIt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64, b: f64| a.is_finite() && b.is_finite() && b > a;
        if !ok(self.re_min, self.re_max) || !ok(self.im_min, self.im_max) {
            return Err(Error::Config(format!(
                "region {self:?} has zero or negative area"
            )));
        }
        Ok(())
    }
}

/// Row-major map over `z = dt xi`: row `j` is `im[j]`, column `i` is `re[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMap {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub values: Vec<f64>,
    pub lambda_k: Vec<c64>,
    pub mu: Vec<c64>,
    /// Points where either stability function has a pole.
    pub pole: Vec<bool>,
}

impl ComplexMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.re.len() + col]
    }
}

/// Points `c + s t_j` with `t` symmetric about zero, so a region centred on
/// the real axis samples exact conjugates.
fn centred_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let c = 0.5 * (hi + lo);
    let s = 0.5 * (hi - lo);
    let d = (n - 1) as f64;
    (0..n).map(|j| c + s * ((2 * j) as f64 - d) / d).collect()
}

pub fn complex_map(
    fine: &ButcherTableau,
    coarse: &ButcherTableau,
    k: usize,
    relax: Relaxation,
    kind: BoundKind,
    region: Region,
    resolution: (usize, usize),
) -> Result<ComplexMap> {
    region.validate()?;
    let (nr, ni) = resolution;
    if nr < 16 || ni < 16 {
        return Err(Error::Config(format!(
            "map resolution must be at least 16 per axis, got {nr}x{ni}"
        )));
    }
    let re = centred_axis(region.re_min, region.re_max, nr);
    let im = centred_axis(region.im_min, region.im_max, ni);
    let cells: Vec<(f64, c64, c64, bool)> = (0..ni * nr)
        .into_par_iter()
        .map(|p| {
            let z = c64::new(re[p % nr], im[p / nr]);
            match (
                fine.stability_value(-z),
                coarse.stability_value(-z * k as f64),
            ) {
                (Ok(lambda), Ok(mu)) => {
                    let m = ModePair { xi: z, lambda, mu };
                    let v = match kind {
                        BoundKind::Eval => eval_bound_limit(&[m], k, relax),
                        BoundKind::SingleIt => single_it_eig(&[m], k, relax),
                    };
                    (v, lambda.powi(k as i32), mu, false)
                }
                _ => (
                    f64::NAN,
                    c64::new(f64::NAN, f64::NAN),
                    c64::new(f64::NAN, f64::NAN),
                    true,
                ),
            }
        })
        .collect();
    let mut out = ComplexMap {
        re,
        im,
        values: Vec::with_capacity(cells.len()),
        lambda_k: Vec::with_capacity(cells.len()),
        mu: Vec::with_capacity(cells.len()),
        pole: Vec::with_capacity(cells.len()),
    };
    for (v, lk, mu, pole) in cells {
        out.values.push(v);
        out.lambda_k.push(lk);
        out.mu.push(mu);
        out.pole.push(pole);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trust {
    High,
    Medium,
    Low,
}

/// Condition above which an eigenvector matrix is treated as defective.
pub const DEFECTIVE_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormFactors {
    pub cond_u: f64,
    /// Condition of `U^* U` after whitening its conjugate-pair 2x2 blocks;
    /// 1 when all ill-conditioning sits inside the pairs.
    pub pair_whitened_cond: Option<f64>,
    pub defective: bool,
    pub trust: Trust,
}

fn classify(cond_u: f64, pair: Option<f64>) -> (bool, Trust) {
    let defective = !cond_u.is_finite() || cond_u > DEFECTIVE_CONDITION;
    let effective = pair.map_or(cond_u, |p| p.min(cond_u));
    let trust = if effective <= 1e3 {
        Trust::High
    } else if !defective {
        Trust::Medium
    } else {
        Trust::Low
    };
    (defective, trust)
}

/// Conditioning of a dense eigenvector matrix. `pairs`, when given, lists
/// index pairs of conjugate eigenvectors to whiten jointly.
pub fn weighted_norm_factors(
    u: &CplxMat,
    pairs: Option<&[(usize, usize)]>,
) -> Result<WeightedNormFactors> {
    let s = linalg::singular_values(u.as_ref())?;
    let cond_u = match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    };
    let pair_whitened_cond = match pairs {
        None => None,
        Some(pairs) => {
            let n = u.ncols();
            let g = u.adjoint() * u;
            let mut w = Mat::<c64>::identity(n, n);
            let mut seen = vec![false; n];
            for &(a, b) in pairs {
                let blk = Mat::from_fn(2, 2, |i, j| g[([a, b][i], [a, b][j])]);
                let inv_sqrt =
                    linalg::inverse(linalg::hpd_sqrt(blk.as_ref())?.as_ref(), "pair block")?;
                for i in 0..2 {
                    for j in 0..2 {
                        w[([a, b][i], [a, b][j])] = inv_sqrt[(i, j)];
                    }
                }
                seen[a] = true;
                seen[b] = true;
            }
            for i in (0..n).filter(|&i| !seen[i]) {
                w[(i, i)] = c64::new(1.0 / g[(i, i)].re.sqrt(), 0.0);
            }
            let white = &w * &g * &w;
            let sv = linalg::singular_values(white.as_ref())?;
            Some(sv[0] / sv[sv.len() - 1])
        }
    };
    let (defective, trust) = classify(cond_u, pair_whitened_cond);
    Ok(WeightedNormFactors {
        cond_u,
        pair_whitened_cond,
        defective,
        trust,
    })
}

/// Closed-form factors for the wave eigenvectors: `U^* U` has eigenvalues
/// `2 zeta/(1+zeta)` and `2/(1+zeta)` and is block diagonal over pairs.
pub fn wave_weighted_norm_factors(zeta: &[f64]) -> WeightedNormFactors {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for &z in zeta {
        for e in [2.0 * z / (1.0 + z), 2.0 / (1.0 + z)] {
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    let cond_u = (hi / lo).sqrt();
    let (defective, trust) = classify(cond_u, Some(1.0));
    WeightedNormFactors {
        cond_u,
        pair_whitened_cond: Some(1.0),
        defective,
        trust,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub n_coarse: usize,
    pub relax: Relaxation,
    pub eval_bound: f64,
    pub eval_divergent: bool,
    pub th3_lower: f64,
    pub th3_upper: f64,
    pub single_it_f: f64,
    pub single_it_fcf: f64,
    pub gsvd_f: Option<f64>,
    pub gsvd_fcf: Option<f64>,
}

impl BoundReport {
    pub fn from_modes(modes: &[ModePair], k: usize, n_coarse: usize, relax: Relaxation) -> Self {
        let th3 = finite_nc_bounds(modes, k, n_coarse, relax);
        let eval_bound = eval_bound_limit(modes, k, relax);
        Self {
            k,
            n_coarse,
            relax,
            eval_bound,
            eval_divergent: eval_bound.is_infinite(),
            th3_lower: th3.lower,
            th3_upper: th3.upper,
            single_it_f: single_it_eig(modes, k, Relaxation::F),
            single_it_fcf: single_it_eig(modes, k, Relaxation::FCF),
            gsvd_f: None,
            gsvd_fcf: None,
        }
    }

    /// Single-iteration value for the report's relaxation.
    pub fn single_it(&self) -> f64 {
        match self.relax {
            Relaxation::F => self.single_it_f,
            Relaxation::FCF => self.single_it_fcf,
        }
    }

    /// `single_it >= eval >= upper >= lower`.
    pub fn ordering_holds(&self) -> bool {
        self.single_it() >= self.eval_bound
            && self.eval_bound >= self.th3_upper
            && self.th3_upper >= self.th3_lower
    }
}
