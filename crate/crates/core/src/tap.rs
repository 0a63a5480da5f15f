//! Temporal approximation property (TAP) constants.
//!
//! For an angle `x` the GSVD value is `sigma_max((Psi - Phi^k)(I - e^{ix} Psi)^{-1})`,
//! with a trailing `Phi^k` under FCF-relaxation. For real operators the
//! value is symmetric about `x = pi`, so scans cover `[0, pi]` only.

use std::f64::consts::PI;

use faer::{c64, Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CheckedLu, CplxMat};
use crate::prop_norms::PropagatorPair;
use crate::spacetime::Relaxation;

pub const DEFAULT_SAMPLES: usize = 65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapScan {
    pub relax: Relaxation,
    pub x: Vec<f64>,
    /// `NaN` where the resolvent was singular.
    pub values: Vec<f64>,
    pub constant: f64,
    pub argmax_x: f64,
    /// Angles skipped because `I - e^{ix} Psi` was singular.
    pub singular_x: Vec<f64>,
}

/// Uniform grid of `samples` angles on `[0, pi]`.
pub fn x_grid(samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|i| PI * i as f64 / (samples - 1) as f64)
        .collect()
}

fn cis(x: f64) -> c64 {
    c64::new(x.cos(), x.sin())
}

/// `(I - e^{ix} Psi)^{-1}` as a complex matrix.
fn resolvent(psi: &CplxMat, x: f64) -> Result<CplxMat> {
    let n = psi.nrows();
    let r = Mat::<c64>::identity(n, n) - psi * faer::Scale(cis(x));
    linalg::inverse(r.as_ref(), "resolvent").map_err(|_| Error::SingularResolvent { x })
}

struct ComplexPair {
    diff: CplxMat,
    psi: CplxMat,
    phi_k: CplxMat,
}

impl ComplexPair {
    fn new(pair: &PropagatorPair) -> Self {
        Self {
            diff: linalg::to_complex((&pair.psi - &pair.phi_k).as_ref()),
            psi: linalg::to_complex(pair.psi.as_ref()),
            phi_k: linalg::to_complex(pair.phi_k.as_ref()),
        }
    }

    fn value(&self, x: f64, relax: Relaxation, right: Option<&CplxMat>) -> Result<f64> {
        let mut m = &self.diff * resolvent(&self.psi, x)?;
        if relax == Relaxation::FCF && right.is_none() {
            m = m * &self.phi_k;
        }
        if let Some(w) = right {
            m = m * w;
        }
        linalg::sigma_max(m.as_ref())
    }
}

pub fn tap_value_at(pair: &PropagatorPair, x: f64, relax: Relaxation) -> Result<f64> {
    ComplexPair::new(pair).value(x, relax, None)
}

fn scan(
    cp: &ComplexPair,
    relax: Relaxation,
    xs: Vec<f64>,
    right: Option<&CplxMat>,
) -> Result<TapScan> {
    let results: Vec<Result<f64>> = xs.par_iter().map(|&x| cp.value(x, relax, right)).collect();
    let mut values = Vec::with_capacity(xs.len());
    let mut singular_x = Vec::new();
    for (x, r) in xs.iter().zip(results) {
        match r {
            Ok(v) => values.push(v),
            Err(Error::SingularResolvent { .. }) => {
                singular_x.push(*x);
                values.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    let (mut constant, mut argmax_x) = (f64::NEG_INFINITY, f64::NAN);
    for (x, v) in xs.iter().zip(&values) {
        if *v > constant {
            constant = *v;
            argmax_x = *x;
        }
    }
    if !constant.is_finite() && constant < 0.0 {
        return Err(Error::SingularResolvent { x: xs[0] });
    }
    Ok(TapScan {
        relax,
        x: xs,
        values,
        constant,
        argmax_x,
        singular_x,
    })
}

/// Values on an arbitrary set of angles.
pub fn tap_scan_at(pair: &PropagatorPair, relax: Relaxation, xs: Vec<f64>) -> Result<TapScan> {
    scan(&ComplexPair::new(pair), relax, xs, None)
}

/// Max-over-grid GSVD value on `samples` points of `[0, pi]`.
pub fn tap_constant(pair: &PropagatorPair, relax: Relaxation, samples: usize) -> Result<TapScan> {
    if samples < 2 {
        return Err(Error::Config(format!(
            "need at least 2 x samples, got {samples}"
        )));
    }
    tap_scan_at(pair, relax, x_grid(samples))
}

fn real_apply(m: MatRef<'_, f64>, v: &[c64]) -> Vec<c64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| v[j] * m[(i, j)]).sum())
        .collect()
}

fn norm_sq(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `min_x ||(I - e^{ix} Psi) v||^2 = ||v||^2 + ||Psi v||^2 - 2 |<Psi v, v>|`.
/// With `phi_k` given, both vectors are first mapped through `Phi^{-k}`.
pub fn lemma1_min(psi: MatRef<'_, f64>, v: &[c64], phi_k: Option<MatRef<'_, f64>>) -> Result<f64> {
    let pv = real_apply(psi, v);
    let (a, b) = match phi_k {
        None => (v.to_vec(), pv),
        Some(pk) => {
            let lu = CheckedLu::new(linalg::to_complex(pk).as_ref(), "Phi^k")?;
            (lu.solve_vec(v), lu.solve_vec(&pv))
        }
    };
    Ok(norm_sq(&a) + norm_sq(&b) - 2.0 * linalg::inner(&b, &a).norm())
}

/// Brute-force minimum of `||(I - e^{ix} Psi) v||^2` over a uniform grid on `[0, 2 pi)`.
pub fn brute_force_min(psi: MatRef<'_, f64>, v: &[c64], samples: usize) -> f64 {
    let pv = real_apply(psi, v);
    (0..samples)
        .map(|i| {
            let e = cis(2.0 * PI * i as f64 / samples as f64);
            v.iter()
                .zip(&pv)
                .map(|(a, b)| (a - e * b).norm_sqr())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Restriction {
    /// `x in {0, pi}`.
    Symmetric,
    /// `x in {pi/2, 3 pi/2}`.
    Skew,
}

/// The TAP minimum restricted to two angles, evaluated by the sign case
/// split rather than the symmetric/skew closed form.
pub fn tap_restricted(psi: MatRef<'_, f64>, v: &[c64], variant: Restriction) -> f64 {
    let pv = real_apply(psi, v);
    let ip = linalg::inner(&pv, v);
    let dist = |e: c64| {
        v.iter()
            .zip(&pv)
            .map(|(a, b)| (a - e * b).norm_sqr())
            .sum::<f64>()
    };
    match variant {
        // Re<Psi v, v> <= 0 selects I + Psi, otherwise I - Psi
        Restriction::Symmetric => {
            if ip.re <= 0.0 {
                dist(c64::new(-1.0, 0.0))
            } else {
                dist(c64::new(1.0, 0.0))
            }
        }
        // e^{ix} = -i gives I + i Psi, e^{ix} = i gives I - i Psi
        Restriction::Skew => {
            if ip.im >= 0.0 {
                dist(c64::new(0.0, -1.0))
            } else {
                dist(c64::new(0.0, 1.0))
            }
        }
    }
}

/// Closed forms `||v||^2 + ||Psi v||^2 - 2 |<Psi_s v, v>|` (or `Psi_k`).
pub fn tap_restricted_closed_form(psi: MatRef<'_, f64>, v: &[c64], variant: Restriction) -> f64 {
    let n = psi.nrows();
    let sign = match variant {
        Restriction::Symmetric => 1.0,
        Restriction::Skew => -1.0,
    };
    let part = Mat::from_fn(n, n, |i, j| 0.5 * (psi[(i, j)] + sign * psi[(j, i)]));
    let pv = real_apply(psi, v);
    let partv = real_apply(part.as_ref(), v);
    norm_sq(v) + norm_sq(&pv) - 2.0 * linalg::inner(&partv, v).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientGap {
    /// `||(Psi - Phi^k) v||`
    pub lhs: f64,
    /// `||v|| - ||Psi v||`
    pub rhs_f: f64,
    /// `||(Psi - Phi^k) Phi^k v||`
    pub lhs_fcf: f64,
    /// `||v|| - ||Phi^{-k} Psi Phi^k v||`
    pub rhs_fcf: f64,
}

/// Quantities of the sufficient TAP conditions; a constant `phi` satisfies
/// them when `lhs <= phi * rhs_f` (and likewise for FCF).
pub fn sufficient_condition_gap(pair: &PropagatorPair, v: &[c64]) -> Result<SufficientGap> {
    let diff = &pair.psi - &pair.phi_k;
    let pv = real_apply(pair.psi.as_ref(), v);
    let pkv = real_apply(pair.phi_k.as_ref(), v);
    let lu = CheckedLu::new(linalg::to_complex(pair.phi_k.as_ref()).as_ref(), "Phi^k")?;
    let inner = lu.solve_vec(&real_apply(pair.psi.as_ref(), &pkv));
    Ok(SufficientGap {
        lhs: norm_sq(&real_apply(diff.as_ref(), v)).sqrt(),
        rhs_f: norm_sq(v).sqrt() - norm_sq(&pv).sqrt(),
        lhs_fcf: norm_sq(&real_apply(diff.as_ref(), &pkv)).sqrt(),
        rhs_fcf: norm_sq(v).sqrt() - norm_sq(&inner).sqrt(),
    })
}

/// `W = sqrt(sum_l Phi^l (Phi^l)^T)` over `l = 0..k-1` (F) or `l = k..2k-1` (FCF).
pub fn weight_matrix(pair: &PropagatorPair, relax: Relaxation) -> Result<CplxMat> {
    let n = pair.n();
    let k = pair.k;
    let range = match relax {
        Relaxation::F => 0..k,
        Relaxation::FCF => k..2 * k,
    };
    let mut power = linalg::matrix_power(pair.phi.as_ref(), range.start);
    let mut gram = Mat::<f64>::zeros(n, n);
    for _ in range {
        gram += &power * power.transpose();
        power = &pair.phi * &power;
    }
    linalg::hpd_sqrt(linalg::to_complex(gram.as_ref()).as_ref())
}

/// `max_x sigma_max((Psi - Phi^k)(I - e^{ix} Psi)^{-1} W)` on a grid over `[0, pi]`.
pub fn single_iteration_tap(
    pair: &PropagatorPair,
    relax: Relaxation,
    samples: usize,
) -> Result<TapScan> {
    if samples < 2 {
        return Err(Error::Config(format!(
            "need at least 2 x samples, got {samples}"
        )));
    }
    single_iteration_tap_at(pair, relax, x_grid(samples))
}

/// Single-iteration values on an arbitrary set of angles.
pub fn single_iteration_tap_at(
    pair: &PropagatorPair,
    relax: Relaxation,
    xs: Vec<f64>,
) -> Result<TapScan> {
    let w = weight_matrix(pair, relax)?;
    scan(&ComplexPair::new(pair), relax, xs, Some(&w))
}
