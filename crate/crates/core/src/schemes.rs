//! Runge-Kutta schemes for the linear system `u' = -L u`.
//!
//! With this sign convention a spatial eigenvalue `xi` of `L` is damped when
//! `Re(xi) > 0`, and one step of size `dt` multiplies the mode by
//! `R(-dt * xi)` where `R` is the scheme's stability function.

use std::path::Path;
use std::sync::OnceLock;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CheckedLu, RealMat};

const REGISTRY_TOML: &str = include_str!("../data/schemes.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityClass {
    #[serde(rename = "L-stable")]
    LStable,
    #[serde(rename = "A-stable")]
    AStable,
    #[serde(rename = "explicit")]
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButcherTableau {
    pub name: String,
    pub stages: usize,
    pub order: usize,
    pub class: StabilityClass,
    /// Stage matrix, row-major.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    #[allow(dead_code)]
    version: u32,
    scheme: Vec<ButcherTableau>,
}

impl ButcherTableau {
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stages + j]
    }

    pub fn is_explicit(&self) -> bool {
        (0..self.stages).all(|i| (i..self.stages).all(|j| self.a(i, j) == 0.0))
    }

    /// Lower triangular stage matrix (explicit, SDIRK, ESDIRK).
    pub fn is_diagonally_implicit(&self) -> bool {
        (0..self.stages).all(|i| (i + 1..self.stages).all(|j| self.a(i, j) == 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stages;
        let bad = |reason: String| Error::InvalidTableau {
            name: self.name.clone(),
            reason,
        };
        if s == 0 {
            return Err(bad("zero stages".into()));
        }
        if self.a.len() != s * s || self.b.len() != s || self.c.len() != s {
            return Err(bad(format!(
                "expected {} stage entries and {s} weights/nodes, got {}/{}/{}",
                s * s,
                self.a.len(),
                self.b.len(),
                self.c.len()
            )));
        }
        for i in 0..s {
            let row: f64 = (0..s).map(|j| self.a(i, j)).sum();
            if (row - self.c[i]).abs() > 1e-14 {
                return Err(bad(format!(
                    "row {i} of A sums to {row}, node is {}",
                    self.c[i]
                )));
            }
        }
        let total: f64 = self.b.iter().sum();
        if (total - 1.0).abs() > 1e-14 {
            return Err(bad(format!("weights sum to {total}")));
        }
        if self.class == StabilityClass::Explicit && !self.is_explicit() {
            return Err(bad(
                "declared explicit but A is not strictly lower triangular".into(),
            ));
        }
        Ok(())
    }

    /// `R(z) = 1 + z b^T (I - zA)^{-1} 1`.
    pub fn stability_value(&self, z: c64) -> Result<c64> {
        let s = self.stages;
        let one = c64::new(1.0, 0.0);
        let y: Vec<c64> = if self.is_diagonally_implicit() {
            let mut y = vec![one; s];
            for i in 0..s {
                let mut acc = one;
                for (j, yj) in y.iter().enumerate().take(i) {
                    acc += z * self.a(i, j) * yj;
                }
                let d = one - z * self.a(i, i);
                if d.norm() <= 4.0 * f64::EPSILON * (1.0 + (z * self.a(i, i)).norm()) {
                    return Err(Error::StabilityPole { re: z.re, im: z.im });
                }
                y[i] = acc / d;
            }
            y
        } else {
            let m = Mat::from_fn(s, s, |i, j| {
                let delta = if i == j { one } else { c64::new(0.0, 0.0) };
                delta - z * self.a(i, j)
            });
            let lu = CheckedLu::new(m.as_ref(), "I - zA")
                .map_err(|_| Error::StabilityPole { re: z.re, im: z.im })?;
            lu.solve_vec(&vec![one; s])
        };
        let by: c64 = self.b.iter().zip(&y).map(|(b, yi)| yi * *b).sum();
        Ok(one + z * by)
    }

    /// Numerator and denominator of `R = P/Q` as real polynomial coefficients
    /// (lowest degree first), from `Q(z) = det(I - zA)` and
    /// `P(z) = det(I - z(A - 1 b^T))`.
    pub fn stability_polynomials(&self) -> StabilityPolynomials {
        let s = self.stages;
        let a = |i: usize, j: usize| self.a(i, j);
        let shifted = |i: usize, j: usize| self.a(i, j) - self.b[j];
        StabilityPolynomials {
            p: det_one_minus_z(s, shifted),
            q: det_one_minus_z(s, a),
        }
    }

    /// Matrix form of one step: `Phi = R(-dt L)`, obtained by running the
    /// stage equations on the columns of the identity.
    pub fn propagator_matrix(&self, l: MatRef<'_, f64>, dt: f64) -> Result<RealMat> {
        if l.nrows() != l.ncols() {
            return Err(Error::Dimension(format!(
                "spatial operator must be square, got {}x{}",
                l.nrows(),
                l.ncols()
            )));
        }
        if !self.is_diagonally_implicit() {
            return Err(Error::InvalidTableau {
                name: self.name.clone(),
                reason: "matrix propagator requires a lower triangular stage matrix".into(),
            });
        }
        let n = l.nrows();
        let s = self.stages;
        let mut factors: Vec<(f64, CheckedLu<f64>)> = Vec::new();
        let mut stages: Vec<RealMat> = Vec::with_capacity(s);
        for i in 0..s {
            // U_i = I + dt sum_{j<i} a_ij K_j ;  (I + dt a_ii L) K_i = -L U_i
            let mut u = Mat::<f64>::identity(n, n);
            for (j, kj) in stages.iter().enumerate() {
                let w = dt * self.a(i, j);
                if w != 0.0 {
                    u += kj * faer::Scale(w);
                }
            }
            let rhs = -(l * &u);
            let aii = self.a(i, i);
            let ki = if aii == 0.0 {
                rhs
            } else {
                let pos = match factors.iter().position(|(v, _)| *v == aii) {
                    Some(p) => p,
                    None => {
                        let m = Mat::<f64>::identity(n, n) + l * faer::Scale(dt * aii);
                        let lu = CheckedLu::new(m.as_ref(), "stage system")
                            .map_err(|_| Error::SingularStage { stage: i })?;
                        factors.push((aii, lu));
                        factors.len() - 1
                    }
                };
                factors[pos].1.solve(rhs.as_ref())
            };
            stages.push(ki);
        }
        let mut phi = Mat::<f64>::identity(n, n);
        for (bi, ki) in self.b.iter().zip(&stages) {
            if *bi != 0.0 {
                phi += ki * faer::Scale(dt * bi);
            }
        }
        Ok(phi)
    }
}

/// Coefficients of `det(I - z M)` for an `s x s` matrix `M`, by
/// Faddeev-LeVerrier on the characteristic polynomial of `M`.
fn det_one_minus_z(s: usize, m: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    // det(tI - M) = t^s + c_1 t^{s-1} + ... + c_s  =>  det(I - zM) = 1 + c_1 z + ... + c_s z^s
    let mm = Mat::from_fn(s, s, m);
    let mut coeffs = vec![1.0];
    let mut big_m = Mat::<f64>::zeros(s, s);
    let mut c_prev = 1.0;
    for kk in 1..=s {
        big_m = &mm * &big_m + Mat::<f64>::identity(s, s) * faer::Scale(c_prev);
        let am = &mm * &big_m;
        let tr: f64 = (0..s).map(|i| am[(i, i)]).sum();
        let ck = -tr / kk as f64;
        coeffs.push(ck);
        c_prev = ck;
    }
    while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.abs() < 1e-15) {
        coeffs.pop();
    }
    coeffs
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityPolynomials {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl StabilityPolynomials {
    pub fn eval(&self, z: c64) -> c64 {
        horner(&self.p, z) / horner(&self.q, z)
    }
}

fn horner(coeffs: &[f64], z: c64) -> c64 {
    coeffs
        .iter()
        .rev()
        .fold(c64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

pub fn parse_registry(text: &str) -> Result<Vec<ButcherTableau>> {
    let file: RegistryFile = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
            .unwrap_or(0);
        Error::SchemeData {
            line,
            reason: e.message().to_string(),
        }
    })?;
    for t in &file.scheme {
        t.validate()?;
    }
    Ok(file.scheme)
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<Vec<ButcherTableau>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_registry(&text)
}

/// The built-in schemes.
pub fn scheme_registry() -> &'static [ButcherTableau] {
    static REGISTRY: OnceLock<Vec<ButcherTableau>> = OnceLock::new();
    REGISTRY.get_or_init(|| parse_registry(REGISTRY_TOML).expect("built-in scheme table is valid"))
}

/// Case-insensitive lookup in the built-in registry.
pub fn lookup(name: &str) -> Result<&'static ButcherTableau> {
    let reg = scheme_registry();
    reg.iter()
        .find(|t| t.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::UnknownScheme {
            name: name.to_string(),
            available: reg
                .iter()
                .map(|t| t.name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        })
}

pub fn stability_value(scheme: &ButcherTableau, z: c64) -> Result<c64> {
    scheme.stability_value(z)
}

pub fn propagator_matrix(scheme: &ButcherTableau, l: MatRef<'_, f64>, dt: f64) -> Result<RealMat> {
    scheme.propagator_matrix(l, dt)
}
