//! Spatial operators for the two model problems: 2D advection-diffusion on
//! the unit square and the 2D wave equation written as a first-order system.
//!
//! Both are returned as dense `L` with the semi-discrete system `u' = -L u`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CplxMat, RealMat};

/// Largest operator dimension for which eigendata is computed densely.
pub const EIGEN_DIM_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityField {
    /// Constant translation `(sqrt(2/3), sqrt(1/3))`.
    V1,
    /// `(cos^2(pi y), cos^2(pi x))`.
    V2,
    /// Rigid rotation `(y pi/2, -x pi/2)` about the centre of the square.
    V3,
    /// No transport; leaves pure diffusion.
    Zero,
}

impl VelocityField {
    /// Velocity at a point of the unit square.
    pub fn at(self, x: f64, y: f64) -> (f64, f64) {
        match self {
            VelocityField::V1 => ((2.0_f64 / 3.0).sqrt(), (1.0_f64 / 3.0).sqrt()),
            VelocityField::V2 => ((PI * y).cos().powi(2), (PI * x).cos().powi(2)),
            VelocityField::V3 => {
                // measured from the centre so the flow closes on itself
                let (xc, yc) = (x - 0.5, y - 0.5);
                (yc * PI / 2.0, -xc * PI / 2.0)
            }
            VelocityField::Zero => (0.0, 0.0),
        }
    }

    pub fn all() -> [VelocityField; 3] {
        [VelocityField::V1, VelocityField::V2, VelocityField::V3]
    }
}

impl fmt::Display for VelocityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VelocityField::V1 => "v1",
            VelocityField::V2 => "v2",
            VelocityField::V3 => "v3",
            VelocityField::Zero => "zero",
        };
        f.write_str(s)
    }
}

impl FromStr for VelocityField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" | "1" => Ok(VelocityField::V1),
            "v2" | "2" => Ok(VelocityField::V2),
            "v3" | "3" => Ok(VelocityField::V3),
            "zero" | "0" => Ok(VelocityField::Zero),
            other => Err(Error::Config(format!(
                "unknown velocity field `{other}` (expected v1, v2, v3 or zero)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ProblemKind {
    AdvectionDiffusion { field: VelocityField, alpha: f64 },
    WaveFirstOrder { c2: f64 },
}

impl ProblemKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProblemKind::AdvectionDiffusion { .. } => "advection_diffusion",
            ProblemKind::WaveFirstOrder { .. } => "wave_first_order",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mesh {
    /// Cells per dimension (advection) or grid points per dimension including
    /// the boundary (wave).
    pub points_per_dim: usize,
    pub h: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct Eigendata {
    pub xi: Vec<c64>,
    /// Unit-norm eigenvectors as columns.
    pub u: CplxMat,
}

#[derive(Debug, Clone)]
pub struct SpatialProblem {
    pub l: RealMat,
    pub mesh: Mesh,
    pub kind: ProblemKind,
    pub eigendata: Option<Eigendata>,
}

impl SpatialProblem {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }
}

/// Dense eigendecomposition with unit-norm columns.
pub fn compute_eigendata(l: &RealMat) -> Result<Eigendata> {
    let n = l.nrows();
    if n > EIGEN_DIM_LIMIT {
        return Err(Error::SizeGuard {
            limit: EIGEN_DIM_LIMIT,
            requested: n,
        });
    }
    let evd = l
        .eigen()
        .map_err(|e| Error::Decomposition(format!("eigendecomposition: {e:?}")))?;
    let s = evd.S().column_vector();
    let xi: Vec<c64> = (0..n).map(|i| s[i]).collect();
    let mut u = evd.U().to_owned();
    for j in 0..n {
        let norm = (0..n).map(|i| u[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..n {
                u[(i, j)] /= norm;
            }
        }
    }
    Ok(Eigendata { xi, u })
}

/// Upwind advection plus 5-point diffusion on `n x n` cells of the unit
/// square, without eigendata.
pub fn advection_diffusion_operator(n: usize, field: VelocityField, alpha: f64) -> Result<RealMat> {
    if n < 4 {
        return Err(Error::InvalidGrid {
            size: n,
            reason: "need at least 4 cells per dimension".into(),
        });
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Config(format!(
            "diffusion coefficient must be >= 0, got {alpha}"
        )));
    }
    let h = 1.0 / n as f64;
    let dim = n * n;
    let idx = |i: usize, j: usize| i * n + j;
    let d = alpha / (h * h);
    let mut l = Mat::<f64>::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let (vx, vy) = field.at(x, y);
            let r = idx(i, j);
            // first-order upwind; the missing inflow neighbour is a zero ghost
            if vx > 0.0 {
                l[(r, r)] += vx / h;
                if i > 0 {
                    l[(r, idx(i - 1, j))] -= vx / h;
                }
            } else if vx < 0.0 {
                l[(r, r)] -= vx / h;
                if i + 1 < n {
                    l[(r, idx(i + 1, j))] += vx / h;
                }
            }
            if vy > 0.0 {
                l[(r, r)] += vy / h;
                if j > 0 {
                    l[(r, idx(i, j - 1))] -= vy / h;
                }
            } else if vy < 0.0 {
                l[(r, r)] -= vy / h;
                if j + 1 < n {
                    l[(r, idx(i, j + 1))] += vy / h;
                }
            }
            if d > 0.0 {
                // ghost value -u puts the zero Dirichlet value on the face
                l[(r, r)] += 4.0 * d;
                let nbrs = [
                    (i.checked_sub(1), Some(j)),
                    ((i + 1 < n).then_some(i + 1), Some(j)),
                    (Some(i), j.checked_sub(1)),
                    (Some(i), (j + 1 < n).then_some(j + 1)),
                ];
                for nb in nbrs {
                    match nb {
                        (Some(a), Some(b)) => l[(r, idx(a, b))] -= d,
                        _ => l[(r, r)] += d,
                    }
                }
            }
        }
    }
    Ok(l)
}

/// Advection-diffusion problem; eigendata is attached when `n^2` is within
/// [`EIGEN_DIM_LIMIT`].
pub fn build_advection_diffusion(
    n: usize,
    field: VelocityField,
    alpha: f64,
) -> Result<SpatialProblem> {
    let l = advection_diffusion_operator(n, field, alpha)?;
    let eigendata = if n * n <= EIGEN_DIM_LIMIT {
        Some(compute_eigendata(&l)?)
    } else {
        None
    };
    Ok(SpatialProblem {
        l,
        mesh: Mesh {
            points_per_dim: n,
            h: 1.0 / n as f64,
            lower: 0.0,
            upper: 1.0,
        },
        kind: ProblemKind::AdvectionDiffusion { field, alpha },
        eigendata,
    })
}

fn check_wave_grid(m: usize) -> Result<()> {
    if m < 5 {
        return Err(Error::InvalidGrid {
            size: m,
            reason: "need at least 5 points per dimension".into(),
        });
    }
    Ok(())
}

fn wave_h(m: usize) -> f64 {
    2.0 * PI / (m - 1) as f64
}

/// First-order wave operator `L = [[0, -I], [-c^2 Lap_h, 0]]` on `(0, 2 pi)^2`
/// with `m` points per dimension (boundary included, so `(m-2)^2` unknowns
/// per field).
pub fn build_wave_first_order(m: usize, c2: f64) -> Result<SpatialProblem> {
    check_wave_grid(m)?;
    let h = wave_h(m);
    let q = m - 2;
    let n = q * q;
    let s = c2 / (h * h);
    let mut l = Mat::<f64>::zeros(2 * n, 2 * n);
    for r in 0..n {
        l[(r, n + r)] = -1.0;
    }
    for i in 0..q {
        for j in 0..q {
            let r = i * q + j;
            l[(n + r, r)] = 4.0 * s;
            if i > 0 {
                l[(n + r, r - q)] = -s;
            }
            if i + 1 < q {
                l[(n + r, r + q)] = -s;
            }
            if j > 0 {
                l[(n + r, r - 1)] = -s;
            }
            if j + 1 < q {
                l[(n + r, r + 1)] = -s;
            }
        }
    }
    Ok(SpatialProblem {
        l,
        mesh: Mesh {
            points_per_dim: m,
            h,
            lower: 0.0,
            upper: 2.0 * PI,
        },
        kind: ProblemKind::WaveFirstOrder { c2 },
        eigendata: None,
    })
}

/// Orthonormal 1D Dirichlet sine basis: column `p-1` is
/// `sqrt(2/M) sin(p pi i / M)`, `i = 1..M-1`, with `M = m - 1`.
pub fn sine_basis(m: usize) -> RealMat {
    let big_m = (m - 1) as f64;
    let q = m - 2;
    let scale = (2.0 / big_m).sqrt();
    Mat::from_fn(q, q, |i, p| {
        scale * (PI * (p + 1) as f64 * (i + 1) as f64 / big_m).sin()
    })
}

/// Eigenvalues `zeta = c^2 lambda(-Lap_h)` in the ordering `(p-1)(m-2) + (q-1)`
/// that matches the tensor-product sine eigenvectors.
pub fn wave_zeta(m: usize, c2: f64) -> Result<Vec<f64>> {
    check_wave_grid(m)?;
    let h = wave_h(m);
    let big_m = (m - 1) as f64;
    let q = m - 2;
    let one_d: Vec<f64> = (1..=q)
        .map(|p| (4.0 / (h * h)) * (p as f64 * PI / (2.0 * big_m)).sin().powi(2))
        .collect();
    let mut zeta = Vec::with_capacity(q * q);
    for a in &one_d {
        for b in &one_d {
            zeta.push(c2 * (a + b));
        }
    }
    Ok(zeta)
}

#[derive(Debug, Clone)]
pub struct WaveEigensystem {
    pub zeta: Vec<f64>,
    /// Ordered as conjugate pairs: `xi[2l] = -i sqrt(zeta_l)`, `xi[2l+1] = +i sqrt(zeta_l)`.
    pub xi: Vec<c64>,
    /// Columns `(1+zeta)^{-1/2} [w; +-i sqrt(zeta) w]` in the same order as `xi`.
    pub u: CplxMat,
    /// Analytic `U^* U` diagonal 2x2 blocks, `[[1, g], [g, 1]]` with `g = (1-zeta)/(1+zeta)`.
    pub gram_blocks: Vec<[[f64; 2]; 2]>,
}

/// Eigenpairs of the first-order wave operator from the Laplacian's sine
/// eigenvectors.
pub fn wave_eigensystem(problem: &SpatialProblem) -> Result<WaveEigensystem> {
    let c2 = match problem.kind {
        ProblemKind::WaveFirstOrder { c2 } => c2,
        other => {
            return Err(Error::KindMismatch {
                expected: "wave_first_order",
                found: other.label(),
            })
        }
    };
    let m = problem.mesh.points_per_dim;
    let zeta = wave_zeta(m, c2)?;
    let s = sine_basis(m);
    let q = m - 2;
    let n = q * q;
    let mut u = Mat::<c64>::zeros(2 * n, 2 * n);
    let mut xi = Vec::with_capacity(2 * n);
    let mut gram_blocks = Vec::with_capacity(n);
    for p in 0..q {
        for r in 0..q {
            let ell = p * q + r;
            let z = zeta[ell];
            let root = z.sqrt();
            let norm = 1.0 / (1.0 + z).sqrt();
            for i in 0..q {
                for j in 0..q {
                    let w = s[(i, p)] * s[(j, r)] * norm;
                    let row = i * q + j;
                    u[(row, 2 * ell)] = c64::new(w, 0.0);
                    u[(n + row, 2 * ell)] = c64::new(0.0, root * w);
                    u[(row, 2 * ell + 1)] = c64::new(w, 0.0);
                    u[(n + row, 2 * ell + 1)] = c64::new(0.0, -root * w);
                }
            }
            xi.push(c64::new(0.0, -root));
            xi.push(c64::new(0.0, root));
            let g = (1.0 - z) / (1.0 + z);
            gram_blocks.push([[1.0, g], [g, 1.0]]);
        }
    }
    Ok(WaveEigensystem {
        zeta,
        xi,
        u,
        gram_blocks,
    })
}

/// Source term: `cos^2(2 pi t / t_final)` inside `[1/8, 3/8]^2`, zero elsewhere.
pub fn forcing(t: f64, x: (f64, f64), t_final: f64) -> f64 {
    let inside = |s: f64| (0.125..=0.375).contains(&s);
    if inside(x.0) && inside(x.1) {
        (2.0 * PI * t / t_final).cos().powi(2)
    } else {
        0.0
    }
}

/// Forcing sampled at the advection cell centres.
pub fn forcing_vector(n: usize, t: f64, t_final: f64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            f[i * n + j] = forcing(t, ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h), t_final);
        }
    }
    f
}

/// Problem description as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    AdvectionDiffusion {
        n: usize,
        field: VelocityField,
        /// Diffusion coefficient in units of the mesh width.
        alpha_multiplier: f64,
    },
    WaveFirstOrder {
        m: usize,
        c2: f64,
    },
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn build(&self) -> Result<SpatialProblem> {
        match *self {
            ProblemConfig::AdvectionDiffusion {
                n,
                field,
                alpha_multiplier,
            } => build_advection_diffusion(n, field, alpha_multiplier / n as f64),
            ProblemConfig::WaveFirstOrder { m, c2 } => build_wave_first_order(m, c2),
        }
    }
}
