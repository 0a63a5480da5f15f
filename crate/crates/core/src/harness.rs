//! Experiment drivers: the wave coarsening sweep, the advection-diffusion
//! sweeps, x-scans of the approximation constants, and CSV/JSON reports.
//!
//! Every CSV is comma-separated with a fixed header, floats written as
//! `{:.16e}` (17 significant digits, exact round trip), `inf`/`NaN` for
//! non-finite values and an empty field for values that were not computed.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use faer::{c64, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigbounds::{
    self, BoundKind, BoundReport, ComplexMap, ModePair, Trust, WeightedNormFactors,
};
use crate::error::{Error, Result};
use crate::linalg::RealMat;
use crate::model_problems::{
    advection_diffusion_operator, build_advection_diffusion, forcing_vector, sine_basis, wave_zeta,
    ProblemConfig, VelocityField, EIGEN_DIM_LIMIT,
};
use crate::prop_norms::{self, PropagatorPair};
use crate::schemes::{lookup, ButcherTableau};
use crate::spacetime::{
    assemble, convergence_factors, mgrit_solve, random_guess, BlockDiagonalStep, CoarseSystem,
    ConvergenceTrace, MgritOptions, Relaxation, SpaceTimeSystem, StepRef,
};
use crate::tap;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ratios before this iteration index are excluded from the worst factor,
/// so the first iteration is not counted.
pub const SKIP_FIRST: usize = 1;

fn parse_scheme(name: &str) -> Result<&'static ButcherTableau> {
    lookup(name)
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!(
            "k list must be nonempty and positive, got {ks:?}"
        )));
    }
    Ok(())
}

/// One row per coarsening factor of a bound-vs-observed study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub k: usize,
    pub n_points: usize,
    pub n_coarse: usize,
    pub dt: f64,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub diverged: Option<bool>,
    pub worst_cf: Option<f64>,
    pub avg_cf: Option<f64>,
    pub eval_bound: f64,
    pub eval_divergent: bool,
    pub single_it: f64,
    pub single_it_f: f64,
    pub single_it_fcf: f64,
    pub th3_lower: f64,
    pub th3_upper: f64,
    pub gsvd_f: Option<f64>,
    pub gsvd_fcf: Option<f64>,
    pub cond_u: f64,
    pub defective: bool,
    pub trust: Trust,
}

impl StudyRow {
    fn new(
        n_points: usize,
        dt: f64,
        bounds: &BoundReport,
        factors: &WeightedNormFactors,
        observed: Option<&ConvergenceTrace>,
        tol: f64,
    ) -> Self {
        let cf =
            observed.and_then(|t| convergence_factors(&t.residual_norms, SKIP_FIRST, tol).ok());
        Self {
            k: bounds.k,
            n_points,
            n_coarse: bounds.n_coarse,
            dt,
            iterations: observed.map(|t| t.iterations()),
            converged: observed.map(|t| t.converged),
            diverged: observed.map(|t| t.diverged),
            worst_cf: cf.map(|c| c.worst),
            avg_cf: cf.map(|c| c.avg),
            eval_bound: bounds.eval_bound,
            eval_divergent: bounds.eval_divergent,
            single_it: bounds.single_it(),
            single_it_f: bounds.single_it_f,
            single_it_fcf: bounds.single_it_fcf,
            th3_lower: bounds.th3_lower,
            th3_upper: bounds.th3_upper,
            gsvd_f: bounds.gsvd_f,
            gsvd_fcf: bounds.gsvd_fcf,
            cond_u: factors.cond_u,
            defective: factors.defective,
            trust: factors.trust,
        }
    }

    /// `single_it >= eval >= upper >= lower`.
    pub fn ordering_holds(&self) -> bool {
        self.single_it >= self.eval_bound
            && self.eval_bound >= self.th3_upper
            && self.th3_upper >= self.th3_lower
    }
}

// ---------------------------------------------------------------- wave

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveStudyConfig {
    /// Step-size ratio `dt c^2 / dx`, nominally 0.1 or 1.0.
    pub ratio: f64,
    pub scheme: String,
    pub ks: Vec<usize>,
    pub m: usize,
    pub c2: f64,
    /// Fine time steps; the grid has `steps + 1` points.
    pub steps: usize,
    pub relax: Relaxation,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Run MGRIT for observed factors; bounds only when false.
    pub observe: bool,
}

impl Default for WaveStudyConfig {
    fn default() -> Self {
        Self {
            ratio: 0.1,
            scheme: "SDIRK1".into(),
            ks: vec![2, 4, 8, 16, 32],
            m: 41,
            c2: 10.0,
            steps: 4096,
            relax: Relaxation::FCF,
            tol: 1e-10,
            max_iters: 200,
            seed: 1,
            observe: true,
        }
    }
}

/// `T = 100 ratio (m-1) dx / c^2`: `2 pi` and `20 pi` on the default grid,
/// giving `dt ~ ratio dx / c^2` with 4096 steps.
pub fn wave_final_time(ratio: f64, m: usize, c2: f64) -> f64 {
    let h = 2.0 * std::f64::consts::PI / (m - 1) as f64;
    100.0 * ratio * (m - 1) as f64 * h / c2
}

/// Per-mode `2 x 2` blocks `[[0, -1], [zeta, 0]]` of the wave operator in
/// the orthonormal sine basis.
pub fn wave_mode_blocks(zeta: &[f64]) -> Vec<RealMat> {
    zeta.iter()
        .map(|&z| Mat::from_fn(2, 2, |i, j| [[0.0, -1.0], [z, 0.0]][i][j]))
        .collect()
}

fn wave_modal_step(scheme: &ButcherTableau, blocks: &[RealMat], dt: f64) -> Result<StepRef> {
    let steps = blocks
        .iter()
        .map(|b| scheme.propagator_matrix(b.as_ref(), dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(Arc::new(BlockDiagonalStep::new(&steps)))
}

/// Seeded uniform `[-1, 1]` guess drawn in the physical grid basis and
/// mapped to modal coordinates, one time point at a time. Mode `l` holds
/// `(w_l, v_l)` at offsets `2l, 2l + 1`. The map is orthogonal, so l2 norms
/// agree with the physical basis.
pub fn wave_modal_guess(m: usize, n_points: usize, seed: u64) -> Vec<f64> {
    let q = m - 2;
    let n = q * q;
    let raw = random_guess(n_points * 2 * n, seed);
    let s = sine_basis(m);
    let mut out = vec![0.0; raw.len()];
    out.par_chunks_mut(2 * n)
        .zip(raw.par_chunks(2 * n))
        .for_each(|(o, r)| {
            for field in 0..2 {
                let f = Mat::from_fn(q, q, |i, j| r[field * n + i * q + j]);
                let c = s.transpose() * &f * &s;
                for p in 0..q {
                    for t in 0..q {
                        o[2 * (p * q + t) + field] = c[(p, t)];
                    }
                }
            }
        });
    out
}

fn wave_modes(scheme: &ButcherTableau, zeta: &[f64], dt: f64, k: usize) -> Result<Vec<ModePair>> {
    let xi: Vec<c64> = zeta
        .iter()
        .flat_map(|&z| [c64::new(0.0, -z.sqrt()), c64::new(0.0, z.sqrt())])
        .collect();
    eigbounds::mode_pairs(scheme, scheme, &xi, dt, k)
}

/// Coarsening sweep on the first-order wave equation. Finite-N_c bounds
/// use `N_c = steps/k + 1` coarse points; MGRIT runs in the sine basis,
/// where both steps are block diagonal.
pub fn run_wave_study(cfg: &WaveStudyConfig) -> Result<Vec<StudyRow>> {
    check_ks(&cfg.ks)?;
    let scheme = parse_scheme(&cfg.scheme)?;
    let zeta = wave_zeta(cfg.m, cfg.c2)?;
    let blocks = wave_mode_blocks(&zeta);
    let dt = wave_final_time(cfg.ratio, cfg.m, cfg.c2) / cfg.steps as f64;
    let n_points = cfg.steps + 1;
    let factors = eigbounds::wave_weighted_norm_factors(&zeta);
    let phi = wave_modal_step(scheme, &blocks, dt)?;
    let mut rows = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        if cfg.steps % k != 0 {
            return Err(Error::TimeLayout(format!(
                "{} steps not divisible by k = {k}",
                cfg.steps
            )));
        }
        let n_coarse = cfg.steps / k + 1;
        let modes = wave_modes(scheme, &zeta, dt, k)?;
        let bounds = BoundReport::from_modes(&modes, k, n_coarse, cfg.relax);
        let trace = if cfg.observe {
            let sys = SpaceTimeSystem::uniform(
                phi.clone(),
                n_points,
                k,
                vec![0.0; n_points * phi.dim()],
            )?;
            let coarse =
                CoarseSystem::uniform(wave_modal_step(scheme, &blocks, k as f64 * dt)?, n_coarse);
            let opts = MgritOptions {
                relax: cfg.relax,
                max_iters: cfg.max_iters,
                tol: cfg.tol,
            };
            let u0 = wave_modal_guess(cfg.m, n_points, cfg.seed);
            Some(mgrit_solve(&sys, &coarse, u0, &opts)?.trace)
        } else {
            None
        };
        rows.push(StudyRow::new(
            n_points,
            dt,
            &bounds,
            &factors,
            trace.as_ref(),
            cfg.tol,
        ));
    }
    Ok(rows)
}

// ----------------------------------------------------------- advection

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvectionStudyConfig {
    pub n: usize,
    pub field: VelocityField,
    /// `alpha = alpha_multiplier / n`.
    pub alpha_multiplier: f64,
    pub scheme: String,
    pub ks: Vec<usize>,
    /// Points on the MGRIT coarse grid; the fine grid has `(points - 1) k + 1`.
    pub coarse_points: usize,
    pub relax: Relaxation,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Angles on `[0, pi]` for the GSVD constants.
    pub tap_samples: usize,
    /// Grid for the bounds; defaults to `n`, or 16 when `n^2` exceeds the
    /// dense eigen limit.
    pub bound_n: Option<usize>,
    pub observe: bool,
}

impl Default for AdvectionStudyConfig {
    fn default() -> Self {
        Self {
            n: 16,
            field: VelocityField::V1,
            alpha_multiplier: 10.0,
            scheme: "SDIRK1".into(),
            ks: vec![2, 4, 8, 16],
            coarse_points: 100,
            relax: Relaxation::FCF,
            tol: 1e-10,
            max_iters: 200,
            seed: 1,
            tap_samples: tap::DEFAULT_SAMPLES,
            bound_n: None,
            observe: true,
        }
    }
}

/// `dt = dx^{1/p}` for a scheme of order `p`, so the temporal error matches
/// the first-order spatial error.
pub fn advection_dt(n: usize, scheme: &ButcherTableau) -> f64 {
    (1.0 / n as f64).powf(1.0 / scheme.order as f64)
}

impl AdvectionStudyConfig {
    pub fn resolved_bound_n(&self) -> usize {
        self.bound_n
            .unwrap_or(if self.n * self.n <= EIGEN_DIM_LIMIT {
                self.n
            } else {
                16
            })
    }
}

/// Coarsening sweep on the advection-diffusion problem: GSVD and eigenvalue
/// bounds on the bound grid, observed residual factors on the run grid.
pub fn run_advection_study(cfg: &AdvectionStudyConfig) -> Result<Vec<StudyRow>> {
    check_ks(&cfg.ks)?;
    if cfg.coarse_points < 3 {
        return Err(Error::Config(format!(
            "need at least 3 coarse points, got {}",
            cfg.coarse_points
        )));
    }
    let scheme = parse_scheme(&cfg.scheme)?;
    let bn = cfg.resolved_bound_n();
    if bn * bn > EIGEN_DIM_LIMIT {
        return Err(Error::SizeGuard {
            limit: EIGEN_DIM_LIMIT,
            requested: bn * bn,
        });
    }
    let bound_problem = build_advection_diffusion(bn, cfg.field, cfg.alpha_multiplier / bn as f64)?;
    let eig = bound_problem
        .eigendata
        .as_ref()
        .ok_or_else(|| Error::Decomposition("bound problem has no eigendata".into()))?;
    let factors = eigbounds::weighted_norm_factors(&eig.u, None)?;
    let bound_dt = advection_dt(bn, scheme);
    let run_l = if cfg.observe {
        Some(if bn == cfg.n {
            bound_problem.l.clone()
        } else {
            advection_diffusion_operator(cfg.n, cfg.field, cfg.alpha_multiplier / cfg.n as f64)?
        })
    } else {
        None
    };
    let dt = advection_dt(cfg.n, scheme);
    let mut rows = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        let n_points = (cfg.coarse_points - 1) * k + 1;
        let modes = eigbounds::mode_pairs(scheme, scheme, &eig.xi, bound_dt, k)?;
        let mut bounds = BoundReport::from_modes(&modes, k, cfg.coarse_points, cfg.relax);
        let pair = PropagatorPair::from_schemes(
            bound_problem.l.as_ref(),
            scheme,
            scheme,
            bound_dt,
            k,
            cfg.coarse_points,
        )?;
        bounds.gsvd_f = Some(tap::tap_constant(&pair, Relaxation::F, cfg.tap_samples)?.constant);
        bounds.gsvd_fcf =
            Some(tap::tap_constant(&pair, Relaxation::FCF, cfg.tap_samples)?.constant);
        let trace = match &run_l {
            Some(l) => Some(advection_trace(l, cfg, scheme, dt, n_points, k)?),
            None => None,
        };
        rows.push(StudyRow::new(
            n_points,
            dt,
            &bounds,
            &factors,
            trace.as_ref(),
            cfg.tol,
        ));
    }
    Ok(rows)
}

fn advection_trace(
    l: &RealMat,
    cfg: &AdvectionStudyConfig,
    scheme: &ButcherTableau,
    dt: f64,
    n_points: usize,
    k: usize,
) -> Result<ConvergenceTrace> {
    let dim = l.nrows();
    let t_final = (n_points - 1) as f64 * dt;
    let n = cfg.n;
    let source = move |t: f64| forcing_vector(n, t, t_final);
    let sys = assemble(l, scheme, dt, n_points, k, &vec![0.0; dim], Some(&source))?;
    let coarse = CoarseSystem::rediscretized(&sys, l, scheme, k as f64 * dt)?;
    let opts = MgritOptions {
        relax: cfg.relax,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
    };
    Ok(mgrit_solve(&sys, &coarse, random_guess(n_points * dim, cfg.seed), &opts)?.trace)
}

// --------------------------------------------------------------- x-scan

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TapScanConfig {
    pub n: usize,
    pub field: VelocityField,
    pub alpha_multiplier: f64,
    pub scheme: String,
    pub k: usize,
    pub coarse_points: usize,
    /// Angles on `[0, 2 pi]`, endpoints included.
    pub samples: usize,
}

impl Default for TapScanConfig {
    fn default() -> Self {
        Self {
            n: 16,
            field: VelocityField::V1,
            alpha_multiplier: 10.0,
            scheme: "SDIRK1".into(),
            k: 16,
            coarse_points: 100,
            samples: 129,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TapScanRow {
    pub x: f64,
    pub phi_f: f64,
    pub phi_fcf: f64,
    pub single_it_f: f64,
    pub single_it_fcf: f64,
}

pub fn run_tap_scan(cfg: &TapScanConfig) -> Result<Vec<TapScanRow>> {
    if cfg.samples < 2 {
        return Err(Error::Config(format!(
            "need at least 2 x samples, got {}",
            cfg.samples
        )));
    }
    let scheme = parse_scheme(&cfg.scheme)?;
    let l = advection_diffusion_operator(cfg.n, cfg.field, cfg.alpha_multiplier / cfg.n as f64)?;
    let dt = advection_dt(cfg.n, scheme);
    let pair =
        PropagatorPair::from_schemes(l.as_ref(), scheme, scheme, dt, cfg.k, cfg.coarse_points)?;
    let xs: Vec<f64> = (0..cfg.samples)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / (cfg.samples - 1) as f64)
        .collect();
    let f = tap::tap_scan_at(&pair, Relaxation::F, xs.clone())?;
    let fcf = tap::tap_scan_at(&pair, Relaxation::FCF, xs.clone())?;
    let sf = tap::single_iteration_tap_at(&pair, Relaxation::F, xs.clone())?;
    let sfcf = tap::single_iteration_tap_at(&pair, Relaxation::FCF, xs.clone())?;
    Ok((0..xs.len())
        .map(|i| TapScanRow {
            x: xs[i],
            phi_f: f.values[i],
            phi_fcf: fcf.values[i],
            single_it_f: sf.values[i],
            single_it_fcf: sfcf.values[i],
        })
        .collect())
}

// ---------------------------------------------------------------- norms

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormsRow {
    pub k: usize,
    pub n_coarse: usize,
    pub dt: f64,
    pub residual_f: f64,
    pub error_f: f64,
    pub error_fcf: f64,
    pub gsvd_f: f64,
    pub gsvd_fcf: f64,
}

/// Exact two-level propagator norms next to the GSVD constants for one
/// spatial operator and several coarsening factors.
pub fn run_norms(
    l: &RealMat,
    scheme: &ButcherTableau,
    dt: f64,
    ks: &[usize],
    n_coarse: usize,
    tap_samples: usize,
) -> Result<Vec<NormsRow>> {
    check_ks(ks)?;
    ks.iter()
        .map(|&k| {
            let pair = PropagatorPair::from_schemes(l.as_ref(), scheme, scheme, dt, k, n_coarse)?;
            Ok(NormsRow {
                k,
                n_coarse,
                dt,
                residual_f: prop_norms::residual_norm_f(&pair)?,
                error_f: prop_norms::error_norm_f(&pair)?,
                error_fcf: prop_norms::error_norm_fcf(&pair)?,
                gsvd_f: tap::tap_constant(&pair, Relaxation::F, tap_samples)?.constant,
                gsvd_fcf: tap::tap_constant(&pair, Relaxation::FCF, tap_samples)?.constant,
            })
        })
        .collect()
}

// ------------------------------------------------------------ single run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub scheme: String,
    pub k: usize,
    pub coarse_points: usize,
    /// Defaults to `dx^{1/order}` (advection) or `0.1 dx / c^2` (wave).
    pub dt: Option<f64>,
    pub relax: Relaxation,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::AdvectionDiffusion {
                n: 16,
                field: VelocityField::V1,
                alpha_multiplier: 10.0,
            },
            scheme: "SDIRK1".into(),
            k: 4,
            coarse_points: 100,
            dt: None,
            relax: Relaxation::FCF,
            tol: 1e-10,
            max_iters: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub iteration: usize,
    pub residual_norm: f64,
    pub ratio: Option<f64>,
}

/// One MGRIT solve; the wave problem is run in its sine basis.
pub fn run_mgrit(cfg: &RunConfig) -> Result<(ConvergenceTrace, Vec<ResidualRow>)> {
    if cfg.k == 0 || cfg.coarse_points < 2 {
        return Err(Error::Config(
            "need k >= 1 and at least 2 coarse points".into(),
        ));
    }
    let scheme = parse_scheme(&cfg.scheme)?;
    let n_points = (cfg.coarse_points - 1) * cfg.k + 1;
    let opts = MgritOptions {
        relax: cfg.relax,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
    };
    let trace = match cfg.problem {
        ProblemConfig::AdvectionDiffusion {
            n,
            field,
            alpha_multiplier,
        } => {
            let l = advection_diffusion_operator(n, field, alpha_multiplier / n as f64)?;
            let dt = cfg.dt.unwrap_or_else(|| advection_dt(n, scheme));
            let study = AdvectionStudyConfig {
                n,
                relax: cfg.relax,
                tol: cfg.tol,
                max_iters: cfg.max_iters,
                seed: cfg.seed,
                ..Default::default()
            };
            advection_trace(&l, &study, scheme, dt, n_points, cfg.k)?
        }
        ProblemConfig::WaveFirstOrder { m, c2 } => {
            let zeta = wave_zeta(m, c2)?;
            let blocks = wave_mode_blocks(&zeta);
            let h = 2.0 * std::f64::consts::PI / (m - 1) as f64;
            let dt = cfg.dt.unwrap_or(0.1 * h / c2);
            let phi = wave_modal_step(scheme, &blocks, dt)?;
            let sys = SpaceTimeSystem::uniform(
                phi.clone(),
                n_points,
                cfg.k,
                vec![0.0; n_points * phi.dim()],
            )?;
            let coarse = CoarseSystem::uniform(
                wave_modal_step(scheme, &blocks, cfg.k as f64 * dt)?,
                cfg.coarse_points,
            );
            mgrit_solve(
                &sys,
                &coarse,
                wave_modal_guess(m, n_points, cfg.seed),
                &opts,
            )?
            .trace
        }
    };
    let rows = trace
        .residual_norms
        .iter()
        .enumerate()
        .map(|(i, &r)| ResidualRow {
            iteration: i,
            residual_norm: r,
            ratio: (i > 0).then(|| r / trace.residual_norms[i - 1]),
        })
        .collect();
    Ok((trace, rows))
}

// ------------------------------------------------------------- map cells

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapCell {
    pub re: f64,
    pub im: f64,
    pub value: f64,
}

/// Map panels: the requested bound, and `Re`/`Im` of `lambda^k` and `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapPanel {
    Bound(BoundKind),
    LambdaKRe,
    LambdaKIm,
    MuRe,
    MuIm,
}

impl MapPanel {
    pub fn file_stem(self) -> &'static str {
        match self {
            MapPanel::Bound(BoundKind::Eval) => "map_eval",
            MapPanel::Bound(BoundKind::SingleIt) => "map_single_it",
            MapPanel::LambdaKRe => "map_lambda_k_re",
            MapPanel::LambdaKIm => "map_lambda_k_im",
            MapPanel::MuRe => "map_mu_re",
            MapPanel::MuIm => "map_mu_im",
        }
    }
}

/// Row-major cells (imaginary part slowest) for one panel.
pub fn map_cells(map: &ComplexMap, panel: MapPanel) -> Vec<MapCell> {
    let nr = map.re.len();
    (0..map.values.len())
        .map(|p| MapCell {
            re: map.re[p % nr],
            im: map.im[p / nr],
            value: match panel {
                MapPanel::Bound(_) => map.values[p],
                MapPanel::LambdaKRe => map.lambda_k[p].re,
                MapPanel::LambdaKIm => map.lambda_k[p].im,
                MapPanel::MuRe => map.mu[p].re,
                MapPanel::MuIm => map.mu[p].im,
            },
        })
        .collect()
}

// -------------------------------------------------------------- reports

/// Fixed-header CSV serialisation.
pub trait CsvRow {
    const HEADER: &'static [&'static str];
    fn record(&self) -> Vec<String>;
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn fmt_opt_display<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn trust_label(t: Trust) -> &'static str {
    match t {
        Trust::High => "high",
        Trust::Medium => "medium",
        Trust::Low => "low",
    }
}

impl CsvRow for StudyRow {
    const HEADER: &'static [&'static str] = &[
        "k",
        "n_points",
        "n_coarse",
        "dt",
        "iterations",
        "converged",
        "diverged",
        "worst_cf",
        "avg_cf",
        "eval_bound",
        "eval_divergent",
        "single_it",
        "single_it_f",
        "single_it_fcf",
        "th3_lower",
        "th3_upper",
        "gsvd_f",
        "gsvd_fcf",
        "cond_u",
        "defective",
        "trust",
    ];

    fn record(&self) -> Vec<String> {
        vec![
            self.k.to_string(),
            self.n_points.to_string(),
            self.n_coarse.to_string(),
            fmt_f64(self.dt),
            fmt_opt_display(self.iterations),
            fmt_opt_display(self.converged),
            fmt_opt_display(self.diverged),
            fmt_opt(self.worst_cf),
            fmt_opt(self.avg_cf),
            fmt_f64(self.eval_bound),
            self.eval_divergent.to_string(),
            fmt_f64(self.single_it),
            fmt_f64(self.single_it_f),
            fmt_f64(self.single_it_fcf),
            fmt_f64(self.th3_lower),
            fmt_f64(self.th3_upper),
            fmt_opt(self.gsvd_f),
            fmt_opt(self.gsvd_fcf),
            fmt_f64(self.cond_u),
            self.defective.to_string(),
            trust_label(self.trust).into(),
        ]
    }
}

impl CsvRow for TapScanRow {
    const HEADER: &'static [&'static str] =
        &["x", "phi_f", "phi_fcf", "single_it_f", "single_it_fcf"];

    fn record(&self) -> Vec<String> {
        [
            self.x,
            self.phi_f,
            self.phi_fcf,
            self.single_it_f,
            self.single_it_fcf,
        ]
        .into_iter()
        .map(fmt_f64)
        .collect()
    }
}

impl CsvRow for NormsRow {
    const HEADER: &'static [&'static str] = &[
        "k",
        "n_coarse",
        "dt",
        "residual_f",
        "error_f",
        "error_fcf",
        "gsvd_f",
        "gsvd_fcf",
    ];

    fn record(&self) -> Vec<String> {
        let mut r = vec![self.k.to_string(), self.n_coarse.to_string()];
        r.extend(
            [
                self.dt,
                self.residual_f,
                self.error_f,
                self.error_fcf,
                self.gsvd_f,
                self.gsvd_fcf,
            ]
            .into_iter()
            .map(fmt_f64),
        );
        r
    }
}

impl CsvRow for ResidualRow {
    const HEADER: &'static [&'static str] = &["iteration", "residual_norm", "ratio"];

    fn record(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            fmt_f64(self.residual_norm),
            fmt_opt(self.ratio),
        ]
    }
}

impl CsvRow for MapCell {
    const HEADER: &'static [&'static str] = &["re", "im", "value"];

    fn record(&self) -> Vec<String> {
        vec![fmt_f64(self.re), fmt_f64(self.im), fmt_f64(self.value)]
    }
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Serialize(format!("{}: {e}", path.display()))
}

pub fn csv_bytes<R: CsvRow>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let here = Path::new("<memory>");
    w.write_record(R::HEADER).map_err(|e| csv_err(here, e))?;
    for r in rows {
        w.write_record(r.record()).map_err(|e| csv_err(here, e))?;
    }
    w.into_inner().map_err(|e| csv_err(here, e))
}

pub fn write_csv<R: CsvRow>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    let bytes = csv_bytes(rows)?;
    File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize) -> Result<T> {
    let s = rec.get(idx).unwrap_or("");
    s.parse()
        .map_err(|_| Error::Serialize(format!("column {idx}: cannot parse `{s}`")))
}

fn parse_opt<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize) -> Result<Option<T>> {
    if rec.get(idx).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        parse_field(rec, idx).map(Some)
    }
}

/// Parse a study CSV written by [`write_csv`].
pub fn read_study_csv(text: &str) -> Result<Vec<StudyRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::Serialize(e.to_string()))?
        .clone();
    if header.iter().ne(StudyRow::HEADER.iter().copied()) {
        return Err(Error::Serialize(format!("unexpected header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Serialize(e.to_string()))?;
            let trust = match rec.get(20).unwrap_or("") {
                "high" => Trust::High,
                "medium" => Trust::Medium,
                "low" => Trust::Low,
                other => return Err(Error::Serialize(format!("unknown trust label `{other}`"))),
            };
            Ok(StudyRow {
                k: parse_field(&rec, 0)?,
                n_points: parse_field(&rec, 1)?,
                n_coarse: parse_field(&rec, 2)?,
                dt: parse_field(&rec, 3)?,
                iterations: parse_opt(&rec, 4)?,
                converged: parse_opt(&rec, 5)?,
                diverged: parse_opt(&rec, 6)?,
                worst_cf: parse_opt(&rec, 7)?,
                avg_cf: parse_opt(&rec, 8)?,
                eval_bound: parse_field(&rec, 9)?,
                eval_divergent: parse_field(&rec, 10)?,
                single_it: parse_field(&rec, 11)?,
                single_it_f: parse_field(&rec, 12)?,
                single_it_fcf: parse_field(&rec, 13)?,
                th3_lower: parse_field(&rec, 14)?,
                th3_upper: parse_field(&rec, 15)?,
                gsvd_f: parse_opt(&rec, 16)?,
                gsvd_fcf: parse_opt(&rec, 17)?,
                cond_u: parse_field(&rec, 18)?,
                defective: parse_field(&rec, 19)?,
                trust,
            })
        })
        .collect()
}

/// JSON document for one run. Non-finite floats serialise as `null`.
#[derive(Debug, Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: &'a C,
    pub results: &'a [R],
}

pub fn report_json<C: Serialize, R: Serialize>(
    config: &C,
    seed: Option<u64>,
    results: &[R],
) -> Result<String> {
    let report = Report {
        version: VERSION,
        seed,
        config,
        results,
    };
    serde_json::to_string_pretty(&report).map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_json<C: Serialize, R: Serialize>(
    path: impl AsRef<Path>,
    config: &C,
    seed: Option<u64>,
    results: &[R],
) -> Result<()> {
    let path = path.as_ref();
    let text = report_json(config, seed, results)?;
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_wave() -> WaveStudyConfig {
        WaveStudyConfig {
            m: 9,
            steps: 64,
            ks: vec![2, 4],
            ..Default::default()
        }
    }

    #[test]
    fn final_time_matches_grid() {
        let pi = std::f64::consts::PI;
        assert!((wave_final_time(0.1, 41, 10.0) - 2.0 * pi).abs() < 1e-12);
        assert!((wave_final_time(1.0, 41, 10.0) - 20.0 * pi).abs() < 1e-12);
    }

    #[test]
    fn modal_guess_preserves_norm() {
        let (m, pts) = (7, 3);
        let raw = random_guess(pts * 2 * 25, 4);
        let modal = wave_modal_guess(m, pts, 4);
        let a: f64 = raw.iter().map(|v| v * v).sum();
        let b: f64 = modal.iter().map(|v| v * v).sum();
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn modal_run_matches_physical_residuals() {
        // same guess in both bases: residual histories coincide
        let (m, k, nc) = (7, 2, 5);
        let scheme = lookup("SDIRK1").unwrap();
        let zeta = wave_zeta(m, 10.0).unwrap();
        let dt = 0.05;
        let n_points = (nc - 1) * k + 1;
        let phi = wave_modal_step(scheme, &wave_mode_blocks(&zeta), dt).unwrap();
        let sys =
            SpaceTimeSystem::uniform(phi.clone(), n_points, k, vec![0.0; n_points * 50]).unwrap();
        let coarse = CoarseSystem::uniform(
            wave_modal_step(scheme, &wave_mode_blocks(&zeta), 2.0 * dt).unwrap(),
            nc,
        );
        let opts = MgritOptions {
            relax: Relaxation::FCF,
            max_iters: 4,
            tol: 0.0,
        };
        let modal = mgrit_solve(&sys, &coarse, wave_modal_guess(m, n_points, 9), &opts).unwrap();

        let p = crate::model_problems::build_wave_first_order(m, 10.0).unwrap();
        let phys = assemble(&p.l, scheme, dt, n_points, k, &vec![0.0; 50], None).unwrap();
        let coarse = CoarseSystem::rediscretized(&phys, &p.l, scheme, 2.0 * dt).unwrap();
        let physical = mgrit_solve(&phys, &coarse, random_guess(n_points * 50, 9), &opts).unwrap();
        for (a, b) in modal
            .trace
            .residual_norms
            .iter()
            .zip(&physical.trace.residual_norms)
        {
            assert!((a - b).abs() <= 1e-9 * b.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn wave_rows_are_ordered_and_deterministic() {
        let cfg = small_wave();
        let a = run_wave_study(&cfg).unwrap();
        let b = run_wave_study(&cfg).unwrap();
        assert_eq!(csv_bytes(&a).unwrap(), csv_bytes(&b).unwrap());
        for r in &a {
            assert!(r.ordering_holds(), "{r:?}");
            assert_eq!(r.trust, Trust::High);
            assert!(r.worst_cf.is_some());
        }
    }

    #[test]
    fn indivisible_steps_rejected() {
        let cfg = WaveStudyConfig {
            ks: vec![3],
            ..small_wave()
        };
        assert!(matches!(run_wave_study(&cfg), Err(Error::TimeLayout(_))));
    }

    #[test]
    fn study_csv_round_trip() {
        let cfg = AdvectionStudyConfig {
            n: 6,
            ks: vec![2],
            coarse_points: 6,
            tap_samples: 9,
            ..Default::default()
        };
        let rows = run_advection_study(&cfg).unwrap();
        let text = String::from_utf8(csv_bytes(&rows).unwrap()).unwrap();
        assert!(text.starts_with("k,n_points,n_coarse,dt,"));
        assert_eq!(read_study_csv(&text).unwrap(), rows);
    }

    #[test]
    fn json_has_provenance() {
        let cfg = small_wave();
        let rows = vec![ResidualRow {
            iteration: 0,
            residual_norm: f64::INFINITY,
            ratio: None,
        }];
        let v: serde_json::Value =
            serde_json::from_str(&report_json(&cfg, Some(7), &rows).unwrap()).unwrap();
        for key in ["version", "seed", "config", "results"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["config"]["scheme"], "SDIRK1");
        assert!(v["results"][0]["residual_norm"].is_null());
    }

    #[test]
    fn io_errors_name_the_path() {
        let err = write_csv(
            "/nonexistent-dir/x.csv",
            &[MapCell {
                re: 0.0,
                im: 0.0,
                value: 1.0,
            }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(
            fmt_f64(f64::INFINITY).parse::<f64>().unwrap(),
            f64::INFINITY
        );
    }
}
