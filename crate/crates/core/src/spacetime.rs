//! Block space-time system `A u = f`, its C-point Schur complement, and the
//! two-level MGRIT / Parareal iteration.
//!
//! Time points are laid out as `N = k (N_c - 1) + 1`, with C-points at every
//! multiple of `k`. `A` has identity diagonal blocks and `-Phi_l` on the
//! block subdiagonal; row 0 is the initial condition.

use std::sync::Arc;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealMat;
use crate::schemes::ButcherTableau;

/// One linear time step `y = Phi x`.
pub trait LinearStep: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn to_dense(&self) -> RealMat;
}

/// Dense step stored row-major for a cache-friendly matvec.
#[derive(Debug, Clone)]
pub struct DenseStep {
    n: usize,
    data: Vec<f64>,
}

impl DenseStep {
    pub fn new(phi: &RealMat) -> Self {
        let n = phi.nrows();
        assert_eq!(n, phi.ncols(), "step matrix must be square");
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(phi[(i, j)]);
            }
        }
        Self { n, data }
    }

    pub fn scalar(a: f64) -> Self {
        Self {
            n: 1,
            data: vec![a],
        }
    }
}

impl LinearStep for DenseStep {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (row, yi) in self.data.chunks_exact(self.n).zip(y.iter_mut()) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn to_dense(&self) -> RealMat {
        Mat::from_fn(self.n, self.n, |i, j| self.data[i * self.n + j])
    }
}

/// Block-diagonal step with equal square blocks, used for modal
/// (diagonalised) operators.
#[derive(Debug, Clone)]
pub struct BlockDiagonalStep {
    block: usize,
    data: Vec<f64>,
}

impl BlockDiagonalStep {
    pub fn new(blocks: &[RealMat]) -> Self {
        let block = blocks.first().map_or(0, |b| b.nrows());
        let mut data = Vec::with_capacity(blocks.len() * block * block);
        for b in blocks {
            assert!(
                b.nrows() == block && b.ncols() == block,
                "blocks must share one size"
            );
            for i in 0..block {
                for j in 0..block {
                    data.push(b[(i, j)]);
                }
            }
        }
        Self { block, data }
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn n_blocks(&self) -> usize {
        if self.block == 0 {
            0
        } else {
            self.data.len() / (self.block * self.block)
        }
    }

    pub fn block(&self, idx: usize) -> RealMat {
        let b = self.block;
        let off = idx * b * b;
        Mat::from_fn(b, b, |i, j| self.data[off + i * b + j])
    }
}

impl LinearStep for BlockDiagonalStep {
    fn dim(&self) -> usize {
        self.n_blocks() * self.block
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let b = self.block;
        for ((blk, xs), ys) in self
            .data
            .chunks_exact(b * b)
            .zip(x.chunks_exact(b))
            .zip(y.chunks_exact_mut(b))
        {
            for (row, yi) in blk.chunks_exact(b).zip(ys.iter_mut()) {
                *yi = row.iter().zip(xs).map(|(a, v)| a * v).sum();
            }
        }
    }

    fn to_dense(&self) -> RealMat {
        let b = self.block;
        let n = self.dim();
        let mut m = Mat::<f64>::zeros(n, n);
        for k in 0..self.n_blocks() {
            for i in 0..b {
                for j in 0..b {
                    m[(k * b + i, k * b + j)] = self.data[k * b * b + i * b + j];
                }
            }
        }
        m
    }
}

pub type StepRef = Arc<dyn LinearStep>;

#[derive(Clone)]
pub struct SpaceTimeSystem {
    /// `steps[l]` maps time point `l` to `l + 1`.
    steps: Vec<StepRef>,
    n: usize,
    k: usize,
    n_coarse: usize,
    rhs: Vec<f64>,
}

impl std::fmt::Debug for SpaceTimeSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpaceTimeSystem")
            .field("n", &self.n)
            .field("n_points", &self.n_points())
            .field("k", &self.k)
            .field("n_coarse", &self.n_coarse)
            .finish()
    }
}

/// Coarse points for `n_points` fine points and factor `k`.
pub fn coarse_points(n_points: usize, k: usize) -> Result<usize> {
    if k == 0 || n_points < k + 1 || (n_points - 1) % k != 0 {
        return Err(Error::TimeLayout(format!(
            "need N = k (N_c - 1) + 1 with N >= k + 1; got N = {n_points}, k = {k}"
        )));
    }
    Ok((n_points - 1) / k + 1)
}

impl SpaceTimeSystem {
    pub fn new(steps: Vec<StepRef>, k: usize, rhs: Vec<f64>) -> Result<Self> {
        let n_points = steps.len() + 1;
        let n_coarse = coarse_points(n_points, k)?;
        let n = steps[0].dim();
        if steps.iter().any(|s| s.dim() != n) {
            return Err(Error::Dimension(
                "time steps of differing spatial size".into(),
            ));
        }
        if rhs.len() != n_points * n {
            return Err(Error::Dimension(format!(
                "rhs has {} entries, expected {}",
                rhs.len(),
                n_points * n
            )));
        }
        Ok(Self {
            steps,
            n,
            k,
            n_coarse,
            rhs,
        })
    }

    /// Same step at every time point.
    pub fn uniform(step: StepRef, n_points: usize, k: usize, rhs: Vec<f64>) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::TimeLayout(format!(
                "need at least 2 time points, got {n_points}"
            )));
        }
        Self::new(vec![step; n_points - 1], k, rhs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_points(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn steps(&self) -> &[StepRef] {
        &self.steps
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `A u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = u.to_vec();
        let mut tmp = vec![0.0; n];
        for (l, step) in self.steps.iter().enumerate() {
            step.apply(&u[l * n..(l + 1) * n], &mut tmp);
            for (o, t) in out[(l + 1) * n..(l + 2) * n].iter_mut().zip(&tmp) {
                *o -= t;
            }
        }
        out
    }

    /// Block forward substitution, i.e. sequential time stepping.
    pub fn sequential_solve(&self) -> Vec<f64> {
        let n = self.n;
        let mut u = self.rhs.clone();
        let mut tmp = vec![0.0; n];
        for (l, step) in self.steps.iter().enumerate() {
            let (head, tail) = u.split_at_mut((l + 1) * n);
            step.apply(&head[l * n..], &mut tmp);
            for (o, t) in tail[..n].iter_mut().zip(&tmp) {
                *o += t;
            }
        }
        u
    }

    /// Dense `A^{-1}`: block `(i, j)` is `Phi_{i-1} ... Phi_j` for `i > j`.
    pub fn closed_form_inverse(&self) -> RealMat {
        let n = self.n;
        let np = self.n_points();
        let mut inv = Mat::<f64>::zeros(n * np, n * np);
        let dense: Vec<RealMat> = self.steps.iter().map(|s| s.to_dense()).collect();
        for j in 0..np {
            let mut block = Mat::<f64>::identity(n, n);
            for i in j..np {
                if i > j {
                    block = &dense[i - 1] * &block;
                }
                for a in 0..n {
                    for b in 0..n {
                        inv[(i * n + a, j * n + b)] = block[(a, b)];
                    }
                }
            }
        }
        inv
    }

    pub fn to_dense(&self) -> RealMat {
        let n = self.n;
        let np = self.n_points();
        let mut a = Mat::<f64>::identity(n * np, n * np);
        for (l, step) in self.steps.iter().enumerate() {
            let d = step.to_dense();
            for i in 0..n {
                for j in 0..n {
                    a[((l + 1) * n + i, l * n + j)] = -d[(i, j)];
                }
            }
        }
        a
    }

    /// Exact coarse block `i` (`1 <= i < N_c`): the ordered product of the
    /// `k` fine steps from C-point `i-1` to C-point `i`, applied to `x`.
    pub fn schur_apply(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = vec![0.0; self.n];
        for l in (i - 1) * self.k..i * self.k {
            self.steps[l].apply(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn schur_block_dense(&self, i: usize) -> RealMat {
        let mut p = Mat::<f64>::identity(self.n, self.n);
        for l in (i - 1) * self.k..i * self.k {
            p = self.steps[l].to_dense() * &p;
        }
        p
    }

    /// Space-time residual `f - A u` and its l2 norm. Chunk sums are
    /// reduced in a fixed order so the result does not depend on threading.
    pub fn residual_norm(&self, u: &[f64]) -> f64 {
        let n = self.n;
        let np = self.n_points();
        let chunk = self.k.max(1);
        let partial: Vec<f64> = (0..np.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut tmp = vec![0.0; n];
                let mut acc = 0.0;
                for l in c * chunk..((c + 1) * chunk).min(np) {
                    let ul = &u[l * n..(l + 1) * n];
                    let fl = &self.rhs[l * n..(l + 1) * n];
                    if l == 0 {
                        acc += fl
                            .iter()
                            .zip(ul)
                            .map(|(f, v)| (f - v) * (f - v))
                            .sum::<f64>();
                    } else {
                        self.steps[l - 1].apply(&u[(l - 1) * n..l * n], &mut tmp);
                        for ((f, v), t) in fl.iter().zip(ul).zip(&tmp) {
                            let r = f - v + t;
                            acc += r * r;
                        }
                    }
                }
                acc
            })
            .collect();
        partial.iter().sum::<f64>().sqrt()
    }
}

/// `A u = f` for `u' = -L u + s(t)` with constant step `dt`.
///
/// Row 0 holds the initial condition. Each later row carries the source
/// sampled at the new time and pushed through one step,
/// `f_{l+1} = dt * Phi s(t_{l+1})`, which is the backward Euler update and
/// a first-order source treatment for the other schemes.
pub fn assemble(
    l: &RealMat,
    scheme: &ButcherTableau,
    dt: f64,
    n_points: usize,
    k: usize,
    initial: &[f64],
    source: Option<&dyn Fn(f64) -> Vec<f64>>,
) -> Result<SpaceTimeSystem> {
    let n = l.nrows();
    if initial.len() != n {
        return Err(Error::Dimension(format!(
            "initial condition has {} entries, operator has {n}",
            initial.len()
        )));
    }
    coarse_points(n_points, k)?;
    let phi = scheme.propagator_matrix(l.as_ref(), dt)?;
    let step: StepRef = Arc::new(DenseStep::new(&phi));
    let mut rhs = vec![0.0; n_points * n];
    rhs[..n].copy_from_slice(initial);
    if let Some(src) = source {
        let mut tmp = vec![0.0; n];
        for p in 1..n_points {
            let s: Vec<f64> = src(p as f64 * dt).iter().map(|v| v * dt).collect();
            step.apply(&s, &mut tmp);
            rhs[p * n..(p + 1) * n].copy_from_slice(&tmp);
        }
    }
    SpaceTimeSystem::uniform(step, n_points, k, rhs)
}

/// Coarse-grid operators: the non-Galerkin blocks `Psi_i`, `i = 1..N_c-1`.
#[derive(Clone)]
pub struct CoarseSystem {
    psi: Vec<StepRef>,
}

impl CoarseSystem {
    pub fn new(psi: Vec<StepRef>) -> Self {
        Self { psi }
    }

    /// One step of `scheme` with step `coarse_dt` on every coarse interval.
    pub fn rediscretized(
        sys: &SpaceTimeSystem,
        l: &RealMat,
        scheme: &ButcherTableau,
        coarse_dt: f64,
    ) -> Result<Self> {
        let psi = scheme.propagator_matrix(l.as_ref(), coarse_dt)?;
        let step: StepRef = Arc::new(DenseStep::new(&psi));
        Ok(Self::uniform(step, sys.n_coarse()))
    }

    pub fn uniform(step: StepRef, n_coarse: usize) -> Self {
        Self {
            psi: vec![step; n_coarse - 1],
        }
    }

    /// `Psi_i` equal to the exact `k`-step products.
    pub fn exact(sys: &SpaceTimeSystem) -> Self {
        let psi = (1..sys.n_coarse())
            .map(|i| Arc::new(DenseStep::new(&sys.schur_block_dense(i))) as StepRef)
            .collect();
        Self { psi }
    }

    pub fn psi(&self) -> &[StepRef] {
        &self.psi
    }

    fn check(&self, sys: &SpaceTimeSystem) -> Result<()> {
        if self.psi.len() + 1 != sys.n_coarse() {
            return Err(Error::TimeLayout(format!(
                "coarse system has {} blocks, fine system needs {}",
                self.psi.len(),
                sys.n_coarse() - 1
            )));
        }
        if self.psi.iter().any(|p| p.dim() != sys.n()) {
            return Err(Error::Dimension(
                "coarse and fine spatial sizes differ".into(),
            ));
        }
        Ok(())
    }
}

/// Dense `(A_Delta blocks, Psi blocks)` for the norm computations.
pub fn coarse_block_lists(
    sys: &SpaceTimeSystem,
    coarse: &CoarseSystem,
) -> (Vec<RealMat>, Vec<RealMat>) {
    let a = (1..sys.n_coarse())
        .map(|i| sys.schur_block_dense(i))
        .collect();
    let p = coarse.psi.iter().map(|s| s.to_dense()).collect();
    (a, p)
}

/// Convenience: `coarsen` as a free function.
pub fn coarsen(
    sys: &SpaceTimeSystem,
    l: &RealMat,
    coarse_scheme: &ButcherTableau,
    coarse_dt: f64,
) -> Result<CoarseSystem> {
    CoarseSystem::rediscretized(sys, l, coarse_scheme, coarse_dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relaxation {
    F,
    FCF,
}

impl std::fmt::Display for Relaxation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Relaxation::F => "F",
            Relaxation::FCF => "FCF",
        })
    }
}

impl std::str::FromStr for Relaxation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F" => Ok(Relaxation::F),
            "FCF" => Ok(Relaxation::FCF),
            other => Err(Error::Config(format!(
                "unknown relaxation `{other}` (expected F or FCF)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgritOptions {
    pub relax: Relaxation,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for MgritOptions {
    fn default() -> Self {
        Self {
            relax: Relaxation::FCF,
            max_iters: 200,
            tol: 1e-10,
        }
    }
}

/// Growth factor over the initial residual that counts as divergence.
pub const DIVERGENCE_GROWTH: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Entry 0 is the residual of the initial guess.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
}

impl ConvergenceTrace {
    pub fn ratios(&self) -> Vec<f64> {
        self.residual_norms
            .windows(2)
            .map(|w| w[1] / w[0])
            .collect()
    }

    pub fn iterations(&self) -> usize {
        self.residual_norms.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone)]
pub struct MgritOutcome {
    pub trace: ConvergenceTrace,
    pub solution: Vec<f64>,
}

fn f_relax(sys: &SpaceTimeSystem, u: &mut [f64]) {
    let n = sys.n;
    let k = sys.k;
    if k < 2 {
        return;
    }
    let last = sys.n_coarse - 1;
    u.par_chunks_mut(k * n).enumerate().for_each(|(j, chunk)| {
        if j >= last {
            return;
        }
        let mut tmp = vec![0.0; n];
        for off in 1..k {
            let l = j * k + off;
            sys.steps[l - 1].apply(&chunk[(off - 1) * n..off * n], &mut tmp);
            let f = &sys.rhs[l * n..(l + 1) * n];
            for ((o, t), fv) in chunk[off * n..(off + 1) * n].iter_mut().zip(&tmp).zip(f) {
                *o = t + fv;
            }
        }
    });
}

/// C-point residuals `f_{jk} - u_{jk} + Phi u_{jk-1}`.
fn c_residuals(sys: &SpaceTimeSystem, u: &[f64]) -> Vec<Vec<f64>> {
    let n = sys.n;
    let k = sys.k;
    (0..sys.n_coarse)
        .into_par_iter()
        .map(|j| {
            let p = j * k;
            let f = &sys.rhs[p * n..(p + 1) * n];
            let up = &u[p * n..(p + 1) * n];
            if j == 0 {
                f.iter().zip(up).map(|(a, b)| a - b).collect()
            } else {
                let mut tmp = vec![0.0; n];
                sys.steps[p - 1].apply(&u[(p - 1) * n..p * n], &mut tmp);
                f.iter()
                    .zip(up)
                    .zip(&tmp)
                    .map(|((a, b), t)| a - b + t)
                    .collect()
            }
        })
        .collect()
}

fn add_to_c_points(sys: &SpaceTimeSystem, u: &mut [f64], corr: &[Vec<f64>]) {
    let n = sys.n;
    for (j, c) in corr.iter().enumerate() {
        let p = j * sys.k;
        for (o, v) in u[p * n..(p + 1) * n].iter_mut().zip(c) {
            *o += v;
        }
    }
}

/// One two-level cycle: relaxation, injected C-residual, coarse forward
/// solve with `Psi`, C-point correction, F-relaxation.
pub fn mgrit_cycle(sys: &SpaceTimeSystem, coarse: &CoarseSystem, relax: Relaxation, u: &mut [f64]) {
    f_relax(sys, u);
    if relax == Relaxation::FCF {
        // C-relaxation is the C-point update with its own residual added
        let r = c_residuals(sys, u);
        add_to_c_points(sys, u, &r);
        f_relax(sys, u);
    }
    let r = c_residuals(sys, u);
    let n = sys.n;
    let mut e: Vec<Vec<f64>> = Vec::with_capacity(r.len());
    e.push(r[0].clone());
    let mut tmp = vec![0.0; n];
    for j in 1..r.len() {
        coarse.psi[j - 1].apply(&e[j - 1], &mut tmp);
        e.push(tmp.iter().zip(&r[j]).map(|(a, b)| a + b).collect());
    }
    add_to_c_points(sys, u, &e);
    f_relax(sys, u);
}

/// Iterate two-level cycles from `u0` until the l2 residual falls below
/// `tol`, `max_iters` is reached, or the residual grows past
/// [`DIVERGENCE_GROWTH`] times its initial value.
pub fn mgrit_solve(
    sys: &SpaceTimeSystem,
    coarse: &CoarseSystem,
    u0: Vec<f64>,
    opts: &MgritOptions,
) -> Result<MgritOutcome> {
    coarse.check(sys)?;
    if u0.len() != sys.n_points() * sys.n {
        return Err(Error::Dimension(format!(
            "initial guess has {} entries, expected {}",
            u0.len(),
            sys.n_points() * sys.n
        )));
    }
    let mut u = u0;
    let r0 = sys.residual_norm(&u);
    let mut trace = ConvergenceTrace {
        residual_norms: vec![r0],
        converged: r0 <= opts.tol,
        diverged: false,
    };
    for _ in 0..opts.max_iters {
        if trace.converged {
            break;
        }
        mgrit_cycle(sys, coarse, opts.relax, &mut u);
        let r = sys.residual_norm(&u);
        trace.residual_norms.push(r);
        if r <= opts.tol {
            trace.converged = true;
        } else if !r.is_finite() || r > DIVERGENCE_GROWTH * r0 {
            trace.diverged = true;
            break;
        }
    }
    Ok(MgritOutcome { trace, solution: u })
}

/// Seeded uniform `[-1, 1]` entries.
pub fn random_guess(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFactors {
    pub worst: f64,
    pub avg: f64,
    /// Number of ratios in the window used for `worst`.
    pub window: usize,
}

/// Iterations averaged for `avg`.
pub const AVG_WINDOW: usize = 10;

/// Worst and geometric-mean ratios `r_{i+1}/r_i` over `i >= skip_first`,
/// stopping once `r_i <= 10 tol` so the tolerance floor is not counted.
/// The average uses at most the first [`AVG_WINDOW`] ratios of the window.
pub fn convergence_factors(
    residuals: &[f64],
    skip_first: usize,
    tol: f64,
) -> Result<ConvergenceFactors> {
    if residuals.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 residuals, got {}",
            residuals.len()
        )));
    }
    let ratios: Vec<f64> = (skip_first..residuals.len() - 1)
        .take_while(|&i| residuals[i] > 10.0 * tol)
        .map(|i| residuals[i + 1] / residuals[i])
        .collect();
    if ratios.is_empty() {
        return Err(Error::InsufficientData(
            "no residual ratios above the tolerance floor".into(),
        ));
    }
    let worst = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let head = &ratios[..ratios.len().min(AVG_WINDOW)];
    let avg = (head.iter().map(|r| r.ln()).sum::<f64>() / head.len() as f64).exp();
    Ok(ConvergenceFactors {
        worst,
        avg,
        window: ratios.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, inverse};
    use crate::schemes::lookup;

    fn scalar_system(a: f64, n_points: usize, k: usize) -> SpaceTimeSystem {
        let rhs: Vec<f64> = (0..n_points).map(|i| 1.0 / (i + 1) as f64).collect();
        SpaceTimeSystem::uniform(Arc::new(DenseStep::scalar(a)), n_points, k, rhs).unwrap()
    }

    #[test]
    fn layout_validation() {
        assert_eq!(coarse_points(9, 4).unwrap(), 3);
        assert!(coarse_points(8, 4).is_err());
        assert!(coarse_points(3, 4).is_err());
    }

    #[test]
    fn inverse_pattern_scalar() {
        let a = 0.7;
        let sys = scalar_system(a, 3, 2);
        let inv = sys.closed_form_inverse();
        let want = [[1.0, 0.0, 0.0], [a, 1.0, 0.0], [a * a, a, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv[(i, j)] - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn closed_form_inverse_matches_dense_solve() {
        let steps: Vec<StepRef> = (0..4)
            .map(|s| {
                let m = Mat::from_fn(2, 2, |i, j| 0.3 * ((s + i + 2 * j) as f64).sin());
                Arc::new(DenseStep::new(&m)) as StepRef
            })
            .collect();
        let sys = SpaceTimeSystem::new(steps, 2, vec![0.0; 10]).unwrap();
        let inv = sys.closed_form_inverse();
        let oracle = inverse(sys.to_dense().as_ref(), "A").unwrap();
        assert!(frobenius((&inv - &oracle).as_ref()) < 1e-12);
        let f: Vec<f64> = (0..10).map(|i| (i as f64).cos()).collect();
        let fm = Mat::from_fn(10, 1, |i, _| f[i]);
        let u = &inv * &fm;
        let back = sys.apply(&(0..10).map(|i| u[(i, 0)]).collect::<Vec<_>>());
        for (x, y) in back.iter().zip(&f) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sequential_solve_is_time_stepping() {
        let sys = scalar_system(0.5, 5, 2);
        let u = sys.sequential_solve();
        let mut want = vec![sys.rhs()[0]];
        for l in 1..5 {
            want.push(0.5 * want[l - 1] + sys.rhs()[l]);
        }
        assert_eq!(u, want);
        assert!(sys.residual_norm(&u) < 1e-15);
    }

    #[test]
    fn schur_block_is_product_of_steps() {
        let sys = scalar_system(0.9, 5, 2);
        let blk = sys.schur_block_dense(1);
        assert!((blk[(0, 0)] - 0.81).abs() < 1e-15);
        let l = Mat::from_fn(3, 3, |i, j| if i == j { 1.0 + i as f64 } else { 0.2 });
        let be = lookup("SDIRK1").unwrap();
        let phi = be.propagator_matrix(l.as_ref(), 0.1).unwrap();
        let sys =
            SpaceTimeSystem::uniform(Arc::new(DenseStep::new(&phi)), 7, 3, vec![0.0; 21]).unwrap();
        let x = [1.0, -2.0, 0.5];
        let got = sys.schur_apply(2, &x);
        let mut cur = x.to_vec();
        for _ in 0..3 {
            cur = (0..3)
                .map(|i| (0..3).map(|j| phi[(i, j)] * cur[j]).sum())
                .collect();
        }
        for (a, b) in got.iter().zip(&cur) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn exact_coarse_converges_in_one_cycle() {
        for relax in [Relaxation::F, Relaxation::FCF] {
            let sys = scalar_system(0.95, 17, 4);
            let coarse = CoarseSystem::exact(&sys);
            let out = mgrit_solve(
                &sys,
                &coarse,
                random_guess(17, 3),
                &MgritOptions {
                    relax,
                    max_iters: 5,
                    tol: 1e-10,
                },
            )
            .unwrap();
            assert!(out.trace.converged);
            assert!(out.trace.iterations() <= 2);
        }
    }

    #[test]
    fn parareal_terminates_within_coarse_points() {
        let sys = scalar_system(0.9, 13, 3);
        let coarse = CoarseSystem::uniform(Arc::new(DenseStep::scalar(0.5)), sys.n_coarse());
        let out = mgrit_solve(
            &sys,
            &coarse,
            random_guess(13, 5),
            &MgritOptions {
                relax: Relaxation::F,
                max_iters: 50,
                tol: 1e-13,
            },
        )
        .unwrap();
        assert!(out.trace.iterations() <= sys.n_coarse());
        assert!(out.trace.converged);
        let seq = sys.sequential_solve();
        for (a, b) in out.solution.iter().zip(&seq) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn one_f_cycle_applies_coarse_error_propagator() {
        // zero rhs: the iterate is the error
        let (a, psi, k, nc) = (0.8, 0.6, 2, 5);
        let np = k * (nc - 1) + 1;
        let sys =
            SpaceTimeSystem::uniform(Arc::new(DenseStep::scalar(a)), np, k, vec![0.0; np]).unwrap();
        let coarse = CoarseSystem::uniform(Arc::new(DenseStep::scalar(psi)), nc);
        let ec: Vec<f64> = (0..nc).map(|j| (j as f64 + 1.0).sqrt()).collect();
        let mut u = vec![0.0; np];
        for j in 0..nc {
            u[j * k] = ec[j];
        }
        mgrit_cycle(&sys, &coarse, Relaxation::F, &mut u);
        let b = Mat::from_fn(nc, nc, |i, j| {
            if i == j {
                1.0
            } else if i == j + 1 {
                -psi
            } else {
                0.0
            }
        });
        let ad = Mat::from_fn(nc, nc, |i, j| {
            if i == j {
                1.0
            } else if i == j + 1 {
                -a * a
            } else {
                0.0
            }
        });
        let e = Mat::<f64>::identity(nc, nc) - inverse(b.as_ref(), "B").unwrap() * &ad;
        for i in 0..nc {
            let want: f64 = (0..nc).map(|j| e[(i, j)] * ec[j]).sum();
            assert!((u[i * k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_schedule_does_not_change_trace() {
        let l = Mat::from_fn(4, 4, |i, j| {
            if i == j {
                2.0
            } else if i + 1 == j {
                -1.0
            } else {
                0.0
            }
        });
        let be = lookup("SDIRK1").unwrap();
        let phi = be.propagator_matrix(l.as_ref(), 0.05).unwrap();
        let psi = be.propagator_matrix(l.as_ref(), 0.2).unwrap();
        let sys = SpaceTimeSystem::uniform(Arc::new(DenseStep::new(&phi)), 33, 4, vec![0.0; 132])
            .unwrap();
        let coarse = CoarseSystem::uniform(Arc::new(DenseStep::new(&psi)), sys.n_coarse());
        let opts = MgritOptions::default();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                mgrit_solve(&sys, &coarse, random_guess(132, 11), &opts)
                    .unwrap()
                    .trace
            })
        };
        let t1 = run(1);
        let t3 = run(3);
        assert_eq!(t1.residual_norms, t3.residual_norms);
    }

    #[test]
    fn divergence_flagged() {
        let sys = scalar_system(1.0, 65, 2);
        let coarse = CoarseSystem::uniform(Arc::new(DenseStep::scalar(-3.0)), sys.n_coarse());
        let out = mgrit_solve(
            &sys,
            &coarse,
            random_guess(65, 1),
            &MgritOptions {
                relax: Relaxation::F,
                max_iters: 100,
                tol: 1e-10,
            },
        )
        .unwrap();
        assert!(out.trace.diverged);
    }

    #[test]
    fn factor_examples() {
        let cf = convergence_factors(&[1.0, 0.5, 0.25], 1, 0.0).unwrap();
        assert_eq!((cf.worst, cf.avg), (0.5, 0.5));
        let cf = convergence_factors(&[1.0, 10.0, 1e-4, 1e-8], 1, 0.0).unwrap();
        assert!((cf.worst - 1e-4).abs() < 1e-18);
        let c: f64 = 0.3;
        let cf = convergence_factors(&[1.0, c, c * c, c * c * c], 0, 0.0).unwrap();
        assert!((cf.avg - c).abs() < 1e-14);
        assert!(convergence_factors(&[1.0, 0.1], 0, 0.0).is_err());
    }

    #[test]
    fn factors_stop_at_tolerance_floor() {
        let r = [1.0, 0.5, 0.25, 1e-11, 0.9e-11, 0.95e-11];
        let cf = convergence_factors(&r, 1, 1e-13).unwrap();
        assert_eq!(cf.window, 4);
        let cf = convergence_factors(&r, 1, 1e-10).unwrap();
        assert_eq!(cf.window, 2);
        assert_eq!(cf.worst, 0.5);
    }

    #[test]
    fn block_diagonal_matches_dense() {
        let blocks: Vec<RealMat> = (0..3)
            .map(|b| Mat::from_fn(2, 2, |i, j| (b * 4 + i * 2 + j) as f64))
            .collect();
        let bd = BlockDiagonalStep::new(&blocks);
        let dense = DenseStep::new(&bd.to_dense());
        let x: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let (mut y1, mut y2) = (vec![0.0; 6], vec![0.0; 6]);
        bd.apply(&x, &mut y1);
        dense.apply(&x, &mut y2);
        assert_eq!(y1, y2);
    }
}
