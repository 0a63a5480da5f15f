use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pint_conv::eigbounds::{complex_map, BoundKind, Region};
use pint_conv::harness::{
    self, map_cells, run_advection_study, run_mgrit, run_norms, run_tap_scan, run_wave_study,
    write_csv, write_json, AdvectionStudyConfig, MapPanel, RunConfig, TapScanConfig,
    WaveStudyConfig,
};
use pint_conv::{lookup, Error, ProblemConfig, Relaxation, VelocityField};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

const OUTPUTS: &str = "\
Outputs (under --out):
  run         run_residuals.csv   iteration,residual_norm,ratio
  norms       norms.csv           k,n_coarse,dt,residual_f,error_f,error_fcf,gsvd_f,gsvd_fcf
  bounds      bounds.csv          study columns (see wave-study), observed fields empty
  map         map_eval.csv | map_single_it.csv, plus map_lambda_k_{re,im}.csv and
              map_mu_{re,im}.csv with --panels; each re,im,value
  tap-scan    tap_scan.csv        x,phi_f,phi_fcf,single_it_f,single_it_fcf
  wave-study  wave_study.csv      k,n_points,n_coarse,dt,iterations,converged,diverged,
                                  worst_cf,avg_cf,eval_bound,eval_divergent,single_it,
                                  single_it_f,single_it_fcf,th3_lower,th3_upper,gsvd_f,
                                  gsvd_fcf,cond_u,defective,trust
  adv-study   adv_study.csv       same columns as wave_study.csv
Every command also writes <name>.json with version, seed, config and results.

Exit codes: 0 success, 2 usage or configuration error, 1 numerical failure.";

#[derive(Parser)]
#[command(
    name = "pint-conv",
    version,
    about = "Convergence bounds and experiments for linear two-level Parareal/MGRIT",
    after_help = OUTPUTS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one space-time problem with MGRIT and record residuals
    Run(RunArgs),
    /// Exact two-level propagator norms and GSVD constants
    Norms(NormsArgs),
    /// Eigenvalue and GSVD bounds per coarsening factor, without solving
    Bounds(BoundsArgs),
    /// Bound values over a rectangle of dt*xi in the complex plane
    Map(MapArgs),
    /// Approximation-property values as a function of x on [0, 2 pi]
    TapScan(TapScanArgs),
    /// Wave-equation coarsening sweep: bounds and observed factors
    WaveStudy(WaveStudyArgs),
    /// Advection-diffusion coarsening sweep: bounds and observed factors
    AdvStudy(AdvStudyArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory, created if missing
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// TOML file whose keys override the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cap on worker threads
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Adv,
    Wave,
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, value_enum, default_value = "adv")]
    problem: ProblemArg,
    /// Advection cells per dimension
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Advection velocity field: v1, v2, v3 or zero
    #[arg(long, default_value = "v1")]
    field: VelocityField,
    /// Advection diffusion in units of the mesh width
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Wave grid points per dimension, boundary included
    #[arg(long, default_value_t = 41)]
    m: usize,
    /// Wave speed squared
    #[arg(long, default_value_t = 10.0)]
    c2: f64,
}

impl ProblemArgs {
    fn config(&self) -> ProblemConfig {
        match self.problem {
            ProblemArg::Adv => ProblemConfig::AdvectionDiffusion {
                n: self.n,
                field: self.field,
                alpha_multiplier: self.alpha,
            },
            ProblemArg::Wave => ProblemConfig::WaveFirstOrder {
                m: self.m,
                c2: self.c2,
            },
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value = "FCF")]
    relax: Relaxation,
    /// Absolute l2 residual tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Seed for the random initial guess
    #[arg(long, env = "PINT_CONV_SEED", default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "SDIRK1")]
    scheme: String,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Points on the coarse time grid
    #[arg(long, default_value_t = 100)]
    coarse_points: usize,
    /// Fine time step; defaults per problem
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args)]
struct NormsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "SDIRK1")]
    scheme: String,
    /// Comma-separated coarsening factors
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    coarse_points: usize,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 65)]
    tap_samples: usize,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "SDIRK1")]
    scheme: String,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    k: Vec<usize>,
    /// Wave step-size ratio dt c^2 / dx
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
    #[arg(long, default_value = "FCF")]
    relax: Relaxation,
    /// Advection coarse-grid points
    #[arg(long, default_value_t = 100)]
    coarse_points: usize,
    /// Wave fine time steps
    #[arg(long, default_value_t = 4096)]
    steps: usize,
    #[arg(long, default_value_t = 65)]
    tap_samples: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum KindArg {
    Eval,
    SingleIt,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "SDIRK1")]
    scheme: String,
    /// Coarse scheme; the fine scheme when omitted
    #[arg(long)]
    coarse_scheme: Option<String>,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value = "F")]
    relax: Relaxation,
    #[arg(long, value_enum, default_value = "eval")]
    kind: KindArg,
    /// re_min,re_max,im_min,im_max
    #[arg(long, default_value = "-1,6,-6,6", allow_hyphen_values = true, value_parser = parse_region)]
    region: Region,
    /// Samples per axis
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    /// Also write Re/Im of lambda^k and mu
    #[arg(long)]
    panels: bool,
}

fn parse_region(s: &str) -> Result<Region, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [re_min, re_max, im_min, im_max] => Ok(Region {
            re_min,
            re_max,
            im_min,
            im_max,
        }),
        _ => Err(format!(
            "expected 4 comma-separated numbers, got {}",
            v.len()
        )),
    }
}

#[derive(Args)]
struct TapScanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value = "v1")]
    field: VelocityField,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value = "SDIRK1")]
    scheme: String,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    coarse_points: usize,
    #[arg(long, default_value_t = 129)]
    samples: usize,
}

#[derive(Args)]
struct WaveStudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
    #[arg(long, default_value = "SDIRK1")]
    scheme: String,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 41)]
    m: usize,
    #[arg(long, default_value_t = 10.0)]
    c2: f64,
    #[arg(long, default_value_t = 4096)]
    steps: usize,
    /// Skip the MGRIT solves
    #[arg(long)]
    bounds_only: bool,
}

#[derive(Args)]
struct AdvStudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value = "v1")]
    field: VelocityField,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value = "SDIRK1")]
    scheme: String,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    coarse_points: usize,
    #[arg(long, default_value_t = 65)]
    tap_samples: usize,
    /// Grid for the bounds when it differs from --n
    #[arg(long)]
    bound_n: Option<usize>,
    #[arg(long)]
    bounds_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormsConfig {
    problem: ProblemConfig,
    scheme: String,
    ks: Vec<usize>,
    coarse_points: usize,
    dt: Option<f64>,
    tap_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsConfig {
    problem: ProblemConfig,
    scheme: String,
    ks: Vec<usize>,
    ratio: f64,
    relax: Relaxation,
    coarse_points: usize,
    steps: usize,
    tap_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapConfig {
    scheme: String,
    coarse_scheme: Option<String>,
    k: usize,
    relax: Relaxation,
    kind: KindArg,
    region: Region,
    resolution: usize,
    panels: bool,
}

#[derive(Serialize)]
struct MapFile {
    panel: &'static str,
    file: String,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownScheme { .. }
            | Error::Config(_)
            | Error::InvalidGrid { .. }
            | Error::TimeLayout(_)
            | Error::SizeGuard { .. }
            | Error::KindMismatch { .. }
            | Error::Dimension(_) => Failure::Usage(e.to_string()),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

/// Flags first, then every key of the config file on top.
fn resolve<T: Serialize + DeserializeOwned>(base: T, file: Option<&Path>) -> Outcome<T> {
    let Some(path) = file else { return Ok(base) };
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let overlay: toml::Table = text
        .parse()
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut table = toml::Table::try_from(&base).map_err(|e| Failure::Usage(e.to_string()))?;
    table.extend(overlay);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn prepare(common: &Common) -> Outcome {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        // an already-initialised pool keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    fs::create_dir_all(&common.out)
        .map_err(|e| Failure::Numeric(format!("{}: {e}", common.out.display())))
}

fn emit<C: Serialize, R: harness::CsvRow + Serialize>(
    out: &Path,
    name: &str,
    config: &C,
    seed: Option<u64>,
    rows: &[R],
) -> Outcome {
    let csv = out.join(format!("{name}.csv"));
    let json = out.join(format!("{name}.json"));
    write_csv(&csv, rows)?;
    write_json(&json, config, seed, rows)?;
    println!("wrote {}", csv.display());
    println!("wrote {}", json.display());
    Ok(())
}

fn cmd_run(a: RunArgs) -> Outcome {
    prepare(&a.common)?;
    let base = RunConfig {
        problem: a.problem.config(),
        scheme: a.scheme,
        k: a.k,
        coarse_points: a.coarse_points,
        dt: a.dt,
        relax: a.solver.relax,
        tol: a.solver.tol,
        max_iters: a.solver.max_iters,
        seed: a.solver.seed,
    };
    let cfg = resolve(base, a.common.config.as_deref())?;
    lookup(&cfg.scheme)?;
    let (trace, rows) = run_mgrit(&cfg)?;
    emit(&a.common.out, "run_residuals", &cfg, Some(cfg.seed), &rows)?;
    println!(
        "{} iterations, converged: {}, diverged: {}",
        trace.iterations(),
        trace.converged,
        trace.diverged
    );
    Ok(())
}

fn cmd_norms(a: NormsArgs) -> Outcome {
    prepare(&a.common)?;
    let base = NormsConfig {
        problem: a.problem.config(),
        scheme: a.scheme,
        ks: a.k,
        coarse_points: a.coarse_points,
        dt: a.dt,
        tap_samples: a.tap_samples,
    };
    let cfg = resolve(base, a.common.config.as_deref())?;
    let scheme = lookup(&cfg.scheme)?;
    let problem = cfg.problem.build()?;
    let dt = cfg.dt.unwrap_or_else(|| match cfg.problem {
        ProblemConfig::AdvectionDiffusion { n, .. } => harness::advection_dt(n, scheme),
        ProblemConfig::WaveFirstOrder { c2, .. } => 0.1 * problem.mesh.h / c2,
    });
    let rows = run_norms(
        &problem.l,
        scheme,
        dt,
        &cfg.ks,
        cfg.coarse_points,
        cfg.tap_samples,
    )?;
    emit(&a.common.out, "norms", &cfg, None, &rows)
}

fn cmd_bounds(a: BoundsArgs) -> Outcome {
    prepare(&a.common)?;
    let base = BoundsConfig {
        problem: a.problem.config(),
        scheme: a.scheme,
        ks: a.k,
        ratio: a.ratio,
        relax: a.relax,
        coarse_points: a.coarse_points,
        steps: a.steps,
        tap_samples: a.tap_samples,
    };
    let cfg = resolve(base, a.common.config.as_deref())?;
    lookup(&cfg.scheme)?;
    let rows = match cfg.problem {
        ProblemConfig::WaveFirstOrder { m, c2 } => run_wave_study(&WaveStudyConfig {
            ratio: cfg.ratio,
            scheme: cfg.scheme.clone(),
            ks: cfg.ks.clone(),
            m,
            c2,
            steps: cfg.steps,
            relax: cfg.relax,
            observe: false,
            ..Default::default()
        })?,
        ProblemConfig::AdvectionDiffusion {
            n,
            field,
            alpha_multiplier,
        } => run_advection_study(&AdvectionStudyConfig {
            n,
            field,
            alpha_multiplier,
            scheme: cfg.scheme.clone(),
            ks: cfg.ks.clone(),
            coarse_points: cfg.coarse_points,
            relax: cfg.relax,
            tap_samples: cfg.tap_samples,
            observe: false,
            ..Default::default()
        })?,
    };
    emit(&a.common.out, "bounds", &cfg, None, &rows)
}

fn cmd_map(a: MapArgs) -> Outcome {
    prepare(&a.common)?;
    let base = MapConfig {
        scheme: a.scheme,
        coarse_scheme: a.coarse_scheme,
        k: a.k,
        relax: a.relax,
        kind: a.kind,
        region: a.region,
        resolution: a.resolution,
        panels: a.panels,
    };
    let cfg = resolve(base, a.common.config.as_deref())?;
    let fine = lookup(&cfg.scheme)?;
    let coarse = lookup(cfg.coarse_scheme.as_deref().unwrap_or(&cfg.scheme))?;
    let kind = match cfg.kind {
        KindArg::Eval => BoundKind::Eval,
        KindArg::SingleIt => BoundKind::SingleIt,
    };
    let map = complex_map(
        fine,
        coarse,
        cfg.k,
        cfg.relax,
        kind,
        cfg.region,
        (cfg.resolution, cfg.resolution),
    )?;
    let mut panels = vec![MapPanel::Bound(kind)];
    if cfg.panels {
        panels.extend([
            MapPanel::LambdaKRe,
            MapPanel::LambdaKIm,
            MapPanel::MuRe,
            MapPanel::MuIm,
        ]);
    }
    let mut files = Vec::new();
    for p in panels {
        let path = a.common.out.join(format!("{}.csv", p.file_stem()));
        write_csv(&path, &map_cells(&map, p))?;
        println!("wrote {}", path.display());
        files.push(MapFile {
            panel: p.file_stem(),
            file: path.display().to_string(),
        });
    }
    let poles = map.pole.iter().filter(|&&p| p).count();
    if poles > 0 {
        println!("{poles} grid points hit a pole of the stability function (value NaN)");
    }
    let json = a.common.out.join("map.json");
    write_json(&json, &cfg, None, &files)?;
    println!("wrote {}", json.display());
    Ok(())
}

fn cmd_tap_scan(a: TapScanArgs) -> Outcome {
    prepare(&a.common)?;
    let base = TapScanConfig {
        n: a.n,
        field: a.field,
        alpha_multiplier: a.alpha,
        scheme: a.scheme,
        k: a.k,
        coarse_points: a.coarse_points,
        samples: a.samples,
    };
    let cfg = resolve(base, a.common.config.as_deref())?;
    lookup(&cfg.scheme)?;
    let rows = run_tap_scan(&cfg)?;
    emit(&a.common.out, "tap_scan", &cfg, None, &rows)
}

fn cmd_wave_study(a: WaveStudyArgs) -> Outcome {
    prepare(&a.common)?;
    let base = WaveStudyConfig {
        ratio: a.ratio,
        scheme: a.scheme,
        ks: a.k,
        m: a.m,
        c2: a.c2,
        steps: a.steps,
        relax: a.solver.relax,
        tol: a.solver.tol,
        max_iters: a.solver.max_iters,
        seed: a.solver.seed,
        observe: !a.bounds_only,
    };
    let cfg = resolve(base, a.common.config.as_deref())?;
    lookup(&cfg.scheme)?;
    let rows = run_wave_study(&cfg)?;
    emit(&a.common.out, "wave_study", &cfg, Some(cfg.seed), &rows)
}

fn cmd_adv_study(a: AdvStudyArgs) -> Outcome {
    prepare(&a.common)?;
    let base = AdvectionStudyConfig {
        n: a.n,
        field: a.field,
        alpha_multiplier: a.alpha,
        scheme: a.scheme,
        ks: a.k,
        coarse_points: a.coarse_points,
        relax: a.solver.relax,
        tol: a.solver.tol,
        max_iters: a.solver.max_iters,
        seed: a.solver.seed,
        tap_samples: a.tap_samples,
        bound_n: a.bound_n,
        observe: !a.bounds_only,
    };
    let cfg = resolve(base, a.common.config.as_deref())?;
    lookup(&cfg.scheme)?;
    let rows = run_advection_study(&cfg)?;
    emit(&a.common.out, "adv_study", &cfg, Some(cfg.seed), &rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Norms(a) => cmd_norms(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Map(a) => cmd_map(a),
        Command::TapScan(a) => cmd_tap_scan(a),
        Command::WaveStudy(a) => cmd_wave_study(a),
        Command::AdvStudy(a) => cmd_adv_study(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
