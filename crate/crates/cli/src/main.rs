use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use phasekit::interval::PhaseInterval;
use phasekit::lti::{self, StateSpaceSystem, SystemJson};
use phasekit::matrix_phase::{self, ComplexSquareMatrix, MatrixJson, MatrixPhaseBound};
use phasekit::oracles::{self, OracleConfig};
use phasekit::stability::{self, CertConfig, CertificationReport, CyclicLoop, LoopJson, ScaledSearch, Subsystem};
use phasekit::PhaseError;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "phasekit", version, about = "Segmental phase analysis and phase-based loop stability certificates")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyses of a constant complex matrix
    #[command(subcommand)]
    Matrix(MatrixCmd),
    /// Frequency responses of an LTI system
    #[command(subcommand)]
    Sys(SysCmd),
    /// Certify stability of a cyclic feedback loop
    Certify(CertifyArgs),
    /// Brute-force references
    #[command(subcommand)]
    Oracle(OracleCmd),
}

#[derive(Subcommand)]
enum MatrixCmd {
    /// Segmental phase with sectorial and principal comparisons
    Phase(MatrixPhaseArgs),
    /// Boundary points of the normalized numerical range as CSV
    Nnr(NnrArgs),
}

#[derive(Subcommand)]
enum SysCmd {
    /// Phase response along the indented jω-axis, as CSV
    Phase(SysArgs),
    /// Largest and smallest singular values on the grid, as CSV
    Gain(SysArgs),
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Sampled lower bound on the singular angle of a matrix
    Angle(OracleAngleArgs),
    /// Closed-loop eigenvalues and Nyquist winding of a loop with known subsystems
    Stable(LoopArgs),
    /// Random matrices with segmental phase inside [alpha, beta]
    Sample(OracleSampleArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = matrix_phase::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = matrix_phase::DEFAULT_SEED)]
    seed: u64,
    /// Write the result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixPhaseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Report the phase relative to this center instead of the optimal one
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct NnrArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 360)]
    dirs: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Grid {
    #[arg(long, default_value_t = 1e-2)]
    wmin: f64,
    #[arg(long, default_value_t = 1e2)]
    wmax: f64,
    #[arg(long, default_value_t = 200)]
    ppd: usize,
    /// Indentation radius around jω-axis poles and zeros
    #[arg(long)]
    epsilon: Option<f64>,
}

impl Grid {
    fn validate(&self) -> anyhow::Result<()> {
        if !(self.wmin > 0.0 && self.wmin < self.wmax) {
            bail!("need 0 < wmin < wmax");
        }
        if self.ppd < 10 {
            bail!("ppd must be at least 10");
        }
        Ok(())
    }
}

#[derive(Args)]
struct SysArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    grid: Grid,
    /// Emit the response even if the assumptions fail
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum TheoremArg {
    Gain,
    Phase,
    Mixed,
    Scaled,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long = "loop", alias = "input")]
    loop_path: PathBuf,
    #[arg(long, value_enum)]
    theorem: TheoremArg,
    /// Cross-check with the closed-loop eigenvalues, the Nyquist winding and sampled instances
    #[arg(long)]
    verify: bool,
    /// Mixed test only: phase condition below this frequency, gain condition above
    #[arg(long)]
    split: Option<f64>,
    /// Scaled test only: pin every γ_k to the phase center
    #[arg(long)]
    default_centers: bool,
    #[command(flatten)]
    grid: Grid,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LoopArgs {
    #[arg(long = "loop", alias = "input")]
    loop_path: PathBuf,
    #[command(flatten)]
    grid: Grid,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct OracleAngleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct OracleSampleArgs {
    #[arg(long, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[command(flatten)]
    common: Common,
}

/// Error tagged with the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let code = match err.downcast_ref::<PhaseError>() {
            Some(PhaseError::ZeroMatrix) => 3,
            Some(
                PhaseError::AssumptionViolation(_)
                | PhaseError::NotSemiStable(_)
                | PhaseError::NotFullNormalRank
                | PhaseError::RankDeficientLeadingCoeff { .. }
                | PhaseError::PoleZeroCollision { .. }
                | PhaseError::PoleOrderTooHigh { .. }
                | PhaseError::SemiStableNotAllowed { .. }
                | PhaseError::CancellationPresent,
            ) => 4,
            Some(_) => 5,
            None => 2,
        };
        Failure { code, err }
    }
}

type Fallible<T> = std::result::Result<T, Failure>;
type Outcome = Fallible<u8>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(out: &Option<PathBuf>, v: &Value) -> anyhow::Result<()> {
    emit(out, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn deg(x: f64) -> f64 {
    x.to_degrees()
}

fn interval_json(iv: &PhaseInterval) -> (Value, Value) {
    match iv.bounds() {
        Some((lo, hi)) => (json!([lo, hi]), json!([deg(lo), deg(hi)])),
        None => (Value::Null, Value::Null),
    }
}

fn load_matrix(path: &Path) -> Fallible<ComplexSquareMatrix> {
    let j: MatrixJson = read_json(path)?;
    ComplexSquareMatrix::from_json(&j).map_err(|e| Failure {
        code: if matches!(e, PhaseError::ZeroMatrix) { 3 } else { 2 },
        err: e.into(),
    })
}

fn cmd_matrix_phase(a: &MatrixPhaseArgs) -> Outcome {
    let m = load_matrix(&a.input)?;
    let tol = a.common.tol;
    let sp = matrix_phase::segmental_phase_seeded(&m, tol, a.common.seed)?;
    let branches: Vec<Value> = sp
        .branches
        .iter()
        .map(|b| {
            let (rad, dg) = interval_json(&b.interval());
            json!({
                "center_rad": b.center, "center_deg": deg(b.center),
                "radius_rad": b.radius, "radius_deg": deg(b.radius),
                "interval_rad": rad, "interval_deg": dg,
            })
        })
        .collect();
    let shown = match a.gamma {
        Some(g) => matrix_phase::gamma_segmental_phase(&m, g, tol)?,
        None => sp.interval(),
    };
    let (rad, dg) = interval_json(&shown);
    let sectorial = matrix_phase::is_sectorial(&m, tol);
    let sect = if sectorial {
        let (r, d) = interval_json(&matrix_phase::sectorial_phase(&m, tol)?);
        json!({"is_sectorial": true, "interval_rad": r, "interval_deg": d})
    } else {
        json!({"is_sectorial": false})
    };
    let principal = match matrix_phase::principal_phase(&m, tol) {
        Ok(p) => {
            let (r, d) = interval_json(&p.interval());
            json!({"interval_rad": r, "interval_deg": d})
        }
        Err(_) => Value::Null,
    };
    let eig: Vec<f64> = matrix_phase::eigen_args(&m);
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "n": m.n(),
        "gamma": a.gamma,
        "interval_rad": rad,
        "interval_deg": dg,
        "gamma_star": sp.branches.iter().map(|b| b.center).collect::<Vec<_>>(),
        "gamma_star_deg": sp.branches.iter().map(|b| deg(b.center)).collect::<Vec<_>>(),
        "r_star": sp.radius(),
        "r_star_deg": deg(sp.radius()),
        "degenerate": sp.degenerate,
        "branches": branches,
        "sectorial": sect,
        "comparisons": {
            "principal": principal,
            "eigen_args_rad": eig,
            "eigen_args_deg": eig.iter().map(|x| deg(*x)).collect::<Vec<_>>(),
        },
    });
    emit_json(&a.common.out, &report)?;
    Ok(0)
}

fn cmd_matrix_nnr(a: &NnrArgs) -> Outcome {
    let m = load_matrix(&a.input)?;
    let b = matrix_phase::nnr_boundary(&m, a.dirs, a.common.tol)?;
    let mut csv = String::from("direction,re,im\n");
    for (d, z) in b.directions.iter().zip(&b.points) {
        csv.push_str(&format!("{d},{},{}\n", z.re, z.im));
    }
    emit(&a.common.out, &csv)?;
    Ok(0)
}

fn load_system(path: &Path) -> Fallible<StateSpaceSystem> {
    let j: SystemJson = read_json(path)?;
    StateSpaceSystem::from_json(&j).map_err(|e| Failure { code: 2, err: e.into() })
}

fn cmd_sys_phase(a: &SysArgs) -> Outcome {
    a.grid.validate()?;
    let p = load_system(&a.input)?;
    let tol = a.common.tol;
    let grid = lti::log_grid(a.grid.wmin, a.grid.wmax, a.grid.ppd);
    let structure = lti::jw_structure(&p);
    let report = lti::check_assumptions(&p, &grid, tol);
    if !report.passed() {
        if !a.force {
            return Err(Failure {
                code: 4,
                err: anyhow::anyhow!("assumption violated: {}", report.messages.join("; ")),
            });
        }
        eprintln!("warning: {}", report.messages.join("; "));
    }
    let omegas = structure.map(|s| s.frequencies()).unwrap_or_default();
    let eps = a.grid.epsilon.unwrap_or_else(|| lti::default_epsilon(&omegas));
    let contour = lti::indented_contour(&omegas, eps, a.grid.wmin, a.grid.wmax, a.grid.ppd, lti::SEMICIRCLE_POINTS)?;
    let resp = if a.force {
        lti::phase_response_nearest_branch(&p, &contour, tol, a.common.seed)?
    } else {
        lti::phase_response_seeded(&p, &contour, tol, a.common.seed)?
    };
    emit(&a.common.out, &resp.to_csv())?;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "omega_set": omegas,
        "epsilon": eps,
        "assumptions": report,
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    if a.common.out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    Ok(0)
}

fn cmd_sys_gain(a: &SysArgs) -> Outcome {
    a.grid.validate()?;
    let p = load_system(&a.input)?;
    let grid = lti::log_grid(a.grid.wmin, a.grid.wmax, a.grid.ppd);
    let mut csv = String::from("omega,sigma_min,sigma_max\n");
    for (w, (lo, hi)) in grid.iter().zip(lti::gain_response(&p, &grid)) {
        csv.push_str(&format!("{w},{lo},{hi}\n"));
    }
    emit(&a.common.out, &csv)?;
    Ok(0)
}

fn cert_config(grid: &Grid, common: &Common, split: Option<f64>) -> CertConfig {
    CertConfig {
        omega_min: grid.wmin,
        omega_max: grid.wmax,
        points_per_decade: grid.ppd,
        epsilon: grid.epsilon,
        tol: common.tol,
        seed: common.seed,
        split,
    }
}

fn load_loop(path: &Path) -> Fallible<CyclicLoop> {
    let j: LoopJson = read_json(path)?;
    CyclicLoop::from_json(&j).map_err(|e| Failure { code: 2, err: e.into() })
}

fn margin_rows(rep: &CertificationReport) -> Vec<Value> {
    rep.samples
        .iter()
        .map(|s| {
            json!({
                "omega": s.omega,
                "s": [s.s.re, s.s.im],
                "semicircle": s.on_semicircle,
                "condition": s.condition,
                "gain_margin": s.gain_margin,
                "phase_margin_rad": s.phase_margin,
                "phase_margin_deg": s.phase_margin.map(deg),
            })
        })
        .collect()
}

/// Oracle checks on the loop itself, or on concrete instances when some subsystems are uncertain.
fn verify(lp: &CyclicLoop, cfg: &CertConfig) -> anyhow::Result<Value> {
    let concrete = lp.subsystems.iter().all(|s| matches!(s, Subsystem::Known(_)));
    if concrete {
        let stable = stability::oracle_is_stable(lp);
        let winding = stability::nyquist_winding(lp, cfg);
        return Ok(json!({
            "oracle_stable": stable.as_ref().ok(),
            "oracle_error": stable.err().map(|e| e.to_string()),
            "nyquist_winding": winding.as_ref().ok(),
            "nyquist_error": winding.err().map(|e| e.to_string()),
        }));
    }
    let grid = lti::log_grid(cfg.omega_min, cfg.omega_max, cfg.points_per_decade.min(20));
    let ocfg = OracleConfig::new(20, cfg.seed)?;
    let mut pools = Vec::new();
    for s in &lp.subsystems {
        pools.push(match s {
            Subsystem::Known(p) => vec![p.clone()],
            Subsystem::Uncertain(u) => {
                let mut v = u.samples.clone();
                v.extend(oracles::sampled_uncertain_systems(u, lp.n, &grid, &ocfg)?);
                v
            }
        });
    }
    let count = pools.iter().map(Vec::len).max().unwrap_or(0);
    let mut unstable = Vec::new();
    for k in 0..count {
        let members: Vec<StateSpaceSystem> = pools.iter().map(|p| p[k % p.len()].clone()).collect();
        let inst = CyclicLoop::known(members)?;
        match stability::oracle_is_stable(&inst) {
            Ok(true) => {}
            Ok(false) => unstable.push(k),
            Err(e) => bail!("instance {k}: {e}"),
        }
    }
    Ok(json!({"instances": count, "unstable_instances": unstable, "all_stable": unstable.is_empty()}))
}

fn cmd_certify(a: &CertifyArgs) -> Outcome {
    a.grid.validate()?;
    let lp = load_loop(&a.loop_path)?;
    let cfg = cert_config(&a.grid, &a.common, a.split);
    let start = Instant::now();
    let rep = match a.theorem {
        TheoremArg::Gain => stability::certify_small_gain(&lp, &cfg)?,
        TheoremArg::Phase => stability::certify_small_phase(&lp, &cfg)?,
        TheoremArg::Mixed => stability::certify_mixed(&lp, &cfg)?,
        TheoremArg::Scaled => {
            let search = ScaledSearch {
                default_centers: a.default_centers,
                ..ScaledSearch::default()
            };
            stability::certify_scaled(&lp, &cfg, &search)?
        }
    };
    let check = if a.verify { Some(verify(&lp, &cfg)?) } else { None };
    let elapsed = start.elapsed().as_secs_f64();
    let worst = rep.worst.as_ref().map(|w| json!({"omega": w.omega, "s": [w.s.re, w.s.im], "condition": w.condition}));
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "verdict": rep.verdict,
        "theorem": rep.theorem,
        "grid": {"wmin": cfg.omega_min, "wmax": cfg.omega_max, "ppd": cfg.points_per_decade, "epsilon": cfg.epsilon, "split": cfg.split},
        "min_margin": rep.min_margin,
        "min_margin_deg": if rep.theorem == stability::Theorem::Gain { Value::Null } else { json!(deg(rep.min_margin)) },
        "worst": worst,
        "branch": rep.branch,
        "infinity_ok": rep.infinity_ok,
        "no_cancellation": rep.no_cancellation,
        "gamma_profiles": rep.gamma_profiles,
        "notes": rep.notes,
        "margins": margin_rows(&rep),
        "verify": check,
        "timing_s": elapsed,
    });
    emit_json(&a.common.out, &report)?;
    Ok(if rep.is_certified() { 0 } else { 1 })
}

fn cmd_oracle_angle(a: &OracleAngleArgs) -> Outcome {
    let m = load_matrix(&a.input)?;
    let cfg = OracleConfig::new(a.samples, a.common.seed)?;
    let sampled = oracles::sampled_singular_angle(&m, &cfg);
    let exact = matrix_phase::singular_angle(&m, a.common.tol)?;
    emit_json(
        &a.common.out,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "samples": a.samples,
            "sampled_rad": sampled, "sampled_deg": deg(sampled),
            "optimized_rad": exact, "optimized_deg": deg(exact),
        }),
    )?;
    Ok(0)
}

fn cmd_oracle_stable(a: &LoopArgs) -> Outcome {
    a.grid.validate()?;
    let lp = load_loop(&a.loop_path)?;
    let cfg = cert_config(&a.grid, &a.common, None);
    let mut v = verify(&lp, &cfg)?;
    v["schema_version"] = json!(SCHEMA_VERSION);
    emit_json(&a.common.out, &v)?;
    Ok(0)
}

fn cmd_oracle_sample(a: &OracleSampleArgs) -> Outcome {
    let bound = MatrixPhaseBound::new(a.alpha, a.beta)?;
    let cfg = OracleConfig::new(a.samples, a.common.seed)?;
    let mats = oracles::sampled_uncertain_matrices(&bound, a.n, &cfg)?;
    let list: Vec<MatrixJson> = mats.iter().map(ComplexSquareMatrix::to_json).collect();
    emit_json(&a.common.out, &json!({"schema_version": SCHEMA_VERSION, "matrices": list}))?;
    Ok(0)
}

fn run(cli: Cli) -> Outcome {
    match &cli.cmd {
        Command::Matrix(MatrixCmd::Phase(a)) => cmd_matrix_phase(a),
        Command::Matrix(MatrixCmd::Nnr(a)) => cmd_matrix_nnr(a),
        Command::Sys(SysCmd::Phase(a)) => cmd_sys_phase(a),
        Command::Sys(SysCmd::Gain(a)) => cmd_sys_gain(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Oracle(OracleCmd::Angle(a)) => cmd_oracle_angle(a),
        Command::Oracle(OracleCmd::Stable(a)) => cmd_oracle_stable(a),
        Command::Oracle(OracleCmd::Sample(a)) => cmd_oracle_sample(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("PHASEKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
