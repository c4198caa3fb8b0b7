//! Experiment harness: JSON run specs, per-seed CSV trajectory emission,
//! log-log rate fitting, and named verification suites.
//!
//! The on-disk spec format is JSON with tagged problem/solver/schedule
//! sections (see [`RunSpec`]); trajectory CSVs use the fixed column schema
//! `t, grad_norm_sq, delta_t, delta_y_t, objective, eta_t, gamma_t` with
//! empty cells where a metric does not apply. Fixed spec + seeds produce
//! byte-identical CSVs (strict IEEE-754 doubles, no FMA reassociation in
//! the core loops).
//!
//! The harness doubles as a library; for instance the rate fitter used by
//! the decreasing-schedule checks (this example also appears in the
//! guide's harness chapter):
//!
//! ```
//! use sema_opt::harness::fit_rate;
//!
//! let points: Vec<(f64, f64)> = (1..=12).map(|i| {
//!     let t = 1000.0 * 2f64.powi(i);
//!     (t, 5.0 / t.sqrt())
//! }).collect();
//! let fit = fit_rate(&points).unwrap();
//! assert!((fit.slope + 0.5).abs() < 1e-6);
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bilevel::{make_sbma_schedule, make_smb_schedule, sbma_run, smb_run, BilevelConfig};
use crate::minimize::{
    asa_run, make_schedule_constant, make_schedule_decreasing, make_schedule_stagewise,
    shb_equivalence_check, MinProblem, Schedule,
};
use crate::minmax::{
    make_minmax_schedule, pd_run, DualSet, MinMaxConfig, MinMaxProblem,
};
use crate::problems::{
    fd_check, make_auc_minmax, make_bilevel_quadratic, make_dual_pl_saddle,
    make_pl_least_squares, make_quadratic, make_reddi_drift, make_saddle_quadratic,
    reddi_fixture, reddi_grid_search, PROBLEM_IDS,
};
use crate::rng::Stream;
use crate::scalers::{effective_bounds, scaler_update, step_scale, ScalerKind, ScalerState};
use crate::sema::{
    neumann_bias_check, sema_recursion_replicate, variance_recursion_check, NeumannConfig,
    RecursionRunCfg,
};
use crate::vecmat::{Mat, Vector};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Run specifications
// ---------------------------------------------------------------------------

/// Problem section of a run spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        d: usize,
        cond: f64,
        seed: u64,
        #[serde(default)]
        sigma: f64,
    },
    PlLeastSquares {
        d: usize,
        rank: usize,
        seed: u64,
        #[serde(default)]
        sigma: f64,
    },
    SaddleQuadratic {
        d: usize,
        d_dual: usize,
        lambda: f64,
        seed: u64,
        #[serde(default)]
        sigma: f64,
    },
    DualPlSaddle {
        d: usize,
        d_dual: usize,
        lambda: f64,
        seed: u64,
        #[serde(default)]
        sigma: f64,
    },
    AucMinmax {
        n_pos: usize,
        n_neg: usize,
        d: usize,
        separation: f64,
        seed: u64,
    },
    BilevelQuadratic {
        d: usize,
        d_dual: usize,
        lambda: f64,
        seed: u64,
        #[serde(default)]
        noise: f64,
    },
}

/// Solver section: which driver family runs the problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSpec {
    /// Single-loop minimization with a named scaler tag.
    Minimize {
        scaler: String,
        #[serde(default)]
        g0: f64,
    },
    /// Primal-dual min-max; `scaler: null` is the plain method, a tag
    /// selects the adaptive variant.
    Minmax {
        #[serde(default)]
        scaler: Option<String>,
        #[serde(default)]
        g0: f64,
    },
    /// Bilevel: `method` is `"smb"` or `"sbma"`.
    Bilevel {
        method: String,
        #[serde(default)]
        exact_inverse: bool,
    },
}

/// Schedule section: explicit hyperparameters or a theorem-driven target.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Fixed `(γ, η, T)`; min-max and bilevel additionally read `eta_y`
    /// (defaulting to `eta`) and bilevel reads `k_neumann` (default 5).
    Explicit {
        gamma: f64,
        eta: f64,
        t: usize,
        #[serde(default)]
        eta_y: Option<f64>,
        #[serde(default)]
        k_neumann: Option<usize>,
    },
    /// Derived from the corresponding convergence theorem at accuracy
    /// `eps`. `variant` selects `constant` (default), `decreasing` (with
    /// `t` as the horizon), or `stagewise` for minimization.
    Theorem {
        eps: f64,
        #[serde(default)]
        variant: Option<String>,
        #[serde(default)]
        t: Option<usize>,
    },
}

/// A complete run description (canonical on-disk form: JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: ProblemSpec,
    pub solver: SolverSpec,
    pub schedule: ScheduleSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<String>,
}

impl RunSpec {
    pub fn from_json(text: &str) -> Result<RunSpec> {
        let spec: RunSpec = serde_json::from_str(text)?;
        if spec.seeds.is_empty() {
            return Err(Error::config("run spec needs at least one seed"));
        }
        Ok(spec)
    }
}

/// Execution options supplied by the CLI.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
    /// Added to every seed (`SEMA_OPT_SEED_BASE`).
    pub seed_base: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { out_dir: PathBuf::from("runs"), jobs: 1, seed_base: 0 }
    }
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Per-seed outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_grad_norm_sq: f64,
    pub avg_grad_norm_sq: f64,
    pub avg_delta: f64,
    pub avg_delta_y: Option<f64>,
    pub slope: Option<RateFit>,
    pub wall_time_s: f64,
    pub diverged: bool,
}

/// Seed-averaged record plus the per-seed details.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRecord {
    pub spec_name: String,
    pub seeds: Vec<SeedSummary>,
    pub mean_final_grad_norm_sq: f64,
    pub mean_avg_grad_norm_sq: f64,
    pub mean_avg_delta: f64,
    pub mean_avg_delta_y: Option<f64>,
}

/// One trajectory CSV row; `None` renders as an empty cell.
#[derive(Debug, Clone, Copy)]
struct CsvRow {
    t: usize,
    grad_norm_sq: f64,
    delta: Option<f64>,
    delta_y: Option<f64>,
    objective: Option<f64>,
    eta: Option<f64>,
    gamma: Option<f64>,
}

const CSV_HEADER: &str = "t,grad_norm_sq,delta_t,delta_y_t,objective,eta_t,gamma_t";

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.17e}"),
        None => String::new(),
    }
}

fn rows_to_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t,
            fmt_cell(Some(r.grad_norm_sq)),
            fmt_cell(r.delta),
            fmt_cell(r.delta_y),
            fmt_cell(r.objective),
            fmt_cell(r.eta),
            fmt_cell(r.gamma),
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

/// Log-log slope with a residual-bootstrap confidence interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Ordinary least squares on `(log t, log y)` with a 200-resample residual
/// bootstrap for the 95% CI. Needs at least 10 points with `t, y > 0`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 10 {
        return Err(Error::config(format!(
            "rate fit needs >= 10 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(t, y)| t <= 0.0 || y <= 0.0) {
        return Err(Error::config("rate fit needs strictly positive t and metric values"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let ols = |ys: &[f64]| -> (f64, f64) {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        (slope, my - slope * mx)
    };
    let (slope, intercept) = ols(&ys);
    let residuals: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let mut stream = Stream::new(0xB007, 0);
    let mut slopes = Vec::with_capacity(200);
    for _ in 0..200 {
        let resampled: Vec<f64> = xs
            .iter()
            .map(|x| intercept + slope * x + residuals[stream.index(residuals.len())])
            .collect();
        slopes.push(ols(&resampled).0);
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    Ok(RateFit { slope, ci_lo: slopes[4], ci_hi: slopes[194] })
}

// ---------------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------------

fn parse_scaler(tag: &str) -> Result<ScalerKind> {
    ScalerKind::from_tag(tag)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

enum BuiltProblem {
    Min(MinProblem),
    MinMax(MinMaxProblem),
    Bilevel(crate::bilevel::BilevelProblem, crate::bilevel::BilevelMeta),
}

fn build_problem(spec: &ProblemSpec, solver: &SolverSpec) -> Result<BuiltProblem> {
    match (spec, solver) {
        (ProblemSpec::Quadratic { d, cond, seed, sigma }, SolverSpec::Minimize { .. }) => {
            Ok(BuiltProblem::Min(make_quadratic(*d, *cond, *seed).min_problem(*sigma)))
        }
        (ProblemSpec::PlLeastSquares { d, rank, seed, sigma }, SolverSpec::Minimize { .. }) => {
            Ok(BuiltProblem::Min(make_pl_least_squares(*d, *rank, *seed)?.min_problem(*sigma)))
        }
        (
            ProblemSpec::SaddleQuadratic { d, d_dual, lambda, seed, sigma },
            SolverSpec::Minmax { .. },
        ) => Ok(BuiltProblem::MinMax(
            make_saddle_quadratic(*d, *d_dual, *lambda, *seed)?.min_max_problem(*sigma),
        )),
        (
            ProblemSpec::DualPlSaddle { d, d_dual, lambda, seed, sigma },
            SolverSpec::Minmax { .. },
        ) => Ok(BuiltProblem::MinMax(
            make_dual_pl_saddle(*d, *d_dual, *lambda, *seed)?.min_max_problem(*sigma),
        )),
        (
            ProblemSpec::AucMinmax { n_pos, n_neg, d, separation, seed },
            SolverSpec::Minmax { .. },
        ) => {
            let auc = std::sync::Arc::new(make_auc_minmax(*n_pos, *n_neg, *d, *separation, *seed)?);
            Ok(BuiltProblem::MinMax(auc.min_max_problem()))
        }
        (
            ProblemSpec::BilevelQuadratic { d, d_dual, lambda, seed, noise },
            SolverSpec::Bilevel { .. },
        ) => {
            let bq = make_bilevel_quadratic(*d, *d_dual, *lambda, *seed)?;
            let problem = bq.bilevel_problem(*noise)?;
            let meta = bq.bilevel_meta(&problem);
            Ok(BuiltProblem::Bilevel(problem, meta))
        }
        _ => Err(Error::config(
            "problem kind does not match solver family (e.g. a saddle problem needs the minmax solver)",
        )),
    }
}

fn minimize_schedule(
    problem: &MinProblem,
    kind: &ScalerKind,
    g0: f64,
    spec: &ScheduleSpec,
) -> Result<Schedule> {
    match spec {
        ScheduleSpec::Explicit { gamma, eta, t, .. } => Ok(Schedule::constant(*gamma, *eta, *t)),
        ScheduleSpec::Theorem { eps, variant, t } => {
            let bounds = problem.scaler_bounds(kind, g0)?;
            let meta = problem.schedule_meta(&mut Stream::new(0xA11A, 0))?;
            match variant.as_deref().unwrap_or("constant") {
                "constant" => make_schedule_constant(*eps, &meta, bounds),
                "decreasing" => {
                    let horizon = t.ok_or_else(|| {
                        Error::config("decreasing schedule needs an explicit horizon t")
                    })?;
                    make_schedule_decreasing(&meta, bounds, horizon)
                }
                "stagewise" => {
                    let mu = problem.mu.ok_or_else(|| {
                        Error::config("stagewise schedule needs a PL constant on the problem")
                    })?;
                    make_schedule_stagewise(mu, *eps, &meta, bounds)
                }
                other => Err(Error::config(format!("unknown schedule variant \"{other}\""))),
            }
        }
    }
}

/// Execute all seeds of a spec, writing one trajectory CSV per seed plus
/// `summary.csv` and `summary.json` into the output directory. Returns the
/// aggregate record; any divergence surfaces as an error after all files
/// for completed seeds are written.
pub fn run(spec: &RunSpec, opts: &RunOptions) -> Result<SummaryRecord> {
    let built = build_problem(&spec.problem, &spec.solver)?;
    let out_dir = spec
        .out
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| opts.out_dir.clone());
    fs::create_dir_all(&out_dir)?;

    let seeds: Vec<u64> = spec.seeds.iter().map(|s| s + opts.seed_base).collect();
    let jobs = opts.jobs.max(1);
    let mut results: Vec<Result<(SeedSummary, Vec<CsvRow>)>> = Vec::with_capacity(seeds.len());
    // Chunked scoped threads; results land in seed order regardless of
    // completion order.
    for chunk in seeds.chunks(jobs) {
        let mut chunk_out: Vec<Option<Result<(SeedSummary, Vec<CsvRow>)>>> =
            (0..chunk.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for &seed in chunk {
                let built = &built;
                let spec = &spec;
                handles.push(scope.spawn(move || run_one_seed(built, spec, seed)));
            }
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("seed worker panicked"));
            }
        });
        results.extend(chunk_out.into_iter().map(|r| r.expect("missing result")));
    }

    let mut summaries = Vec::new();
    let mut first_err = None;
    for (seed, res) in seeds.iter().zip(results) {
        match res {
            Ok((summary, rows)) => {
                let path = out_dir.join(format!("seed_{seed}.csv"));
                fs::write(&path, rows_to_csv(&rows))?;
                summaries.push(summary);
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let n = summaries.len() as f64;
    let mean = |f: &dyn Fn(&SeedSummary) -> f64| summaries.iter().map(|s| f(s)).sum::<f64>() / n;
    let record = SummaryRecord {
        spec_name: sanitize(&format!("{:?}", spec.problem)),
        mean_final_grad_norm_sq: mean(&|s| s.final_grad_norm_sq),
        mean_avg_grad_norm_sq: mean(&|s| s.avg_grad_norm_sq),
        mean_avg_delta: mean(&|s| s.avg_delta),
        mean_avg_delta_y: summaries[0]
            .avg_delta_y
            .map(|_| mean(&|s| s.avg_delta_y.unwrap_or(0.0))),
        seeds: summaries,
    };

    // summary.csv: per-seed metric rows plus a mean row (no wall times so
    // repeated runs stay byte-identical).
    let mut csv = String::from("seed,final_grad_norm_sq,avg_grad_norm_sq,avg_delta,avg_delta_y\n");
    for s in &record.seeds {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.seed,
            fmt_cell(Some(s.final_grad_norm_sq)),
            fmt_cell(Some(s.avg_grad_norm_sq)),
            fmt_cell(Some(s.avg_delta)),
            fmt_cell(s.avg_delta_y),
        ));
    }
    csv.push_str(&format!(
        "mean,{},{},{},{}\n",
        fmt_cell(Some(record.mean_final_grad_norm_sq)),
        fmt_cell(Some(record.mean_avg_grad_norm_sq)),
        fmt_cell(Some(record.mean_avg_delta)),
        fmt_cell(record.mean_avg_delta_y),
    ));
    fs::write(out_dir.join("summary.csv"), csv)?;
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&record)? + "\n",
    )?;
    Ok(record)
}

fn run_one_seed(
    built: &BuiltProblem,
    spec: &RunSpec,
    seed: u64,
) -> Result<(SeedSummary, Vec<CsvRow>)> {
    let start = Instant::now();
    let mut stream = Stream::new(seed, 0);
    match built {
        BuiltProblem::Min(problem) => {
            let SolverSpec::Minimize { scaler, g0 } = &spec.solver else {
                return Err(Error::config("internal: solver/problem mismatch"));
            };
            let kind = parse_scaler(scaler)?;
            let schedule = minimize_schedule(problem, &kind, *g0, &spec.schedule)?;
            let result = asa_run(problem, &kind, *g0, &schedule, &mut stream)?;
            let traj = &result.trajectory;
            let rows: Vec<CsvRow> = traj
                .points
                .iter()
                .map(|p| CsvRow {
                    t: p.t,
                    grad_norm_sq: p.grad_norm_sq,
                    delta: Some(p.delta),
                    delta_y: None,
                    objective: Some(p.objective),
                    eta: Some(p.eta),
                    gamma: Some(p.gamma),
                })
                .collect();
            let fit_points: Vec<(f64, f64)> = traj
                .points
                .iter()
                .filter(|p| p.t >= 10 && p.avg_grad_norm_sq > 0.0)
                .map(|p| (p.t as f64, p.avg_grad_norm_sq))
                .collect();
            let summary = SeedSummary {
                seed,
                final_grad_norm_sq: traj.points.last().map(|p| p.grad_norm_sq).unwrap_or(0.0),
                avg_grad_norm_sq: traj.avg_grad_norm_sq(),
                avg_delta: traj.avg_delta(),
                avg_delta_y: None,
                slope: fit_rate(&fit_points).ok(),
                wall_time_s: start.elapsed().as_secs_f64(),
                diverged: false,
            };
            Ok((summary, rows))
        }
        BuiltProblem::MinMax(problem) => {
            let SolverSpec::Minmax { scaler, g0 } = &spec.solver else {
                return Err(Error::config("internal: solver/problem mismatch"));
            };
            let kind = scaler.as_deref().map(parse_scaler).transpose()?;
            let cfg = match &spec.schedule {
                ScheduleSpec::Explicit { gamma, eta, t, eta_y, .. } => MinMaxConfig {
                    gamma: *gamma,
                    eta_x: *eta,
                    eta_y: eta_y.unwrap_or(*eta),
                    t: *t,
                    dual_set: DualSet::Unconstrained,
                    scaler: kind.clone(),
                    g0: *g0,
                },
                ScheduleSpec::Theorem { eps, .. } => {
                    let bounds = match &kind {
                        Some(k) => problem.scaler_bounds(k, *g0)?,
                        None => (1.0, 1.0),
                    };
                    let mut cfg = make_minmax_schedule(*eps, &problem.meta, bounds)?;
                    cfg.scaler = kind.clone();
                    cfg.g0 = *g0;
                    cfg
                }
            };
            let result = pd_run(problem, &cfg, &mut stream)?;
            let traj = &result.trajectory;
            let rows: Vec<CsvRow> = traj
                .points
                .iter()
                .map(|p| CsvRow {
                    t: p.t,
                    grad_norm_sq: p.grad_norm_sq,
                    delta: Some(p.delta_x),
                    delta_y: Some(p.delta_y),
                    objective: Some(p.f_value),
                    eta: Some(p.eta_x),
                    gamma: Some(p.gamma),
                })
                .collect();
            let summary = SeedSummary {
                seed,
                final_grad_norm_sq: traj.points.last().map(|p| p.grad_norm_sq).unwrap_or(0.0),
                avg_grad_norm_sq: traj.avg_grad_norm_sq(),
                avg_delta: traj.avg_delta_x(),
                avg_delta_y: Some(traj.avg_delta_y()),
                slope: None,
                wall_time_s: start.elapsed().as_secs_f64(),
                diverged: false,
            };
            Ok((summary, rows))
        }
        BuiltProblem::Bilevel(problem, meta) => {
            let SolverSpec::Bilevel { method, exact_inverse } = &spec.solver else {
                return Err(Error::config("internal: solver/problem mismatch"));
            };
            let mut cfg: BilevelConfig = match &spec.schedule {
                ScheduleSpec::Explicit { gamma, eta, t, eta_y, k_neumann } => BilevelConfig {
                    gamma: *gamma,
                    eta_x: *eta,
                    eta_y: eta_y.unwrap_or(*eta),
                    k_neumann: k_neumann.unwrap_or(5),
                    t: *t,
                    exact_inverse: *exact_inverse,
                    scaler: None,
                    g0: 0.0,
                },
                ScheduleSpec::Theorem { eps, .. } => match method.as_str() {
                    "smb" => make_smb_schedule(*eps, meta)?,
                    "sbma" => make_sbma_schedule(*eps, meta)?,
                    other => return Err(Error::config(format!("unknown bilevel method \"{other}\""))),
                },
            };
            cfg.exact_inverse = *exact_inverse;
            let result = match method.as_str() {
                "smb" => smb_run(problem, &cfg, &mut stream)?,
                "sbma" => sbma_run(problem, &cfg, &mut stream)?,
                other => return Err(Error::config(format!("unknown bilevel method \"{other}\""))),
            };
            let traj = &result.trajectory;
            let rows: Vec<CsvRow> = traj
                .points
                .iter()
                .map(|p| CsvRow {
                    t: p.t,
                    grad_norm_sq: p.grad_norm_sq,
                    delta: Some(p.delta_z),
                    delta_y: Some(p.delta_y),
                    objective: None,
                    eta: Some(cfg.eta_x),
                    gamma: Some(cfg.gamma),
                })
                .collect();
            let summary = SeedSummary {
                seed,
                final_grad_norm_sq: traj.points.last().map(|p| p.grad_norm_sq).unwrap_or(0.0),
                avg_grad_norm_sq: traj.avg_grad_norm_sq(),
                avg_delta: traj.avg_delta_z(),
                avg_delta_y: Some(traj.avg_delta_y()),
                slope: None,
                wall_time_s: start.elapsed().as_secs_f64(),
                diverged: false,
            };
            Ok((summary, rows))
        }
    }
}

// ---------------------------------------------------------------------------
// Verification suites
// ---------------------------------------------------------------------------

/// One line of a verification report.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub margin: String,
}

/// Result of `verify <suite>`.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<CheckLine>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = format!("suite {}\n", self.suite);
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {} ({})\n",
                if c.pass { "pass" } else { "FAIL" },
                c.name,
                c.margin
            ));
        }
        out.push_str(&format!(
            "{}: {}\n",
            self.suite,
            if self.passed() { "all checks passed" } else { "FAILED" }
        ));
        out
    }
}

/// All suite names known to `verify`.
pub const SUITES: &[&str] = &[
    "lemma1",
    "lemma7",
    "lemma10",
    "thm2",
    "thm3",
    "thm4",
    "thm5",
    "thm6",
    "shb-equiv",
    "scaler-bounds",
    "gradcheck",
    "reddi-drift",
];

/// The six scaler configurations used by the theorem suites, with the
/// `G0` offset each admits (`G0 = 0` where the scale bound forces it).
pub fn standard_scalers() -> Vec<(ScalerKind, f64)> {
    vec![
        (ScalerKind::Shb, 0.0),
        (ScalerKind::Adam { beta2: 0.9, bias_correction: false }, 1.0),
        (ScalerKind::AmsGrad { beta2: 0.9 }, 1.0),
        (ScalerKind::AdaFom, 1.0),
        (ScalerKind::AdamPlus, 1.0),
        (ScalerKind::AdaBound { beta2: 0.9, c_l: 0.5, c_u: 1.0 }, 0.0),
    ]
}

/// Run a named verification suite (quick, desk-scale versions of the
/// acceptance properties) and return per-check margins.
pub fn verify(suite: &str) -> Result<VerifyReport> {
    let checks = match suite {
        "lemma1" => suite_lemma1()?,
        "lemma7" => suite_lemma7()?,
        "lemma10" => suite_lemma10()?,
        "thm2" => suite_thm2()?,
        "thm3" => suite_thm3()?,
        "thm4" => suite_thm4()?,
        "thm5" => suite_thm5()?,
        "thm6" => suite_thm6()?,
        "shb-equiv" => suite_shb_equiv()?,
        "scaler-bounds" => suite_scaler_bounds()?,
        "gradcheck" => suite_gradcheck()?,
        "reddi-drift" => suite_reddi()?,
        other => {
            return Err(Error::config(format!(
                "unknown suite \"{other}\" (known: {})",
                SUITES.join(", ")
            )))
        }
    };
    Ok(VerifyReport { suite: suite.to_string(), checks })
}

fn check(name: &str, pass: bool, margin: String) -> CheckLine {
    CheckLine { name: name.to_string(), pass, margin }
}

fn suite_lemma1() -> Result<Vec<CheckLine>> {
    let q = make_quadratic(4, 5.0, 3);
    let problem = q.min_problem(0.5);
    let cfg = RecursionRunCfg { gamma: 0.1, eta: 0.02, steps: 200 };
    let stream = Stream::new(11, 0);
    let traces: Vec<_> = (0..100)
        .map(|i| {
            let mut s = stream.substream(i);
            sema_recursion_replicate(&problem.oracle, &problem.x0, &cfg, &mut s)
        })
        .collect::<Result<_>>()?;
    let report = variance_recursion_check(&traces, problem.l_smooth)?;
    Ok(vec![check(
        "variance recursion violation rate <= 5% (100 replicates x 200 steps)",
        report.violation_rate <= 0.05,
        format!(
            "rate {:.4}, worst margin {:.3e}",
            report.violation_rate, report.max_violation
        ),
    )])
}

fn suite_lemma7() -> Result<Vec<CheckLine>> {
    // Frozen primal: the dual iterate contracts to y*(x0) at the expected
    // geometric rate under the strongly concave inner problem.
    let s = make_saddle_quadratic(3, 3, 1.0, 2)?;
    let mut p = s.min_max_problem(0.0);
    p.y0 = vec![2.0, -1.0, 0.5];
    let cfg = MinMaxConfig {
        gamma: 1.0,
        eta_x: 0.0,
        eta_y: 0.3,
        t: 100,
        dual_set: DualSet::Unconstrained,
        scaler: None,
        g0: 0.0,
    };
    let result = pd_run(&p, &cfg, &mut Stream::new(4, 0))?;
    let first = result.trajectory.points.first().unwrap().delta_y;
    let last = result.trajectory.points.last().unwrap().delta_y;
    // Contraction factor (1 − η·λ)² = 0.49 per step.
    Ok(vec![check(
        "frozen-primal dual tracking contracts below 1e-12 of its start",
        last <= first * 1e-12,
        format!("delta_y {first:.3e} -> {last:.3e}"),
    )])
}

fn suite_lemma10() -> Result<Vec<CheckLine>> {
    let hess = Mat::from_diag(&[1.0, 1.4, 2.0]);
    let mut checks = Vec::new();
    for k in [1usize, 5, 20] {
        let cfg = NeumannConfig { k_t: k, c_gyy: 2.5, lambda: 1.0 };
        let report = neumann_bias_check(&hess, &cfg, 20_000, &mut Stream::new(6, k as u64))?;
        checks.push(check(
            &format!("Neumann inverse bias within bound at k={k}"),
            report.pass,
            format!(
                "bias {:.3e} <= bound {:.3e} + slack {:.3e}",
                report.measured_bias, report.bound, report.slack
            ),
        ));
    }
    Ok(checks)
}

fn suite_thm2() -> Result<Vec<CheckLine>> {
    let q = make_quadratic(4, 5.0, 3);
    let problem = q.min_problem(0.3);
    let eps = 0.5;
    let mut checks = Vec::new();
    for (kind, g0) in standard_scalers() {
        let bounds = problem.scaler_bounds(&kind, g0)?;
        let meta = problem.schedule_meta(&mut Stream::new(0xA11A, 0))?;
        let schedule = make_schedule_constant(eps, &meta, bounds)?;
        let mut acc_g = 0.0;
        let mut acc_d = 0.0;
        let seeds = 5;
        for seed in 0..seeds {
            let r = asa_run(&problem, &kind, g0, &schedule, &mut Stream::new(seed, 0))?;
            acc_g += r.trajectory.avg_grad_norm_sq();
            acc_d += r.trajectory.avg_delta();
        }
        let (mg, md) = (acc_g / seeds as f64, acc_d / seeds as f64);
        checks.push(check(
            &format!("constant schedule hits eps^2 with {}", kind.tag()),
            mg <= eps * eps && md <= 2.0 * eps * eps,
            format!("avg ||grad||^2 {mg:.4} <= {:.4}, avg delta {md:.4}", eps * eps),
        ));
    }
    Ok(checks)
}

fn suite_thm3() -> Result<Vec<CheckLine>> {
    let q = make_quadratic(4, 5.0, 3);
    // Start at the stationary noise floor: the rate criterion measures the
    // schedule's T-dependence, not the initial transient, which would
    // otherwise dominate the running average with a ~1/T slope.
    let x0: Vector = q.x_star.iter().map(|s| s + 0.02).collect();
    let problem = q.min_problem_from(0.3, x0);
    let meta = problem.schedule_meta(&mut Stream::new(0xA11A, 0))?;
    let schedule = make_schedule_decreasing(&meta, (1.0, 1.0), 100_000)?;
    // Average the running-average metric across seeds at the recorded ts.
    let mut acc: Option<Vec<(f64, f64)>> = None;
    let seeds = 3;
    for seed in 0..seeds {
        let r = asa_run(&problem, &ScalerKind::Shb, 0.0, &schedule, &mut Stream::new(seed, 0))?;
        let pts: Vec<(f64, f64)> = r
            .trajectory
            .points
            .iter()
            .filter(|p| p.t >= 100)
            .map(|p| (p.t as f64, p.avg_grad_norm_sq))
            .collect();
        acc = Some(match acc {
            None => pts,
            Some(mut a) => {
                for (ai, pi) in a.iter_mut().zip(&pts) {
                    ai.1 += pi.1;
                }
                a
            }
        });
    }
    let pts: Vec<(f64, f64)> = acc
        .unwrap()
        .into_iter()
        .map(|(t, y)| (t, y / seeds as f64))
        .collect();
    let fit = fit_rate(&pts)?;
    Ok(vec![check(
        "decreasing-schedule rate slope in [-0.65, -0.35]",
        (-0.65..=-0.35).contains(&fit.slope),
        format!("slope {:.3} (CI [{:.3}, {:.3}])", fit.slope, fit.ci_lo, fit.ci_hi),
    )])
}

fn suite_thm4() -> Result<Vec<CheckLine>> {
    let p = make_pl_least_squares(6, 4, 5)?;
    let problem = p.min_problem(0.2);
    let meta = problem.schedule_meta(&mut Stream::new(0xA11A, 0))?;
    let eps0 = meta.delta_f.max(meta.delta0);
    let eps = eps0 / 16.0; // four halving stages
    let schedule = make_schedule_stagewise(p.mu, eps, &meta, (1.0, 1.0))?;
    let Schedule::Stagewise { stages, .. } = &schedule else {
        return Err(Error::config("expected a stagewise schedule"));
    };
    let r = asa_run(&problem, &ScalerKind::Shb, 0.0, &schedule, &mut Stream::new(1, 0))?;
    let mut checks = Vec::new();
    for (k, (stage, final_f)) in stages.iter().zip(&r.stage_finals).enumerate() {
        let gap = final_f - problem.f_star;
        checks.push(check(
            &format!("stage {k} optimality gap <= stage target"),
            gap <= stage.eps,
            format!("gap {:.4e} vs eps_k {:.4e}", gap, stage.eps),
        ));
    }
    Ok(checks)
}

fn suite_thm5() -> Result<Vec<CheckLine>> {
    let s = make_saddle_quadratic(3, 2, 1.0, 4)?;
    let problem = s.min_max_problem(0.1);
    let eps = 0.4;
    let cfg = make_minmax_schedule(eps, &problem.meta, (1.0, 1.0))?;
    let mut acc = 0.0;
    let seeds = 3;
    for seed in 0..seeds {
        let r = pd_run(&problem, &cfg, &mut Stream::new(seed, 0))?;
        acc += r.trajectory.avg_combined(problem.meta.l_f);
    }
    let m = acc / seeds as f64;
    Ok(vec![check(
        "primal-dual combined error <= 5 eps^2",
        m <= 5.0 * eps * eps,
        format!("avg(delta_x + L^2 delta_y) {m:.4} vs {:.4}", 5.0 * eps * eps),
    )])
}

fn suite_thm6() -> Result<Vec<CheckLine>> {
    let bq = make_bilevel_quadratic(3, 3, 1.0, 6)?;
    let problem = bq.bilevel_problem(0.05)?;
    let meta = bq.bilevel_meta(&problem);
    let eps = 0.5;
    let cfg = make_smb_schedule(eps, &meta)?;
    let mut acc = 0.0;
    let seeds = 2;
    for seed in 0..seeds {
        let r = smb_run(&problem, &cfg, &mut Stream::new(seed, 0))?;
        acc += r.trajectory.avg_delta_z();
    }
    let m = acc / seeds as f64;
    Ok(vec![check(
        "composite tracking error <= 5 eps^2 (momentum bilevel)",
        m <= 5.0 * eps * eps,
        format!("avg delta_z {m:.4} vs {:.4} (T={})", 5.0 * eps * eps, cfg.t),
    )])
}

fn suite_shb_equiv() -> Result<Vec<CheckLine>> {
    let q = make_quadratic(5, 3.0, 9);
    let problem = q.min_problem(0.3);
    let report = shb_equivalence_check(0.05, 0.9, &problem, 2_000, &Stream::new(7, 0))?;
    Ok(vec![check(
        "averaged and momentum forms agree to 1e-10",
        report.first_divergent_step.is_none(),
        format!("max deviation {:.3e}", report.max_deviation),
    )])
}

fn suite_scaler_bounds() -> Result<Vec<CheckLine>> {
    let g_bound = 2.0;
    let dim = 4;
    let mut checks = Vec::new();
    for (kind, g0) in standard_scalers() {
        let (c_l, c_u) = effective_bounds(&kind, g_bound, g0)?;
        let mut state = ScalerState::new(&kind, dim, g0)?;
        if matches!(kind, ScalerKind::AdamPlus) {
            state.adamplus_bound = Some(g_bound);
        }
        let mut stream = Stream::new(13, 0);
        let mut worst = 0.0f64;
        let mut ok = true;
        // Coordinates in [−G/√d, G/√d] keep both |g_i| ≤ G and ‖g‖ ≤ G, so
        // one stream serves every kind (Adam+ bounds the Euclidean norm).
        let coord = g_bound / (dim as f64).sqrt();
        for _ in 0..1_000 {
            let g: Vector = (0..dim)
                .map(|_| stream.uniform_range(-coord, coord))
                .collect();
            scaler_update(&mut state, &kind, &g, &g)?;
            for s in step_scale(&state)? {
                if s < c_l - 1e-12 || s > c_u + 1e-12 {
                    ok = false;
                    worst = worst.max((c_l - s).max(s - c_u));
                }
            }
        }
        checks.push(check(
            &format!("{} scale stays in [c_l, c_u]", kind.tag()),
            ok,
            format!("band [{c_l:.4}, {c_u:.4}], worst excess {worst:.3e}"),
        ));
    }
    Ok(checks)
}

fn suite_gradcheck() -> Result<Vec<CheckLine>> {
    let tol = 1e-5;
    let mut checks = Vec::new();
    let q = make_quadratic(6, 25.0, 11);
    let e = fd_check(&|x| q.objective(x), &|x| q.gradient(x), 6, 10, 1);
    checks.push(check("quadratic gradient", e <= tol, format!("max rel err {e:.3e}")));
    let p = make_pl_least_squares(6, 3, 9)?;
    let e = fd_check(&|x| p.objective(x), &|x| p.gradient(x), 6, 10, 2);
    checks.push(check("least-squares gradient", e <= tol, format!("max rel err {e:.3e}")));
    let s = make_saddle_quadratic(4, 3, 1.5, 5)?;
    let e = fd_check(&|x| s.envelope(x), &|x| s.envelope_grad(x), 4, 10, 3);
    checks.push(check("saddle envelope gradient", e <= tol, format!("max rel err {e:.3e}")));
    let dp = make_dual_pl_saddle(3, 4, 2.0, 21)?;
    let e = fd_check(&|x| dp.envelope(x), &|x| dp.envelope_grad(x), 3, 10, 4);
    checks.push(check("dual-PL envelope gradient", e <= tol, format!("max rel err {e:.3e}")));
    let b = make_bilevel_quadratic(3, 3, 1.0, 29)?;
    let e = fd_check(&|x| b.envelope(x), &|x| b.hypergrad(x), 3, 10, 5);
    checks.push(check("bilevel hypergradient", e <= tol, format!("max rel err {e:.3e}")));
    let a = make_auc_minmax(4, 6, 3, 2.0, 17)?;
    let e = fd_check(
        &|z| {
            let (x, y) = z.split_at(a.d + 2);
            a.objective(x, y[0])
        },
        &|z| {
            let (x, y) = z.split_at(a.d + 2);
            let (gx, gy) = a.full_grad(x, y[0]);
            let mut out = gx;
            out.push(gy);
            out
        },
        a.d + 3,
        10,
        6,
    );
    checks.push(check("AUC min-max gradient", e <= tol, format!("max rel err {e:.3e}")));
    Ok(checks)
}

fn suite_reddi() -> Result<Vec<CheckLine>> {
    let eta = 1e-3;
    let pt = reddi_grid_search(eta)?
        .ok_or_else(|| Error::Verification("no certified drift grid point found".into()))?;
    let problem = make_reddi_drift(pt.c, pt.p)?;
    let mut checks = vec![
        check(
            "short-window drift certified positive (wrong direction)",
            pt.drift_small_lo > 0.0,
            format!("C={}, p={}, beta2={}, lower bound {:.3e}", pt.c, pt.p, pt.beta2, pt.drift_small_lo),
        ),
        check(
            "long-window drift certified negative (correct direction)",
            pt.drift_long_hi < 0.0,
            format!("beta1 {} upper bound {:.3e}", pt.beta1_long, pt.drift_long_hi),
        ),
    ];
    // Empirical agreement: simulated means exceed 3 standard errors in the
    // certified directions.
    let stream = Stream::new(100, 0);
    let runs = 50;
    let steps = 10_000;
    let mut small = Vec::with_capacity(runs);
    let mut long = Vec::with_capacity(runs);
    for i in 0..runs {
        let mut s1 = stream.substream(2 * i as u64);
        let mut s2 = stream.substream(2 * i as u64 + 1);
        small.push(problem.simulate_drift(pt.beta1_small, pt.beta2, eta, steps, &mut s1));
        long.push(problem.simulate_drift(pt.beta1_long, pt.beta2, eta, steps, &mut s2));
    }
    let stat = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    };
    let (ms, ses) = stat(&small);
    let (ml, sel) = stat(&long);
    checks.push(check(
        "simulated short-window drift > 3 SE above zero",
        ms > 3.0 * ses,
        format!("mean {ms:.3e}, SE {ses:.3e}"),
    ));
    checks.push(check(
        "simulated long-window drift < -3 SE below zero",
        ml < -3.0 * sel,
        format!("mean {ml:.3e}, SE {sel:.3e}"),
    ));
    Ok(checks)
}

// ---------------------------------------------------------------------------
// Fixture dumping
// ---------------------------------------------------------------------------

/// Fixture text for a problem identifier with its default construction
/// parameters (the instances the verification suites use).
pub fn dump_fixture(problem: &str) -> Result<String> {
    match problem {
        "quadratic" => Ok(make_quadratic(10, 10.0, 1).fixture()),
        "pl_least_squares" => Ok(make_pl_least_squares(10, 6, 1)?.fixture()),
        "reddi_drift" => {
            let eta = 1e-3;
            let pt = reddi_grid_search(eta)?
                .ok_or_else(|| Error::Verification("no certified drift grid point".into()))?;
            Ok(reddi_fixture(&pt, eta))
        }
        "saddle_quadratic" => Ok(make_saddle_quadratic(5, 5, 1.0, 1)?.fixture()),
        "dual_pl_saddle" => {
            let s = make_dual_pl_saddle(5, 5, 1.0, 1)?;
            let mut w = crate::problems::FixtureWriter::new("dual_pl_saddle", s.seed);
            w.int("dim_x", s.d)
                .int("dim_y", s.d_dual)
                .scalar("lambda", s.lambda)
                .scalar("lambda_pl", s.lambda_pl)
                .matrix("a", &s.a)
                .vector("b_diag", &s.b_diag)
                .vector("c", &s.c);
            Ok(w.finish())
        }
        "auc_minmax" => Ok(make_auc_minmax(100, 100, 5, 3.0, 1)?.fixture()),
        "bilevel_quadratic" => Ok(make_bilevel_quadratic(5, 5, 1.0, 1)?.fixture()),
        other => Err(Error::config(format!(
            "unknown problem \"{other}\" (known: {})",
            PROBLEM_IDS.join(", ")
        ))),
    }
}

/// List of problem identifiers for `problems list`.
pub fn list_problems() -> String {
    let mut out = String::new();
    for id in PROBLEM_IDS {
        out.push_str(id);
        out.push('\n');
    }
    out
}

/// Read `SEMA_OPT_SEED_BASE` (0 when unset or unparsable).
pub fn seed_base_from_env() -> u64 {
    std::env::var("SEMA_OPT_SEED_BASE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

/// Convenience wrapper: load a spec file and run it.
pub fn run_spec_file(path: &Path, opts: &RunOptions) -> Result<SummaryRecord> {
    let text = fs::read_to_string(path)?;
    let spec = RunSpec::from_json(&text)?;
    run(&spec, opts)
}
