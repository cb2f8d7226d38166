//! Command-line front end: configuration, subcommands and report output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annealer::{random_move, random_nonsingular_design, search, AnnealParams, CandidateSets, SearchStats, TraceRow};
use crate::contrasts::{Factor, FactorLayout, RequirementSet, Role};
use crate::criterion::{evaluate, loss, state_for, LossReport};
use crate::design::{SplitPlotDesign, VarianceSpec};
use crate::error::Error;
use crate::oracle::{ellipsoid_max, naive_loss, sampling_lower_bound, MseParts};
use crate::presets;
use crate::problem::Problem;
use crate::updates::{apply_delta, propose, state_deviation, MoveKind, DEFAULT_REFRESH_INTERVAL};

/// Largest pairwise relative deviation `verify` tolerates.
pub const VERIFY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "robust-spd", version, about = "Construct and evaluate D-optimal minimax split-plot designs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for a design by simulated annealing
    Search(SearchArgs),
    /// Evaluate the loss of a design file
    Evaluate(DesignArgs),
    /// Cross-check a design file against the brute-force oracles
    Verify(VerifyArgs),
    /// Time incremental updates against full recomputation
    BenchUpdates(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// JSON run configuration
    #[arg(long, value_name = "PATH", conflicts_with = "example", required_unless_present = "example")]
    pub config: Option<PathBuf>,
    /// Built-in example problem
    #[arg(long, value_name = "1|2")]
    pub example: Option<u8>,
    /// Override `alpha`
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Override the variance ratio `d = sigma_gamma_sq / sigma_eps_sq`
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Worker threads for restarts (default: available parallelism)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the iteration trace as CSV
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Design CSV
    #[arg(long, value_name = "PATH")]
    pub design: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub inner: DesignArgs,
    /// Random boundary directions for the sampling bound
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Random moves timed per move type
    #[arg(long, default_value_t = 500)]
    pub moves: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub factors: Vec<Factor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotsConfig {
    pub b: usize,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EMax {
    All(usize),
    Each(Vec<usize>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    #[serde(rename = "T0", default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(rename = "M0", default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<usize>,
    #[serde(rename = "N_T", default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_max: Option<EMax>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_interval: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    1.0
}

/// A complete run description, as read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub layout: LayoutConfig,
    pub plots: PlotsConfig,
    pub requirement: Vec<String>,
    #[serde(default)]
    pub variance: VarianceSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub anneal: AnnealConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Validated problem, search parameters and the config with every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub problem: Problem,
    pub sizes: Vec<usize>,
    pub params: AnnealParams,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::config(format!("config: {e}")))
    }

    pub fn from_example(example: &presets::Example) -> Self {
        let p = &example.params;
        RunConfig {
            layout: LayoutConfig {
                factors: example.layout.factors().to_vec(),
            },
            plots: PlotsConfig {
                b: example.sizes.len(),
                n: example.sizes.clone(),
            },
            requirement: example.requirement.clone(),
            variance: VarianceSpec::default(),
            alpha: 1.0,
            anneal: AnnealConfig {
                t0: Some(p.t0),
                m0: Some(p.m0),
                n_t: Some(p.n_t),
                a_b: Some(p.a_b),
                e_max: Some(EMax::Each(p.e_max.clone())),
                f: Some(p.f),
                seed: Some(p.seed),
                restarts: Some(p.restarts),
                refresh_interval: Some(p.refresh_interval),
            },
            output: OutputConfig::default(),
        }
    }

    pub fn resolve(&self) -> Result<Resolved, Error> {
        let layout = FactorLayout::new(self.layout.factors.clone())?;
        if self.plots.b != self.plots.n.len() {
            return Err(Error::param(
                "plots.b",
                format!("is {} but plots.n lists {} sizes", self.plots.b, self.plots.n.len()),
            ));
        }
        let sizes = self.plots.n.clone();
        let var = VarianceSpec::new(self.variance.sigma_eps_sq, self.variance.sigma_gamma_sq)?;
        let req = RequirementSet::parse(&self.requirement, &layout)?;
        let problem = Problem::new(layout, req, var, self.alpha)?;

        let a = &self.anneal;
        let b = sizes.len();
        let e_max = match &a.e_max {
            None => sizes.iter().map(|&n| n.clamp(1, 3)).collect(),
            Some(EMax::All(e)) => vec![*e; b],
            Some(EMax::Each(v)) => v.clone(),
        };
        let params = AnnealParams {
            t0: a.t0.unwrap_or(0.001),
            m0: a.m0.unwrap_or(50),
            n_t: a.n_t.unwrap_or(100),
            a_b: a.a_b.unwrap_or(b.clamp(1, 3)),
            e_max,
            f: a.f.unwrap_or(0.8),
            seed: a.seed.unwrap_or(0),
            restarts: a.restarts.unwrap_or(1),
            refresh_interval: a.refresh_interval.unwrap_or(DEFAULT_REFRESH_INTERVAL),
        };
        params.validate(&sizes)?;

        let mut config = self.clone();
        config.variance = var;
        config.anneal = AnnealConfig {
            t0: Some(params.t0),
            m0: Some(params.m0),
            n_t: Some(params.n_t),
            a_b: Some(params.a_b),
            e_max: Some(EMax::Each(params.e_max.clone())),
            f: Some(params.f),
            seed: Some(params.seed),
            restarts: Some(params.restarts),
            refresh_interval: Some(params.refresh_interval),
        };
        Ok(Resolved {
            config,
            problem,
            sizes,
            params,
        })
    }
}

/// A failed command: message for stderr and process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

/// 2 for invalid input, 3 for infeasible problems, 4 for oracle guards,
/// 1 for numerical failures.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidLayout(_)
        | Error::UnknownFactor(_)
        | Error::InvalidTerm { .. }
        | Error::MalformedDesign(_)
        | Error::DuplicateRun { .. }
        | Error::InvalidScale(_)
        | Error::InvalidParam { .. } => 2,
        Error::Infeasible(_) => 3,
        Error::Capacity { .. } => 4,
        Error::SingularDesign { .. } | Error::CriterionUndefined(_) => 1,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type Outcome = Result<String, Failure>;

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {what} {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::numeric(format!("cannot write {}: {e}", path.display())))
}

fn load(args: &ProblemArgs) -> Result<RunConfig, Failure> {
    let mut config = match (&args.config, args.example) {
        (Some(path), _) => RunConfig::from_json(&read(path, "config")?)?,
        (None, Some(k)) => {
            let ex = presets::example(k).ok_or_else(|| Failure::config(format!("unknown example {k} (use 1 or 2)")))?;
            RunConfig::from_example(&ex)
        }
        (None, None) => return Err(Failure::config("one of --config or --example is required")),
    };
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(d) = args.d {
        config.variance.sigma_gamma_sq = d * config.variance.sigma_eps_sq;
    }
    if let Some(f) = args.format {
        config.output.format = f;
    }
    Ok(config)
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    format!("{x:.*}", (5 - mag).max(0) as usize)
}

fn report_text(r: &LossReport) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("phi", r.phi),
        ("pi_root", r.pi_root),
        ("loss_root", r.loss_root),
        ("log_pi", r.log_pi),
        ("log_loss", r.log_loss),
        ("alpha", r.alpha),
        ("d", r.d),
        ("sigma_eps_sq", r.sigma_eps_sq),
    ] {
        let _ = writeln!(s, "{k:<13}{}", sig6(v));
    }
    let _ = writeln!(s, "{:<13}{}", "p", r.p);
    let _ = writeln!(s, "{:<13}{}", "N", r.big_n);
    let _ = writeln!(s, "{:<13}{}", "n", r.n);
    let _ = writeln!(s, "{:<13}{}", "b", r.b);
    s
}

const REPORT_CSV_HEADER: &str = "phi,pi_root,loss_root,log_pi,log_loss,alpha,d,sigma_eps_sq,p,N,n,b";

fn report_csv_row(r: &LossReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.phi, r.pi_root, r.loss_root, r.log_pi, r.log_loss, r.alpha, r.d, r.sigma_eps_sq, r.p, r.big_n, r.n, r.b
    )
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
struct DesignReport<'a> {
    design: String,
    report: &'a LossReport,
}

#[derive(Debug, Serialize)]
struct SearchJson<'a> {
    config: &'a RunConfig,
    best: DesignReport<'a>,
    #[serde(rename = "final")]
    last: DesignReport<'a>,
    best_restart: usize,
    restart_loss_roots: Vec<f64>,
    stats: SearchStats,
    median_initial_uphill: Option<f64>,
    warning: Option<String>,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("temperature_step,iteration,current_loss_root,best_loss_root\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.temperature_step, r.iteration, r.current_loss_root, r.best_loss_root
        );
    }
    s
}

pub fn run_search(args: &SearchArgs) -> Outcome {
    let mut config = load(&args.problem)?;
    if let Some(seed) = args.seed {
        config.anneal.seed = Some(seed);
    }
    if let Some(r) = args.restarts {
        config.anneal.restarts = Some(r);
    }
    if let Some(t) = &args.trace {
        config.output.trace = Some(t.clone());
    }
    if args.threads == Some(0) {
        return Err(Error::param("threads", "must be at least 1").into());
    }
    let res = config.resolve()?;
    let out = search(&res.problem, &res.sizes, &res.params, args.threads)?;
    let k = (res.problem.p() + 1) as f64;

    let warning = out.temperature_too_high(res.params.t0).then(|| {
        let m = out.median_uphill.unwrap_or_default();
        format!(
            "T0 = {} is more than 1000x the median initial uphill loss step {}; \
             the early stages accept almost every move. Consider anneal.T0 = {}",
            sig6(res.params.t0),
            sig6(m),
            sig6(m)
        )
    });
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &res.config.output.trace {
        write(path, &trace_csv(&out.trace))?;
    }

    let layout = res.problem.layout();
    Ok(match res.config.output.format {
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "# best design (restart {})", out.best_restart);
            s.push_str(&out.best.to_csv(layout));
            s.push('\n');
            s.push_str(&report_text(&out.report));
            let _ = writeln!(
                s,
                "\n# final design of that restart: loss_root {}",
                sig6(out.last_report.loss_root)
            );
            let _ = writeln!(
                s,
                "# proposals {}, accepted {}, invalid {}, recomputes {}",
                out.stats.proposals, out.stats.accepted, out.stats.rejected_invalid, out.stats.recomputes
            );
            s
        }
        Format::Csv => out.best.to_csv(layout),
        Format::Json => to_json(&SearchJson {
            config: &res.config,
            best: DesignReport {
                design: out.best.to_csv(layout),
                report: &out.report,
            },
            last: DesignReport {
                design: out.last.to_csv(layout),
                report: &out.last_report,
            },
            best_restart: out.best_restart,
            restart_loss_roots: out.restart_log_losses.iter().map(|l| (l / k).exp()).collect(),
            stats: out.stats,
            median_initial_uphill: out.median_uphill,
            warning,
        }),
    })
}

fn load_design(args: &DesignArgs) -> Result<(Resolved, SplitPlotDesign), Failure> {
    let res = load(&args.problem)?.resolve()?;
    let text = read(&args.design, "design")?;
    let design = SplitPlotDesign::from_csv(&text, res.problem.layout())?;
    Ok((res, design))
}

#[derive(Debug, Serialize)]
struct EvaluateJson<'a> {
    config: &'a RunConfig,
    report: &'a LossReport,
}

pub fn run_evaluate(args: &DesignArgs) -> Outcome {
    let (res, design) = load_design(args)?;
    let report = evaluate(&res.problem, &design)?;
    Ok(match res.config.output.format {
        Format::Text => report_text(&report),
        Format::Csv => format!("{REPORT_CSV_HEADER}\n{}\n", report_csv_row(&report)),
        Format::Json => to_json(&EvaluateJson {
            config: &res.config,
            report: &report,
        }),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Verification {
    pub closed_form: f64,
    pub naive: f64,
    pub ellipsoid_max: f64,
    /// `|MSE|` at the maximizing `beta2`.
    pub attained: f64,
    /// Largest `|MSE|` over random boundary directions; a lower bound.
    pub sampling_bound: f64,
    pub samples: usize,
    /// Largest pairwise relative deviation among the four exact values.
    pub max_rel_deviation: f64,
    pub passed: bool,
}

pub fn verify(problem: &Problem, design: &SplitPlotDesign, samples: usize, seed: u64) -> Result<Verification, Error> {
    let closed = evaluate(problem, design)?.loss();
    let naive = naive_loss(problem, design)?.loss();
    let (emax, arg) = ellipsoid_max(problem, design)?;
    let attained = MseParts::new(problem, design)?.mse_determinant(&arg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = sampling_lower_bound(problem, design, samples, &mut rng)?;
    let exact = [closed, naive, emax, attained];
    let mut dev: f64 = 0.0;
    for (i, a) in exact.iter().enumerate() {
        for b in &exact[i + 1..] {
            dev = dev.max((a - b).abs() / a.abs().max(b.abs()));
        }
    }
    Ok(Verification {
        closed_form: closed,
        naive,
        ellipsoid_max: emax,
        attained,
        sampling_bound: bound,
        samples,
        max_rel_deviation: dev,
        passed: dev <= VERIFY_TOLERANCE && bound <= closed * (1.0 + VERIFY_TOLERANCE),
    })
}

pub fn run_verify(args: &VerifyArgs) -> Outcome {
    let (res, design) = load_design(&args.inner)?;
    let v = verify(&res.problem, &design, args.samples, args.seed)?;
    let text = match res.config.output.format {
        Format::Text | Format::Csv => {
            let mut s = String::new();
            for (k, x) in [
                ("closed_form", v.closed_form),
                ("naive", v.naive),
                ("ellipsoid_max", v.ellipsoid_max),
                ("attained", v.attained),
                ("sampling_bound", v.sampling_bound),
                ("max_rel_dev", v.max_rel_deviation),
            ] {
                let _ = writeln!(s, "{k:<15}{}", sig6(x));
            }
            let _ = writeln!(s, "{}", if v.passed { "PASS" } else { "FAIL" });
            s
        }
        Format::Json => to_json(&v),
    };
    if v.passed {
        Ok(text)
    } else {
        print!("{text}");
        Err(Failure::numeric(format!(
            "oracle deviation {} exceeds {VERIFY_TOLERANCE} or the sampling bound exceeds the closed form",
            v.max_rel_deviation
        )))
    }
}

/// Problem used by `bench-updates`: six two-level factors, 20 model terms,
/// 15 whole plots of 4 runs.
pub fn bench_problem() -> (Problem, Vec<usize>) {
    let factors: Vec<Factor> = (1..=6)
        .map(|i| Factor::new(format!("F{i}"), 2, if i <= 2 { Role::WholePlot } else { Role::Subplot }))
        .collect();
    let layout = FactorLayout::new(factors).expect("static layout");
    let mut terms: Vec<String> = (1..=6).map(|i| format!("x{i}")).collect();
    for i in 1..=6 {
        for j in i + 1..=6 {
            terms.push(format!("x{i}*x{j}"));
        }
    }
    terms.truncate(20);
    let req = RequirementSet::parse(&terms, &layout).expect("static terms");
    let problem = Problem::new(layout, req, VarianceSpec::default(), 1.0).expect("static problem");
    (problem, vec![4; 15])
}

pub fn run_bench(args: &BenchArgs) -> Outcome {
    let (problem, sizes) = bench_problem();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let design = random_nonsingular_design(&problem, &sizes, &mut rng)?;
    let state = state_for(&problem, &design)?;
    let cands = CandidateSets::new(problem.layout());
    let e_max = vec![3; sizes.len()];
    let var = problem.var();
    let mut s = String::from("move,n,p,count,incremental_us,recompute_us,speedup,max_rel_dev\n");
    for kind in [MoveKind::WholePlotExchange, MoveKind::Interchange, MoveKind::SubplotExchange] {
        let mut moves = Vec::with_capacity(args.moves);
        let mut tries = 0;
        while moves.len() < args.moves && tries < 100 * args.moves.max(1) {
            tries += 1;
            if let Some(mv) = random_move(kind, &design, &cands, 3, &e_max, &mut rng) {
                if let Ok((after, delta)) = propose(&problem, &design, &state, &mv) {
                    if state_for(&problem, &after).is_ok() {
                        moves.push((after, delta));
                    }
                }
            }
        }
        let t = Instant::now();
        let updated: Vec<_> = moves.iter().map(|(_, delta)| apply_delta(&state, delta, var)).collect();
        let inc = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let fresh: Vec<_> = moves.iter().map(|(after, _)| state_for(&problem, after)).collect();
        let full = t.elapsed().as_secs_f64();
        let mut dev: f64 = 0.0;
        for (u, f) in updated.iter().zip(&fresh) {
            if let (Ok(u), Ok(f)) = (u, f) {
                let (a, b, c) = state_deviation(u, f);
                dev = dev.max(a).max(b).max(c);
                let lu = loss(u, problem.big_n(), 1.0, var).map(|r| r.log_loss);
                let lf = loss(f, problem.big_n(), 1.0, var).map(|r| r.log_loss);
                if let (Ok(lu), Ok(lf)) = (lu, lf) {
                    dev = dev.max(((lu - lf) / lf).abs());
                }
            }
        }
        let count = moves.len().max(1) as f64;
        let _ = writeln!(
            s,
            "{kind},{},{},{},{:.3},{:.3},{:.2},{:.3e}",
            design.n(),
            problem.p(),
            moves.len(),
            1e6 * inc / count,
            1e6 * full / count,
            full / inc,
            dev
        );
    }
    Ok(s)
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Search(a) => run_search(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Verify(a) => run_verify(a),
        Command::BenchUpdates(a) => run_bench(a),
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
