use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hankel_pgd::harness::{self, ExperimentKind, ExperimentSpec, Format, Report, THREADS_ENV};
use hankel_pgd::problem::ProblemInstance;
use hankel_pgd::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hankel-pgd", version, about = "Low-rank Hankel completion by projected gradient descent")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed for all random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Output file; CSV summaries go to sibling files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Experiment profile (JSON, or TOML by extension); flags override it.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Changes the RMSE success threshold (recorded in the output).
    #[arg(long, global = true)]
    success_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recover one signal, either from a problem file or a generated instance.
    Recover(RecoverArgs),
    /// Success rate over a (p, r) grid.
    PhaseTransition(SweepArgs),
    /// Reconstruction error against the noise level.
    Noise(SweepArgs),
    /// Misspecified model order.
    ModelOrder(SweepArgs),
    /// Residual curve of the rank-increasing heuristic.
    RankHeuristic(SweepArgs),
    /// Compare fast operators against the dense reference implementations.
    Selftest,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    /// Problem instance JSON; when absent a random instance is generated.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Include the per-iteration history in JSON output.
    #[arg(long)]
    history: bool,
    #[command(flatten)]
    gen: SweepArgs,
}

#[derive(Args, Debug, Default)]
struct SweepArgs {
    /// Signal length (1D shorthand for --dims).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Model order (of the true signal where a grid of tested orders is given).
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    p_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    r_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    theta_grid: Option<Vec<f64>>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Minimum frequency spacing in units of 1/N.
    #[arg(long)]
    separation: Option<f64>,
    /// Draw frequencies without a spacing constraint.
    #[arg(long, conflicts_with = "separation")]
    no_separation: bool,
    /// Per-axis damping ranges for 1/tau, as lo:hi pairs.
    #[arg(long, value_delimiter = ',')]
    damping: Option<Vec<String>>,
    #[arg(long)]
    threshold: Option<f64>,
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Validation(format!("damping range must look like lo:hi, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn build_spec(kind: ExperimentKind, global: &Global, a: &SweepArgs) -> Result<ExperimentSpec> {
    let mut spec = match &global.profile {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::preset(kind),
    };
    spec.kind = kind;
    if let Some(seed) = global.seed {
        spec.master_seed = seed;
    }
    if let Some(t) = global.success_threshold {
        spec.success_threshold = t;
    }
    if let Some(n) = a.n {
        spec.dims = vec![n];
    }
    if let Some(d) = &a.dims {
        spec.dims = d.clone();
    }
    if let Some(r) = a.r {
        spec.r_true = r;
    }
    if let Some(p) = a.p {
        spec.p_grid = vec![p];
        spec.m_grid.clear();
    }
    if let Some(m) = a.m {
        spec.m_grid = vec![m];
    }
    if let Some(g) = &a.p_grid {
        spec.p_grid = g.clone();
        spec.m_grid.clear();
    }
    if let Some(g) = &a.m_grid {
        spec.m_grid = g.clone();
    }
    if let Some(g) = &a.r_grid {
        spec.r_grid = g.clone();
    }
    if let Some(g) = &a.theta_grid {
        spec.theta_grid = g.clone();
    }
    if let Some(t) = a.theta {
        spec.theta = t;
    }
    if a.r_max.is_some() {
        spec.r_max = a.r_max;
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if a.max_iters.is_some() {
        spec.max_iters = a.max_iters;
    }
    if a.separation.is_some() {
        spec.separation = a.separation;
    }
    if a.no_separation {
        spec.separation = None;
    }
    if let Some(ranges) = &a.damping {
        spec.damping = Some(ranges.iter().map(|s| parse_range(s)).collect::<Result<_>>()?);
    }
    if let Some(t) = a.threshold {
        spec.improvement_threshold = t;
    }
    if let Some(out) = &global.out {
        spec.output = Some(out.clone());
    }
    Ok(spec)
}

fn emit(report: &Report, global: &Global) -> Result<()> {
    let format = global.format.into();
    match report.spec.output.as_ref() {
        Some(path) => {
            for written in harness::write_report(report, path, format)? {
                eprintln!("wrote {}", written.display());
            }
        }
        None => print!("{}", harness::render(report, format)?),
    }
    Ok(())
}

fn recover(global: &Global, args: &RecoverArgs) -> Result<()> {
    if let Some(path) = &args.input {
        let mut inst = ProblemInstance::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(seed) = global.seed {
            inst.config.seed = seed;
        }
        let (_, mut report) = inst.solve()?;
        if !args.history {
            report.history = None;
        }
        let text = serde_json::to_string_pretty(&report)? + "\n";
        match &global.out {
            Some(out) => std::fs::write(out, text)?,
            None => print!("{text}"),
        }
        return Ok(());
    }
    let mut spec = build_spec(ExperimentKind::SingleRecover, global, &args.gen)?;
    if args.gen.trials.is_none() && global.profile.is_none() {
        spec.trials = 1;
    }
    let threads = harness::resolve_threads(global.threads)?;
    let report = harness::run(&spec, threads)?;
    if spec.output.is_some() || matches!(global.format, OutFormat::Json) {
        return emit(&report, global);
    }
    for row in &report.trials {
        println!(
            "trial {} seed {} rmse {:.6e} iterations {} termination {} success {}",
            row.trial,
            row.seed,
            row.rmse,
            row.iterations,
            row.termination.name(),
            row.success
        );
    }
    Ok(())
}

#[cfg(feature = "oracle")]
fn selftest(global: &Global) -> Result<bool> {
    let cases = hankel_pgd::oracle::selftest(global.seed.unwrap_or(0))?;
    let mut ok = true;
    for c in &cases {
        ok &= c.passed;
        println!(
            "{} {:<55} cases {:>4} worst {:.3e} tol {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.cases,
            c.worst,
            c.tolerance
        );
    }
    Ok(ok)
}

#[cfg(not(feature = "oracle"))]
fn selftest(_global: &Global) -> Result<bool> {
    Err(Error::Runtime("built without the `oracle` feature".into()))
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    let sweep = |kind, args: &SweepArgs| -> Result<bool> {
        let spec = build_spec(kind, g, args)?;
        let report = harness::run(&spec, harness::resolve_threads(g.threads)?)?;
        emit(&report, g)?;
        Ok(true)
    };
    match &cli.command {
        Command::Recover(args) => recover(g, args).map(|_| true),
        Command::PhaseTransition(a) => sweep(ExperimentKind::PhaseTransition, a),
        Command::Noise(a) => sweep(ExperimentKind::Noise, a),
        Command::ModelOrder(a) => sweep(ExperimentKind::ModelOrder, a),
        Command::RankHeuristic(a) => sweep(ExperimentKind::RankHeuristic, a),
        Command::Selftest => selftest(g),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
