//! `lacmas`: experiment runner for the decentralized swarm optimizer.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use lacmas_core::analysis::{replay_matrix_log, MatrixLog};
use lacmas_core::config::ExperimentConfig;
use lacmas_core::engine::{self, ProviderKind, RunReport, Variant};
use lacmas_core::objectives::Family;
use lacmas_core::wsn::WsnProblem;
use lacmas_core::Error;

#[derive(Parser)]
#[command(name = "lacmas", version, about = "Decentralized swarm consensus optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one variant on the selected benchmark functions.
    Run(RunArgs),
    /// Run several variants and write an ablation table.
    Suite(SuiteArgs),
    /// Run the sensor-network localization task.
    Wsn(WsnArgs),
    /// Estimate the horizon T with a short baseline probe.
    Calibrate(CalibrateArgs),
    /// Replay recorded mixing matrices through the admissibility check.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file. Missing keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Number of seeded repetitions (master_seed, master_seed + 1, ...).
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    provider: Option<ProviderKind>,
    /// Horizon T of the phased scheduler.
    #[arg(long)]
    horizon: Option<usize>,
    /// Estimate T with a probe run before each run.
    #[arg(long)]
    calibrate: bool,
    #[arg(long)]
    log_every: Option<usize>,
    /// Store every distinct mixing matrix next to the trace.
    #[arg(long)]
    record_matrices: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated function names (or `all`).
    #[arg(long, value_delimiter = ',')]
    suite: Vec<String>,
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    suite: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "baseline,coop,act,full")]
    variants: Vec<Variant>,
}

#[derive(Args)]
struct WsnArgs {
    #[command(flatten)]
    common: Common,
    /// Number of sensors (agents).
    #[arg(long, short = 'n')]
    sensors: Option<usize>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "sphere")]
    function: Family,
}

#[derive(Args)]
struct VerifyArgs {
    /// A `*_matrices.json` file written by `run --record-matrices`.
    path: PathBuf,
}

enum Failure {
    Config(String),
    Runtime(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o error: {e}"))
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Suite(a) => cmd_suite(a),
        Command::Wsn(a) => cmd_wsn(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

/// Loads the config file (if any) and applies flag overrides.
fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let run = &mut cfg.run;
    if let Some(v) = &common.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = common.master_seed {
        run.master_seed = v;
    }
    if let Some(v) = common.seeds {
        run.num_runs = v;
    }
    if let Some(v) = common.max_iterations {
        run.max_iterations = v;
    }
    if let Some(v) = common.provider {
        run.provider = v;
    }
    if let Some(v) = common.horizon {
        run.pcg.horizon = v;
    }
    if let Some(v) = common.log_every {
        run.log_every = v;
    }
    run.calibrate_horizon |= common.calibrate;
    run.record_matrices |= common.record_matrices;
    Ok(cfg)
}

fn finish_config(cfg: &mut ExperimentConfig) -> CmdResult {
    if cfg.run.variant == Variant::Baseline && cfg.run.provider == ProviderKind::Llm {
        eprintln!("warning: the baseline variant never queries guidance; ignoring provider `llm`");
        cfg.run.provider = ProviderKind::Heuristic;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(())
}

fn select_functions(names: &[String], cfg: &mut ExperimentConfig) -> CmdResult {
    if names.is_empty() {
        return Ok(());
    }
    let mut out = Vec::new();
    for name in names {
        if name.eq_ignore_ascii_case("all") {
            out.extend(Family::ALL);
        } else {
            out.push(name.parse::<Family>()?);
        }
    }
    cfg.suite.functions = out;
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CmdResult {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn trace_name(tag: &str, variant: Variant, seed: u64) -> String {
    format!("{tag}_{}_seed{seed}", variant.name())
}

struct Job {
    family: Family,
    run: usize,
}

/// Runs every (function, repetition) pair of `cfg.run.variant`, writing one
/// trace per run. Reports come back in job order.
fn run_jobs(cfg: &ExperimentConfig) -> Result<Vec<(Family, RunReport)>, Failure> {
    let jobs: Vec<Job> = cfg
        .suite
        .functions
        .iter()
        .flat_map(|&family| (0..cfg.repetitions()).map(move |run| Job { family, run }))
        .collect();
    let results: Vec<Result<(Family, RunReport), Failure>> = jobs
        .par_iter()
        .map(|job| {
            let spec = cfg.suite.build(job.family)?;
            let run_cfg = engine::RunConfig {
                master_seed: cfg.run.run_seed(job.run),
                ..cfg.run.clone()
            };
            let report = engine::run(&run_cfg, &spec)?;
            let stem = trace_name(job.family.name(), run_cfg.variant, run_cfg.master_seed);
            write_file(&cfg.output_dir.join(format!("{stem}.csv")), |w| {
                engine::write_trace_csv(&report, run_cfg.log_every, w)
            })?;
            if run_cfg.record_matrices {
                write_file(&cfg.output_dir.join(format!("{stem}_matrices.json")), |w| {
                    serde_json::to_writer(&mut *w, &report.matrix_log()).map_err(std::io::Error::other)
                })?;
            }
            Ok((job.family, report))
        })
        .collect();
    results.into_iter().collect()
}

fn check_faults<'a>(reports: impl IntoIterator<Item = (String, &'a RunReport)>) -> CmdResult {
    let faults: Vec<String> = reports
        .into_iter()
        .filter_map(|(tag, r)| r.fault.as_ref().map(|msg| format!("{tag} seed {}: {msg}", r.master_seed)))
        .collect();
    if faults.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(faults.join("; ")))
    }
}

fn summary_json(cfg: &ExperimentConfig, reports: &[(Family, RunReport)]) -> serde_json::Value {
    json!({
        "master_seed": cfg.run.master_seed,
        "suite_seed": cfg.suite.seed,
        "config": cfg,
        "runs": reports
            .iter()
            .map(|(f, r)| json!({ "function": f.name(), "summary": r.summary() }))
            .collect::<Vec<_>>(),
    })
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let mut cfg = load(&args.common)?;
    if let Some(v) = args.variant {
        cfg.run.variant = v;
    }
    select_functions(&args.suite, &mut cfg)?;
    finish_config(&mut cfg)?;
    let reports = run_jobs(&cfg)?;
    let summary_path = cfg
        .output_dir
        .join(format!("summary_{}_seed{}.json", cfg.run.variant.name(), cfg.run.master_seed));
    write_file(&summary_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary_json(&cfg, &reports)).map_err(std::io::Error::other)
    })?;
    println!("function\tseed\tconverged_at\tfinal_fitness\tcomm_cost");
    for (f, r) in &reports {
        let conv = r.converged_at.map_or("-".to_string(), |t| t.to_string());
        println!(
            "{f}\t{}\t{conv}\t{:.6e}\t{}",
            r.master_seed, r.final_fitness, r.total_comm_cost
        );
    }
    println!("wrote {} traces and {}", reports.len(), summary_path.display());
    check_faults(reports.iter().map(|(f, r)| (f.to_string(), r)))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

const ABLATION_HEADER: &str =
    "function,variant,master_seed,runs,mean_final_fitness,std_final_fitness,mean_comm_cost,converged_runs,mean_converged_at";

fn cmd_suite(args: SuiteArgs) -> CmdResult {
    let mut cfg = load(&args.common)?;
    select_functions(&args.suite, &mut cfg)?;
    if args.variants.is_empty() {
        return Err(Failure::Config("--variants must name at least one variant".into()));
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &variant in &args.variants {
        let mut vcfg = cfg.clone();
        vcfg.run.variant = variant;
        finish_config(&mut vcfg)?;
        let reports = run_jobs(&vcfg)?;
        for &family in &vcfg.suite.functions {
            let mine: Vec<&RunReport> = reports.iter().filter(|(f, _)| *f == family).map(|(_, r)| r).collect();
            let fit = mean(mine.iter().map(|r| r.final_fitness));
            let var = mean(mine.iter().map(|r| (r.final_fitness - fit).powi(2)));
            let converged: Vec<f64> = mine.iter().filter_map(|r| r.converged_at.map(|t| t as f64)).collect();
            rows.push((
                family,
                format!(
                    "{},{},{},{},{:e},{:e},{:e},{},{:e}",
                    family.name(),
                    variant.name(),
                    vcfg.run.master_seed,
                    mine.len(),
                    fit,
                    var.sqrt(),
                    mean(mine.iter().map(|r| r.total_comm_cost as f64)),
                    converged.len(),
                    mean(converged.iter().copied()),
                ),
            ));
        }
        all.extend(reports);
    }
    // group by function, variants in the requested order
    let order: Vec<Family> = cfg.suite.functions.clone();
    rows.sort_by_key(|(f, _)| order.iter().position(|o| o == f));
    let table = cfg.output_dir.join(format!("ablation_seed{}.csv", cfg.run.master_seed));
    write_file(&table, |w| {
        writeln!(w, "{ABLATION_HEADER}")?;
        for (_, line) in &rows {
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;
    for (_, line) in &rows {
        println!("{line}");
    }
    println!("wrote {}", table.display());
    check_faults(all.iter().map(|(f, r)| (f.to_string(), r)))
}

fn cmd_wsn(args: WsnArgs) -> CmdResult {
    let mut cfg = load(&args.common)?;
    if let Some(v) = args.sensors {
        cfg.wsn.num_sensors = v;
    }
    if let Some(v) = args.targets {
        cfg.wsn.num_targets = v;
    }
    if let Some(v) = args.noise {
        cfg.wsn.noise_sigma = v;
    }
    if let Some(v) = args.variant {
        cfg.run.variant = v;
    }
    if args.common.seeds.is_none() && args.common.config.is_none() {
        cfg.run.num_runs = 1;
    }
    finish_config(&mut cfg)?;
    let results: Vec<Result<(u64, RunReport, f64), Failure>> = (0..cfg.repetitions())
        .into_par_iter()
        .map(|r| {
            let seed = cfg.run.run_seed(r);
            let problem = WsnProblem::generate(&cfg.wsn, seed)?;
            let run_cfg = engine::RunConfig {
                master_seed: seed,
                ..cfg.run.clone()
            };
            let report = engine::run(&run_cfg, &problem)?;
            let tag = format!("wsn_nt{}", cfg.wsn.num_targets);
            let path = cfg
                .output_dir
                .join(format!("{}.csv", trace_name(&tag, run_cfg.variant, seed)));
            let every = run_cfg.log_every.max(1);
            write_file(&path, |w| {
                writeln!(w, "iteration,err,disagreement")?;
                let last = report.trace.len().saturating_sub(1);
                for (idx, row) in report.trace.iter().enumerate() {
                    if row.iteration % every == 0 || idx == last {
                        writeln!(w, "{},{:e},{:e}", row.iteration, row.global_fitness, row.disagreement)?;
                    }
                }
                Ok(())
            })?;
            let err = problem.error(&report.final_states);
            Ok((seed, report, err))
        })
        .collect();
    let results: Vec<(u64, RunReport, f64)> = results.into_iter().collect::<Result<_, _>>()?;
    println!("seed\tfinal_err\tmin_err\tconverged_at");
    for (seed, report, err) in &results {
        let min_err = report.trace.iter().map(|r| r.global_fitness).fold(f64::INFINITY, f64::min);
        let conv = report.converged_at.map_or("-".to_string(), |t| t.to_string());
        println!("{seed}\t{err:.6e}\t{min_err:.6e}\t{conv}");
    }
    println!("mean final Err: {:.6e}", mean(results.iter().map(|r| r.2)));
    check_faults(results.iter().map(|(_, r, _)| ("wsn".to_string(), r)))
}

fn cmd_calibrate(args: CalibrateArgs) -> CmdResult {
    let mut cfg = load(&args.common)?;
    cfg.suite.functions = vec![args.function];
    cfg.validate()?;
    let spec = cfg.suite.build(args.function)?;
    let horizon = engine::probe_horizon(&cfg.run, &spec)?;
    eprintln!(
        "{}: {}-iteration baseline probe, master seed {}",
        args.function, cfg.run.probe_length, cfg.run.master_seed
    );
    println!("{horizon}");
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let text = fs::read_to_string(&args.path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.path.display())))?;
    let log: MatrixLog = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: not a matrix log: {e}", args.path.display())))?;
    let summary = replay_matrix_log(&log)?;
    println!("matrices checked: {}", summary.checked);
    println!("max row-sum deviation: {:e}", summary.max_row_sum_deviation);
    println!("violations: {}", summary.violations);
    println!("admissible: {}", summary.admissible());
    if summary.admissible() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "first inadmissible matrix from iteration {}",
            summary.first_violation.unwrap_or(0)
        )))
    }
}
