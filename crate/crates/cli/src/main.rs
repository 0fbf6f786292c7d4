//! Experiment runner: single runs, policy comparisons, batch-size sweeps, and
//! brute-force oracle verification.
//!
//! Outputs are CSV files (event log, per-type metrics, comparison and sweep
//! tables) written atomically into the output directory. Log verbosity is
//! controlled by `RUST_LOG`. Exit codes: 0 ok, 1 simulation/oracle failure,
//! 2 configuration error.

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use segserve::metrics::{aggregate, compute_all_metrics, rows_to_csv, AggregateReport};
use segserve::oracle;
use segserve::scheduler::SchedulerPolicy;
use segserve::simcore::{run, EngineFileConfig, EventLog, SimConfig};
use segserve::workload::{builtin_library, TraceLibrary, WorkloadSpec};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "segserve", version, about = "Time-utility LLM serving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy on one workload; writes eventlog.csv and metrics.csv.
    Run(RunArgs),
    /// Run several policies on the identical workload and seed; writes
    /// comparison.csv plus per-policy logs and metrics.
    Compare(CompareArgs),
    /// Sweep fixed batch sizes per policy; writes sweep.csv.
    Sweep(SweepArgs),
    /// Check scheduling optimality on brute-force instances from JSON.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Workload spec (JSON).
    #[arg(long)]
    workload: PathBuf,
    /// Engine cost model (JSON); defaults when omitted.
    #[arg(long)]
    engine: Option<PathBuf>,
    /// Seed override (the workload file carries one otherwise).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the effective configuration and exit without simulating.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scheduling policy.
    #[arg(long, default_value = "seg-pud")]
    policy: String,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated policy list; the first is the ratio baseline.
    #[arg(long, value_delimiter = ',', default_value = "seg-pud,fcfs-batch")]
    policy: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated policy list.
    #[arg(long, value_delimiter = ',', default_value = "seg-pud,fcfs-batch")]
    policy: Vec<String>,
    /// Comma-separated fixed batch sizes.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,12,16")]
    batch_sizes: Vec<u32>,
    /// Also run latency-guided admission (replaces the fixed cap) for
    /// policies that support it.
    #[arg(long)]
    adaptive: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Instances file (JSON array).
    #[arg(long)]
    instances: PathBuf,
}

enum CliError {
    Config(String),
    Run(String),
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Run(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Run(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    }
}

/// Workload label for CSV rows: the file stem (e.g. `wid1`).
fn wid_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "workload".into())
}

fn load_setup(common: &CommonArgs) -> Result<(SimConfig, TraceLibrary, String), CliError> {
    let text = std::fs::read_to_string(&common.workload).map_err(|e| {
        CliError::Config(format!("cannot read workload {}: {e}", common.workload.display()))
    })?;
    let mut workload: WorkloadSpec = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("bad workload {}: {e}", common.workload.display()))
    })?;
    if let Some(seed) = common.seed {
        workload.seed = seed;
    }
    let library = match &workload.traces_path {
        Some(path) => TraceLibrary::load(path)
            .map_err(|e| CliError::Config(format!("trace library {path}: {e}")))?,
        None => builtin_library(),
    };
    let mut config = SimConfig::new(workload, SchedulerPolicy::SegPud);
    if let Some(engine_path) = &common.engine {
        let text = std::fs::read_to_string(engine_path).map_err(|e| {
            CliError::Config(format!("cannot read engine {}: {e}", engine_path.display()))
        })?;
        let engine: EngineFileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad engine {}: {e}", engine_path.display())))?;
        engine.apply(&mut config);
    }
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((config, library, wid_label(&common.workload)))
}

fn parse_policy(name: &str) -> Result<SchedulerPolicy, CliError> {
    name.parse()
        .map_err(|e: segserve::scheduler::SchedulerError| CliError::Config(e.to_string()))
}

fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Run(format!("writing {}: {e}", path.display())))
}

fn simulate(config: &SimConfig, library: &TraceLibrary) -> Result<EventLog, CliError> {
    run(config, library).map_err(|e| CliError::Run(e.to_string()))
}

fn report_for(log: &EventLog, policy: &str, wid: &str) -> AggregateReport {
    let (metrics, dropped) = compute_all_metrics(log);
    let dropped_traces: Vec<u32> = dropped
        .iter()
        .filter_map(|id| {
            log.iter_kind(segserve::SimEventKind::Arrival)
                .find(|e| e.request_id == Some(*id))
                .and_then(|e| e.payload.get("trace_id"))
                .and_then(|v| v.as_u64())
                .map(|t| t as u32)
        })
        .collect();
    aggregate(&metrics, &dropped_traces, policy, wid)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (mut config, library, wid) = load_setup(&args.common)?;
    config.policy = parse_policy(&args.policy)?;
    if args.common.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&config).expect("config serializes")
        );
        return Ok(());
    }
    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| CliError::Run(format!("creating output dir: {e}")))?;
    let log = simulate(&config, &library)?;
    if log.non_quiescent {
        log::warn!("time cap reached with work pending; log is partial");
    }
    let report = report_for(&log, &args.policy, &wid);
    write_atomic(&args.common.out.join("eventlog.csv"), &log.to_csv())?;
    write_atomic(&args.common.out.join("metrics.csv"), &rows_to_csv(&report.rows))?;
    println!(
        "{}: {} events, {} completed, {} dropped, total utility {:.3}",
        wid,
        log.events.len(),
        report.completed,
        report.dropped,
        report.total_utility
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let (base_config, library, wid) = load_setup(&args.common)?;
    let policies: Vec<SchedulerPolicy> = args
        .policy
        .iter()
        .map(|p| parse_policy(p))
        .collect::<Result<_, _>>()?;
    if args.common.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&base_config).expect("config serializes")
        );
        return Ok(());
    }
    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| CliError::Run(format!("creating output dir: {e}")))?;

    let runs: Vec<(SchedulerPolicy, Result<EventLog, CliError>)> = policies
        .par_iter()
        .map(|policy| {
            let mut config = base_config.clone();
            config.policy = *policy;
            (*policy, simulate(&config, &library))
        })
        .collect();

    let mut reports = Vec::new();
    for (policy, log) in runs {
        let log = log?;
        let report = report_for(&log, &policy.to_string(), &wid);
        write_atomic(
            &args.common.out.join(format!("eventlog_{policy}.csv")),
            &log.to_csv(),
        )?;
        write_atomic(
            &args.common.out.join(format!("metrics_{policy}.csv")),
            &rows_to_csv(&report.rows),
        )?;
        reports.push((policy, report));
    }

    let csv = comparison_csv(&wid, &reports);
    write_atomic(&args.common.out.join("comparison.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Side-by-side per-type means with utility ratios against the first policy.
fn comparison_csv(wid: &str, reports: &[(SchedulerPolicy, AggregateReport)]) -> String {
    let mut header = String::from("wid,task_type");
    for (policy, _) in reports {
        let _ = write!(
            header,
            ",n_{policy},mean_utility_{policy},mean_response_s_{policy},mean_waiting_s_{policy}"
        );
    }
    for (policy, _) in reports {
        let _ = write!(header, ",utility_ratio_{policy}");
    }
    let mut out = header;
    out.push('\n');
    let types: Vec<String> = reports[0].1.rows.iter().map(|r| r.task_type.clone()).collect();
    for task_type in types {
        let mut line = format!("{wid},{task_type}");
        let mut utilities = Vec::new();
        for (_, report) in reports {
            let row = report
                .rows
                .iter()
                .find(|r| r.task_type == task_type)
                .expect("identical workload produces identical types");
            let _ = write!(
                line,
                ",{},{:.6},{:.6},{:.6}",
                row.n, row.mean_utility, row.mean_response_s, row.mean_waiting_s
            );
            utilities.push(row.mean_utility);
        }
        let baseline = utilities[0];
        for value in &utilities {
            if baseline.abs() > 1e-12 {
                let _ = write!(line, ",{:.4}", value / baseline);
            } else {
                let _ = write!(line, ",");
            }
        }
        line.push('\n');
        out.push_str(&line);
    }
    out
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let (base_config, library, wid) = load_setup(&args.common)?;
    let policies: Vec<SchedulerPolicy> = args
        .policy
        .iter()
        .map(|p| parse_policy(p))
        .collect::<Result<_, _>>()?;
    if args.batch_sizes.contains(&0) {
        return Err(CliError::Config("batch sizes must be >= 1".into()));
    }
    if args.common.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&base_config).expect("config serializes")
        );
        return Ok(());
    }
    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| CliError::Run(format!("creating output dir: {e}")))?;

    let mut grid: Vec<(SchedulerPolicy, Option<u32>)> = Vec::new();
    for policy in &policies {
        for size in &args.batch_sizes {
            grid.push((*policy, Some(*size)));
        }
        if args.adaptive && policy.adaptive_admission() {
            grid.push((*policy, None));
        }
    }

    let results: Vec<Result<String, CliError>> = grid
        .par_iter()
        .map(|(policy, cap)| {
            let mut config = base_config.clone();
            config.policy = *policy;
            config.fixed_batch_cap = *cap;
            let log = simulate(&config, &library)?;
            let report = report_for(&log, &policy.to_string(), &wid);
            let size = cap.map(|c| c.to_string()).unwrap_or_else(|| "adaptive".into());
            Ok(format!(
                "{policy},{size},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                report.completed,
                report.dropped,
                report.total_utility,
                overall(&report, |r| r.mean_utility),
                overall(&report, |r| r.mean_response_s),
                overall(&report, |r| r.mean_waiting_s),
            ))
        })
        .collect();

    let mut csv = String::from(
        "policy,batch_size,completed,dropped,total_utility,mean_utility,mean_response_s,mean_waiting_s\n",
    );
    for line in results {
        csv.push_str(&line?);
    }
    write_atomic(&args.common.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn overall(report: &AggregateReport, f: impl Fn(&segserve::AggregateRow) -> f64) -> f64 {
    report
        .rows
        .iter()
        .find(|r| r.task_type == "overall")
        .map(f)
        .unwrap_or(0.0)
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let instances = oracle::load_instances(&args.instances)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut hard_failures = 0;
    for (i, inst) in instances.iter().enumerate() {
        match oracle::pareto_check(inst) {
            Ok(report) => {
                let mut status = if report.is_pareto_optimal() {
                    "ok".to_string()
                } else if report.hypothesis_violated || !report.strictness_applies {
                    "dominated".to_string()
                } else {
                    hard_failures += 1;
                    "COUNTEREXAMPLE".to_string()
                };
                if report.hypothesis_violated {
                    status.push_str(" [non-monotone TUF: hypothesis violated, guarantee waived]");
                } else if !report.strictness_applies {
                    status.push_str(" [TUF plateau reachable: guarantee not strict]");
                }
                println!(
                    "instance {i}: {} schedules, max objective {:.4}, {} maximizers, {}",
                    report.schedules, report.max_objective, report.argmax_total, status
                );
            }
            Err(oracle::OracleError::InstanceTooLarge(msg)) => {
                println!("instance {i}: skipped ({msg})");
            }
            Err(e) => return Err(CliError::Config(format!("instance {i}: {e}"))),
        }
    }
    if hard_failures > 0 {
        return Err(CliError::Run(format!(
            "{hard_failures} instance(s) violated the optimality guarantee"
        )));
    }
    Ok(())
}
