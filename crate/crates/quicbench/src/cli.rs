//! Command-line front door: plan validation, matrix execution, artifact
//! parsing and report generation as separate stages on disk, so
//! re-analysis never requires re-measurement.
//!
//! Exit codes: 0 all requested work succeeded, 1 measurement failures,
//! 2 usage or configuration errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{
    build_results_table, matrix_report, sweep_report, ResultsTable, RunMetrics, StatsSummary,
};
use crate::collectors::{CollectorId, CollectorOutput, RawToolOutputs};
use crate::exec::{Executor, LocalExecutor, SshExecutor};
use crate::orchestrator::{
    load_artifacts, probe_host, run_measurement, MeasurementOptions, RunArtifacts, RunOutcome,
    RunSummary, TransferVerdict,
};
use crate::parsers::counters::{diff_counters, parse_counter_snapshot, CounterKind};
use crate::parsers::pidstat::parse_pidstat;
use crate::parsers::qlog::count_acks_qlog_all;
use crate::perfcat::{category_breakdown, CategoryRuleSet};
use crate::plan::{expand_matrix, fingerprint, load_plan, ExperimentPlan, ProvenanceRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MEASUREMENT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "quicbench", version, about = "Transport-protocol goodput benchmarking harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a plan, print its digest and matrix size, probe hosts.
    Check {
        #[arg(long)]
        plan: PathBuf,
        /// Remote client host (ssh); local process execution when absent.
        #[arg(long)]
        client_host: Option<String>,
        /// Remote server host (ssh); local process execution when absent.
        #[arg(long)]
        server_host: Option<String>,
    },
    /// Print the expanded measurement matrix without running anything.
    Matrix {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Execute the expanded matrix, writing raw artifacts and provenance.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Output directory for raw artifacts.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        client_host: Option<String>,
        #[arg(long)]
        server_host: Option<String>,
        /// Comma-separated collector override (e.g. `netstat,pidstat`).
        #[arg(long)]
        collectors: Option<String>,
    },
    /// Parse raw artifacts into results.csv / results.json.
    Parse {
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit a report over parsed results.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        style: ReportStyle,
        /// Sweep knob name (required for --style sweep with several knobs).
        #[arg(long)]
        knob: Option<String>,
        /// Category rule file; bundled defaults when absent.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// perf-script text to categorize (required for --style category).
        #[arg(long)]
        perf_script: Option<PathBuf>,
        /// Substring filter on the sampled process command.
        #[arg(long, default_value = "")]
        process: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportStyle {
    Matrix,
    Sweep,
    Category,
}

/// Conventions every report is labeled with, so derived numbers are
/// interpretable without the source.
#[derive(Debug, Serialize)]
struct ReportMetadata {
    quartile_convention: &'static str,
    loss_rate_denominator: &'static str,
    ack_source: &'static str,
}

const METADATA: ReportMetadata = ReportMetadata {
    quartile_convention: "linear interpolation between closest ranks",
    loss_rate_denominator: "dropped / (dropped + delivered)",
    ack_source: "qlog",
};

/// Bundled default categorization rules, a best-effort reconstruction.
pub const DEFAULT_RULES: &str = include_str!("../rules/generic.rules");

#[derive(Debug, Serialize)]
struct SeriesPoint {
    x: String,
    mean: f64,
    median: f64,
    q1: f64,
    q3: f64,
    min: f64,
    max: f64,
}

fn series_point(x: String, s: &StatsSummary) -> SeriesPoint {
    SeriesPoint {
        x,
        mean: s.mean,
        median: s.median,
        q1: s.q1,
        q3: s.q3,
        min: s.min,
        max: s.max,
    }
}

pub fn execute_command(cli: Cli) -> i32 {
    match run_command(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_MEASUREMENT_FAILURE
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// The work itself failed: exit 1.
    Failure(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn make_executor(host: &Option<String>, label: &str) -> Box<dyn Executor> {
    match host {
        Some(h) => Box::new(SshExecutor::new(h.clone())),
        None => Box::new(LocalExecutor::new(format!("local-{label}"))),
    }
}

fn run_command(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Check {
            plan,
            client_host,
            server_host,
        } => cmd_check(&plan, &client_host, &server_host),
        Command::Matrix { plan } => cmd_matrix(&plan),
        Command::Run {
            plan,
            out,
            client_host,
            server_host,
            collectors,
        } => cmd_run(&plan, &out, &client_host, &server_host, collectors.as_deref()),
        Command::Parse { out } => cmd_parse(&out),
        Command::Report {
            out,
            style,
            knob,
            rules,
            perf_script,
            process,
        } => cmd_report(&out, style, knob.as_deref(), rules.as_deref(), perf_script.as_deref(), &process),
    }
}

fn load_valid_plan(path: &Path) -> Result<ExperimentPlan, CliError> {
    load_plan(path).map_err(usage)
}

fn cmd_check(
    plan_path: &Path,
    client_host: &Option<String>,
    server_host: &Option<String>,
) -> Result<i32, CliError> {
    let plan = load_valid_plan(plan_path)?;
    let specs = expand_matrix(&plan).map_err(usage)?;
    println!("plan digest: {}", plan.digest());
    println!("pairs: {}", plan.resolved_pairs().len());
    println!("measurements: {}", specs.len());
    let client_exec = make_executor(client_host, "client");
    let server_exec = make_executor(server_host, "server");
    let mut ok = true;
    for exec in [client_exec.as_ref(), server_exec.as_ref()] {
        match probe_host(exec, &plan.implementations) {
            Ok(probe) => {
                println!("[{}] cpu: {}", probe.host, probe.hardware.cpu_model);
                println!("[{}] os: {}", probe.host, probe.os_release);
                for (name, version) in &probe.implementation_versions {
                    match version {
                        Some(v) => println!("[{}] {name}: {v}", probe.host),
                        None => {
                            println!("[{}] {name}: version probe failed", probe.host);
                            ok = false;
                        }
                    }
                }
            }
            Err(e) => {
                eprintln!("[{}] probe failed: {e}", exec.host());
                ok = false;
            }
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_MEASUREMENT_FAILURE })
}

fn cmd_matrix(plan_path: &Path) -> Result<i32, CliError> {
    let plan = load_valid_plan(plan_path)?;
    let specs = expand_matrix(&plan).map_err(usage)?;
    for spec in &specs {
        println!("{}", spec.id);
    }
    Ok(EXIT_OK)
}

fn parse_collector_override(
    raw: Option<&str>,
) -> Result<Option<BTreeSet<CollectorId>>, CliError> {
    let Some(raw) = raw else { return Ok(None) };
    let mut set = BTreeSet::new();
    for part in raw.split(',').filter(|s| !s.trim().is_empty()) {
        let id: CollectorId = part
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown collector `{}`", part.trim())))?;
        set.insert(id);
    }
    Ok(Some(set))
}

fn cmd_run(
    plan_path: &Path,
    out: &Path,
    client_host: &Option<String>,
    server_host: &Option<String>,
    collectors: Option<&str>,
) -> Result<i32, CliError> {
    let plan = load_valid_plan(plan_path)?;
    let mut specs = expand_matrix(&plan).map_err(usage)?;
    if let Some(set) = parse_collector_override(collectors)? {
        for spec in &mut specs {
            spec.collectors = set.clone();
        }
    }
    let client_exec = make_executor(client_host, "client");
    let server_exec = make_executor(server_host, "server");
    std::fs::create_dir_all(out.join("runs")).map_err(usage)?;

    let mut probes = Vec::new();
    for exec in [client_exec.as_ref(), server_exec.as_ref()] {
        match probe_host(exec, &plan.implementations) {
            Ok(p) => probes.push(p),
            Err(e) => eprintln!("[{}] probe failed: {e}", exec.host()),
        }
    }
    let provenance = fingerprint(&plan, &probes);
    let prov_json = serde_json::to_string_pretty(&provenance).map_err(failure)?;
    std::fs::write(out.join("provenance.json"), prov_json).map_err(failure)?;

    let options = MeasurementOptions::default();
    let mut failures = 0usize;
    for (seq, spec) in specs.iter().enumerate() {
        // The sequence prefix preserves matrix order on disk.
        let run_dir = out.join("runs").join(format!("{seq:04}-{}", spec.id));
        match run_measurement(spec, client_exec.as_ref(), server_exec.as_ref(), &run_dir, &options)
        {
            Ok(artifacts) => {
                let ok = artifacts.outcome == RunOutcome::Completed
                    && artifacts.verdict == TransferVerdict::Ok;
                if !ok {
                    failures += 1;
                }
                println!(
                    "{}: {:?}/{:?}{}",
                    spec.id,
                    artifacts.outcome,
                    artifacts.verdict,
                    artifacts
                        .duration_secs
                        .map(|d| format!(" in {d:.3}s"))
                        .unwrap_or_default()
                );
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", spec.id);
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} of {} measurements failed", specs.len());
        return Ok(EXIT_MEASUREMENT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn blob_text(output: &CollectorOutput, name: &str) -> Option<String> {
    output
        .blobs
        .iter()
        .find(|b| b.name == name)
        .and_then(|b| std::fs::read_to_string(&b.path).ok())
}

fn counter_delta(
    outputs: &RawToolOutputs,
    id: CollectorId,
    kind: CounterKind,
) -> Option<crate::parsers::counters::CounterDelta> {
    let output = outputs.get(&id)?;
    let before = parse_counter_snapshot(&blob_text(output, "before")?, kind).ok()?;
    let after = parse_counter_snapshot(&blob_text(output, "after")?, kind).ok()?;
    diff_counters(&before, &after).ok()
}

/// Extract the metric record from one run's raw tool outputs. Absent or
/// failed collectors yield absent metrics, never zeros.
pub fn extract_metrics(artifacts: &RunArtifacts) -> RunMetrics {
    let mut metrics = RunMetrics::default();
    if let Some(delta) = counter_delta(&artifacts.client_collectors, CollectorId::Netstat, CounterKind::Netstat) {
        metrics.rcvbuf_drops = delta.deltas.get("Udp.receive-buffer-errors").copied();
    }
    if let Some(delta) = counter_delta(&artifacts.client_collectors, CollectorId::Ethtool, CounterKind::Ethtool) {
        let drops: Vec<i64> = delta
            .deltas
            .iter()
            .filter(|(name, _)| name.contains("rx_dropped"))
            .map(|(_, v)| *v)
            .collect();
        if !drops.is_empty() {
            metrics.ring_drops = Some(drops.iter().sum());
        }
    }
    if let Some(qlog) = artifacts.client_collectors.get(&CollectorId::Qlog) {
        let texts: Vec<String> = qlog
            .blobs
            .iter()
            .filter_map(|b| std::fs::read_to_string(&b.path).ok())
            .collect();
        if !texts.is_empty() {
            if let Ok(stats) = count_acks_qlog_all(texts.iter().map(String::as_str)) {
                metrics.ack_frames_sent = Some(stats.ack_frames_sent);
                metrics.packets_sent = Some(stats.packets_sent);
                metrics.packets_received = Some(stats.packets_received);
            }
        }
    }
    let cpu_mean = |outputs: &RawToolOutputs| {
        outputs
            .get(&CollectorId::Pidstat)
            .and_then(|o| blob_text(o, "stdout"))
            .and_then(|text| parse_pidstat(&text).mean_cpu())
    };
    metrics.client_cpu_mean = cpu_mean(&artifacts.client_collectors);
    metrics.server_cpu_mean = cpu_mean(&artifacts.server_collectors);
    metrics
}

fn load_run_dirs(out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let runs = out.join("runs");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs)
        .map_err(|e| CliError::Usage(format!("no artifacts under {}: {e}", runs.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Assemble results.csv / results.json from the artifact tree. Idempotent
/// over the same tree.
pub fn parse_artifact_tree(out: &Path) -> Result<ResultsTable, CliError> {
    let provenance_digest: Option<String> = std::fs::read_to_string(out.join("provenance.json"))
        .ok()
        .and_then(|text| serde_json::from_str::<ProvenanceRecord>(&text).ok())
        .map(|p| p.plan_digest);
    let mut runs = Vec::new();
    for dir in load_run_dirs(out)? {
        let artifacts = load_artifacts(&dir)
            .map_err(|e| CliError::Failure(format!("unreadable artifacts in {}: {e}", dir.display())))?;
        let metrics = extract_metrics(&artifacts);
        let summary = RunSummary {
            provenance_digest: provenance_digest.clone(),
            ..artifacts.summary()
        };
        runs.push((artifacts.spec.clone(), summary, metrics));
    }
    build_results_table(runs).map_err(failure)
}

fn cmd_parse(out: &Path) -> Result<i32, CliError> {
    let table = parse_artifact_tree(out)?;
    let mut csv_buf = Vec::new();
    table.render_csv(&mut csv_buf).map_err(failure)?;
    std::fs::write(out.join("results.csv"), &csv_buf).map_err(failure)?;
    let json = serde_json::to_string_pretty(&table).map_err(failure)?;
    std::fs::write(out.join("results.json"), json).map_err(failure)?;
    println!("{} rows -> {}", table.rows.len(), out.join("results.csv").display());
    Ok(EXIT_OK)
}

fn load_table(out: &Path) -> Result<ResultsTable, CliError> {
    let path = out.join("results.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("no parsed results at {}: {e} (run `parse` first)", path.display())))?;
    ResultsTable::parse_csv(&text).map_err(failure)
}

fn cmd_report(
    out: &Path,
    style: ReportStyle,
    knob: Option<&str>,
    rules: Option<&Path>,
    perf_script: Option<&Path>,
    process: &str,
) -> Result<i32, CliError> {
    match style {
        ReportStyle::Matrix => {
            let table = load_table(out)?;
            let cells = matrix_report(&table).map_err(failure)?;
            for cell in &cells {
                match &cell.goodput {
                    Some(g) => println!(
                        "{} -> {}: mean {:.1} Mbit/s, median {:.1}, q1 {:.1}, q3 {:.1} ({} ok, {} failed)",
                        cell.client, cell.server, g.mean, g.median, g.q1, g.q3, cell.ok_runs, cell.failed_runs
                    ),
                    None => println!(
                        "{} -> {}: no successful runs ({} failed)",
                        cell.client, cell.server, cell.failed_runs
                    ),
                }
            }
            #[derive(Serialize)]
            struct MatrixOut<'a> {
                metadata: &'a ReportMetadata,
                cells: &'a [crate::analysis::MatrixCell],
            }
            write_report(out, "matrix", &MatrixOut { metadata: &METADATA, cells: &cells })?;
        }
        ReportStyle::Sweep => {
            let table = load_table(out)?;
            let knob_name = match knob {
                Some(k) => k.to_string(),
                None => {
                    let knobs: BTreeSet<String> = table
                        .rows
                        .iter()
                        .filter_map(|r| r.knob_name.clone())
                        .collect();
                    match knobs.len() {
                        1 => knobs.into_iter().next().expect("len checked"),
                        0 => return Err(CliError::Usage("no sweep knob in results".into())),
                        _ => {
                            return Err(CliError::Usage(format!(
                                "several knobs present ({}); pass --knob",
                                knobs.into_iter().collect::<Vec<_>>().join(", ")
                            )))
                        }
                    }
                }
            };
            let report = sweep_report(&table, &knob_name).map_err(usage)?;
            let series: Vec<SeriesPoint> = report
                .groups
                .iter()
                .filter_map(|g| g.goodput.as_ref().map(|s| series_point(g.knob_value.clone(), s)))
                .collect();
            for group in &report.groups {
                let stats = group
                    .goodput
                    .as_ref()
                    .map(|g| format!("mean {:.1} Mbit/s, median {:.1}", g.mean, g.median))
                    .unwrap_or_else(|| "no successful runs".into());
                println!(
                    "{} -> {} @ {}={}: {} ({} ok, {} failed)",
                    group.client, group.server, report.knob, group.knob_value,
                    stats, group.ok_runs, group.failed_runs
                );
            }
            #[derive(Serialize)]
            struct SweepOut<'a> {
                metadata: &'a ReportMetadata,
                report: &'a crate::analysis::SweepReport,
                series: &'a [SeriesPoint],
            }
            write_report(out, "sweep", &SweepOut { metadata: &METADATA, report: &report, series: &series })?;
        }
        ReportStyle::Category => {
            let script_path = perf_script
                .ok_or_else(|| CliError::Usage("--style category needs --perf-script <file>".into()))?;
            let text = std::fs::read_to_string(script_path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", script_path.display())))?;
            let rule_set = match rules {
                Some(path) => crate::perfcat::load_rules(path).map_err(usage)?,
                None => CategoryRuleSet::parse(DEFAULT_RULES).map_err(usage)?,
            };
            let samples = crate::parsers::perf::parse_perf_script(&text);
            let breakdown = category_breakdown(&samples, &rule_set, process, true);
            for (category, count) in &breakdown.counts {
                let fraction = breakdown.fractions.get(category).copied().unwrap_or(0.0);
                println!("{category}: {count} samples ({:.1}%)", fraction * 100.0);
            }
            println!(
                "total {} samples, {} matching filter",
                breakdown.total_samples, breakdown.matched_samples
            );
            #[derive(Serialize)]
            struct CategoryOut<'a> {
                metadata: &'a ReportMetadata,
                /// Shipped rules are best-effort reconstructions.
                rules_provenance: &'a str,
                breakdown: &'a crate::perfcat::CategoryBreakdown,
            }
            write_report(
                out,
                "category",
                &CategoryOut {
                    metadata: &METADATA,
                    rules_provenance: if rules.is_some() { "user-supplied" } else { "bundled best-effort defaults" },
                    breakdown: &breakdown,
                },
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn write_report<T: Serialize>(out: &Path, style: &str, value: &T) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(failure)?;
    let path = out.join(format!("report_{style}.json"));
    let json = serde_json::to_string_pretty(value).map_err(failure)?;
    std::fs::write(&path, json).map_err(failure)?;
    println!("wrote {}", path.display());
    Ok(())
}
