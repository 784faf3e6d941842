//! End-to-end CLI pipeline: check, matrix, run, parse, report over the
//! bundled reference endpoints on loopback.

use std::path::Path;

use quicbench::cli::{execute_command, Cli, Command, ReportStyle};

fn write_plan(dir: &Path, transfer: u64, reps: u32) -> std::path::PathBuf {
    let toml = format!(
        r#"
pairs = "all-pairs"
repetitions = {reps}
transfer_size = {transfer}
collectors = ["netstat"]

[[implementations]]
name = "reference"
role_support = "both"
run_client_command = "{client}"
run_server_command = "{server}"
version_command = "echo ref-0.1.0"
"#,
        client = env!("CARGO_BIN_EXE_quicbench-ref-client"),
        server = env!("CARGO_BIN_EXE_quicbench-ref-server"),
    );
    let path = dir.join("plan.toml");
    std::fs::write(&path, toml).unwrap();
    path
}

#[test]
fn full_pipeline_on_loopback() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), 1_000_000, 2);
    let out = dir.path().join("results");

    let code = execute_command(Cli {
        command: Command::Check {
            plan: plan.clone(),
            client_host: None,
            server_host: None,
        },
    });
    assert_eq!(code, 0, "check");

    let code = execute_command(Cli {
        command: Command::Run {
            plan: plan.clone(),
            out: out.clone(),
            client_host: None,
            server_host: None,
            collectors: None,
        },
    });
    assert_eq!(code, 0, "run");
    assert!(out.join("provenance.json").exists());
    assert_eq!(std::fs::read_dir(out.join("runs")).unwrap().count(), 2);

    let code = execute_command(Cli {
        command: Command::Parse { out: out.clone() },
    });
    assert_eq!(code, 0, "parse");
    let csv1 = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv1.lines().count(), 3); // header + 2 rows

    // parse is idempotent over the same artifact tree.
    let code = execute_command(Cli {
        command: Command::Parse { out: out.clone() },
    });
    assert_eq!(code, 0);
    let csv2 = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv1, csv2);

    let code = execute_command(Cli {
        command: Command::Report {
            out: out.clone(),
            style: ReportStyle::Matrix,
            knob: None,
            rules: None,
            perf_script: None,
            process: String::new(),
        },
    });
    assert_eq!(code, 0, "report");
    let report = std::fs::read_to_string(out.join("report_matrix.json")).unwrap();
    assert!(report.contains("\"client\": \"reference\""));
    assert!(report.contains("linear interpolation"));
}

#[test]
fn matrix_lists_ids_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), 1_000, 3);
    let code = execute_command(Cli {
        command: Command::Matrix { plan },
    });
    assert_eq!(code, 0);
}

#[test]
fn invalid_plan_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "repetitions = 0\npairs = \"all-pairs\"\n").unwrap();
    let code = execute_command(Cli {
        command: Command::Check {
            plan: path,
            client_host: None,
            server_host: None,
        },
    });
    assert_eq!(code, 2);
}

#[test]
fn report_without_parse_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let code = execute_command(Cli {
        command: Command::Report {
            out: dir.path().to_path_buf(),
            style: ReportStyle::Matrix,
            knob: None,
            rules: None,
            perf_script: None,
            process: String::new(),
        },
    });
    assert_eq!(code, 2);
}
