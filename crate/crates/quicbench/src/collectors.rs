//! Lifecycle management for the monitoring tool suite around a measurement.
//!
//! Three collection modes exist: snapshot pairs (ethtool, netstat) taken
//! before and after the transfer, background streams (tcpdump, ifstat,
//! pidstat, perf) running for its duration, and directory harvests (qlog)
//! where the endpoint writes files into a directory the framework set up.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{BackgroundTask, CommandRequest, ExecError, Executor};

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The closed set of supported monitoring tools.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum CollectorId {
    Tcpdump,
    Qlog,
    Ifstat,
    Ethtool,
    Netstat,
    Pidstat,
    Perf,
}

impl CollectorId {
    pub const ALL: [CollectorId; 7] = [
        CollectorId::Tcpdump,
        CollectorId::Qlog,
        CollectorId::Ifstat,
        CollectorId::Ethtool,
        CollectorId::Netstat,
        CollectorId::Pidstat,
        CollectorId::Perf,
    ];

    pub fn mode(self) -> CollectorMode {
        match self {
            CollectorId::Ethtool | CollectorId::Netstat => CollectorMode::SnapshotPair,
            CollectorId::Qlog => CollectorMode::DirectoryHarvest,
            _ => CollectorMode::BackgroundStream,
        }
    }
}

impl fmt::Display for CollectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CollectorId::Tcpdump => "tcpdump",
            CollectorId::Qlog => "qlog",
            CollectorId::Ifstat => "ifstat",
            CollectorId::Ethtool => "ethtool",
            CollectorId::Netstat => "netstat",
            CollectorId::Pidstat => "pidstat",
            CollectorId::Perf => "perf",
        };
        f.write_str(s)
    }
}

impl FromStr for CollectorId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tcpdump" => Ok(CollectorId::Tcpdump),
            "qlog" => Ok(CollectorId::Qlog),
            "ifstat" => Ok(CollectorId::Ifstat),
            "ethtool" => Ok(CollectorId::Ethtool),
            "netstat" => Ok(CollectorId::Netstat),
            "pidstat" => Ok(CollectorId::Pidstat),
            "perf" => Ok(CollectorId::Perf),
            other => Err(format!("unknown collector `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollectorMode {
    BackgroundStream,
    SnapshotPair,
    DirectoryHarvest,
}

/// How to invoke one tool. `command` supports the placeholders `{iface}`,
/// `{target}` (pid pattern or comm name), and `{out}` (capture file path).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectorSpec {
    pub id: CollectorId,
    pub command: String,
    /// Interface for NIC tools, process pattern for pidstat.
    pub target: String,
}

impl CollectorSpec {
    /// Default invocation for a tool. pidstat samples at 1 s, perf at
    /// 99 Hz; tcpdump, qlog and perf are heavyweight and should only be
    /// enabled when their data is needed.
    pub fn default_for(id: CollectorId, iface: &str, process_pattern: &str) -> Self {
        let command = match id {
            CollectorId::Tcpdump => "tcpdump -i {iface} -w {out} udp".to_string(),
            CollectorId::Qlog => String::new(),
            CollectorId::Ifstat => "ifstat -i {iface} 1".to_string(),
            CollectorId::Ethtool => "ethtool -S {iface}".to_string(),
            CollectorId::Netstat => "netstat -su".to_string(),
            CollectorId::Pidstat => "pidstat -u -C {target} 1".to_string(),
            CollectorId::Perf => "perf record -F 99 -a -g -o {out} -- sleep 86400".to_string(),
        };
        let target = match id {
            CollectorId::Pidstat => process_pattern.to_string(),
            _ => iface.to_string(),
        };
        CollectorSpec {
            id,
            command,
            target,
        }
    }

    fn render(&self, iface_or_target: &str, out: &str) -> String {
        self.command
            .replace("{iface}", iface_or_target)
            .replace("{target}", &self.target)
            .replace("{out}", out)
    }
}

/// One named output of a collector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blob {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CollectorOutput {
    pub blobs: Vec<Blob>,
    pub failed: bool,
    pub failure: Option<String>,
}

/// Outputs keyed by collector id; keys are exactly the enabled set even
/// when individual tools failed.
pub type RawToolOutputs = BTreeMap<CollectorId, CollectorOutput>;

struct ActiveStream {
    id: CollectorId,
    task: Box<dyn BackgroundTask>,
    capture_path: Option<PathBuf>,
}

/// A started set of collectors; stop it exactly once to harvest outputs.
/// Stopping again returns the same outputs.
pub struct CollectorSession<'a> {
    exec: &'a dyn Executor,
    dir: PathBuf,
    streams: Vec<ActiveStream>,
    outputs: RawToolOutputs,
    pub qlog_dir: Option<PathBuf>,
    stopped: Option<RawToolOutputs>,
    grace: Duration,
}

fn failed(reason: impl Into<String>) -> CollectorOutput {
    CollectorOutput {
        blobs: Vec::new(),
        failed: true,
        failure: Some(reason.into()),
    }
}

/// Take "before" snapshots, start background streams, and create harvest
/// directories. A tool missing on the host flags that collector as failed;
/// the others proceed.
pub fn start_collectors<'a>(
    specs: &[CollectorSpec],
    exec: &'a dyn Executor,
    dir: PathBuf,
) -> Result<CollectorSession<'a>, CollectorError> {
    std::fs::create_dir_all(&dir)?;
    let mut session = CollectorSession {
        exec,
        dir: dir.clone(),
        streams: Vec::new(),
        outputs: RawToolOutputs::new(),
        qlog_dir: None,
        stopped: None,
        grace: Duration::from_secs(3),
    };
    for spec in specs {
        let tool_dir = dir.join(spec.id.to_string());
        std::fs::create_dir_all(&tool_dir)?;
        match spec.id.mode() {
            CollectorMode::SnapshotPair => {
                let command = spec.render(&spec.target, "");
                match exec.run(&CommandRequest::new(command)) {
                    Ok(out) if out.success() => {
                        let path = tool_dir.join("before.txt");
                        std::fs::write(&path, &out.stdout)?;
                        session.outputs.insert(
                            spec.id,
                            CollectorOutput {
                                blobs: vec![Blob {
                                    name: "before".into(),
                                    path,
                                }],
                                failed: false,
                                failure: None,
                            },
                        );
                    }
                    Ok(out) => {
                        session
                            .outputs
                            .insert(spec.id, failed(out.stderr.trim().to_string()));
                    }
                    Err(e) => {
                        session.outputs.insert(spec.id, failed(e.to_string()));
                    }
                }
            }
            CollectorMode::DirectoryHarvest => {
                let harvest = tool_dir.join("harvest");
                std::fs::create_dir_all(&harvest)?;
                session.qlog_dir = Some(harvest);
                session.outputs.insert(spec.id, CollectorOutput::default());
            }
            CollectorMode::BackgroundStream => {
                let capture_path = tool_dir.join("capture.dat");
                let command = spec.render(&spec.target, &capture_path.to_string_lossy());
                match exec.spawn(&CommandRequest::new(command), &tool_dir, "stream") {
                    Ok(task) => {
                        // Give the tool a moment to fail fast (missing
                        // binary, bad flags) so that shows up as a
                        // collector failure, not an empty capture.
                        std::thread::sleep(Duration::from_millis(50));
                        session.streams.push(ActiveStream {
                            id: spec.id,
                            task,
                            capture_path: if spec.command.contains("{out}") {
                                Some(capture_path)
                            } else {
                                None
                            },
                        });
                        session.outputs.insert(spec.id, CollectorOutput::default());
                    }
                    Err(e) => {
                        session.outputs.insert(spec.id, failed(e.to_string()));
                    }
                }
            }
        }
    }
    Ok(session)
}

/// Snapshot-pair specs to rerun at stop time, captured from the session's
/// output keys.
fn snapshot_specs(outputs: &RawToolOutputs) -> Vec<CollectorId> {
    outputs
        .keys()
        .filter(|id| id.mode() == CollectorMode::SnapshotPair)
        .copied()
        .collect()
}

/// Stop streams, take "after" snapshots, harvest directories. Idempotent.
pub fn stop_collectors(
    session: &mut CollectorSession<'_>,
    specs: &[CollectorSpec],
) -> Result<RawToolOutputs, CollectorError> {
    if let Some(outputs) = &session.stopped {
        return Ok(outputs.clone());
    }
    let mut outputs = session.outputs.clone();
    // Background streams: graceful stop, collect capture + stdout.
    for stream in &mut session.streams {
        let entry = outputs.entry(stream.id).or_default();
        match stream.task.stop(session.grace) {
            Ok(out) => {
                let stdout_blob = stream.task.stdout_path().to_path_buf();
                entry.blobs.push(Blob {
                    name: "stdout".into(),
                    path: stdout_blob,
                });
                if let Some(capture) = &stream.capture_path {
                    if capture.exists() {
                        entry.blobs.push(Blob {
                            name: "capture".into(),
                            path: capture.clone(),
                        });
                    }
                }
                // A stream that died instantly with an error and produced
                // nothing is a tool failure.
                let produced_data = !out.stdout.is_empty()
                    || stream
                        .capture_path
                        .as_ref()
                        .map(|p| p.exists() && p.metadata().map(|m| m.len() > 0).unwrap_or(false))
                        .unwrap_or(false);
                if !produced_data && out.exit_code.is_some() && out.exit_code != Some(0) {
                    entry.failed = true;
                    entry.failure = Some(out.stderr.trim().to_string());
                }
            }
            Err(e) => {
                entry.failed = true;
                entry.failure = Some(e.to_string());
            }
        }
    }
    // Snapshot pairs: "after" snapshot.
    for id in snapshot_specs(&outputs) {
        if outputs.get(&id).map(|o| o.failed).unwrap_or(true) {
            continue;
        }
        let Some(spec) = specs.iter().find(|s| s.id == id) else {
            continue;
        };
        let command = spec.render(&spec.target, "");
        match session.exec.run(&CommandRequest::new(command)) {
            Ok(out) if out.success() => {
                let path = session.dir.join(id.to_string()).join("after.txt");
                std::fs::write(&path, &out.stdout)?;
                outputs.entry(id).or_default().blobs.push(Blob {
                    name: "after".into(),
                    path,
                });
            }
            Ok(out) => {
                let entry = outputs.entry(id).or_default();
                entry.failed = true;
                entry.failure = Some(out.stderr.trim().to_string());
            }
            Err(e) => {
                let entry = outputs.entry(id).or_default();
                entry.failed = true;
                entry.failure = Some(e.to_string());
            }
        }
    }
    // Directory harvest: list collected files.
    if let Some(harvest) = &session.qlog_dir {
        if let Some(entry) = outputs.get_mut(&CollectorId::Qlog) {
            let mut files: Vec<PathBuf> = walk_files(harvest);
            files.sort();
            for path in files {
                let name = path
                    .strip_prefix(harvest)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .into_owned();
                entry.blobs.push(Blob { name, path });
            }
        }
    }
    session.stopped = Some(outputs.clone());
    Ok(outputs)
}

fn walk_files(dir: &PathBuf) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.clone()];
    while let Some(d) = stack.pop() {
        if let Ok(entries) = std::fs::read_dir(&d) {
            for entry in entries.flatten() {
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push(path);
                }
            }
        }
    }
    out
}
