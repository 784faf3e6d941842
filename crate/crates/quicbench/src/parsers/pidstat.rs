//! Parser for `pidstat -u` periodic per-process CPU reports.

use serde::{Deserialize, Serialize};

/// One per-process CPU utilization observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuSample {
    pub timestamp: String,
    pub pid: u64,
    pub command: String,
    pub usr_pct: f64,
    pub sys_pct: f64,
    pub cpu_pct: f64,
}

/// Chronological per-process samples plus the trailing `Average:` rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CpuUtilSeries {
    pub samples: Vec<CpuSample>,
    pub averages: Vec<CpuSample>,
    /// Rows that did not match the column layout.
    pub skipped_rows: usize,
}

impl CpuUtilSeries {
    /// Mean of the %CPU column over all interval samples.
    pub fn mean_cpu(&self) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        Some(self.samples.iter().map(|s| s.cpu_pct).sum::<f64>() / self.samples.len() as f64)
    }
}

struct Columns {
    pid: usize,
    usr: usize,
    sys: usize,
    cpu: usize,
    command: usize,
}

fn parse_header(tokens: &[&str]) -> Option<Columns> {
    let find = |name: &str| tokens.iter().position(|t| *t == name);
    Some(Columns {
        pid: find("PID")?,
        usr: find("%usr")?,
        sys: find("%system")?,
        cpu: find("%CPU")?,
        command: find("Command")?,
    })
}

/// Parse pidstat text. The header row (the one containing `%CPU` and
/// `Command`) fixes the column layout; interval rows become samples in file
/// order, `Average:` rows are kept separately, malformed rows are skipped
/// and counted.
pub fn parse_pidstat(text: &str) -> CpuUtilSeries {
    let mut series = CpuUtilSeries::default();
    let mut columns: Option<Columns> = None;
    for raw in text.lines() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with("Linux ") {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.iter().any(|t| *t == "%CPU") && tokens.iter().any(|t| *t == "Command") {
            columns = parse_header(&tokens);
            continue;
        }
        let Some(cols) = &columns else {
            series.skipped_rows += 1;
            continue;
        };
        if tokens.len() <= cols.command {
            series.skipped_rows += 1;
            continue;
        }
        let parsed = (|| -> Option<CpuSample> {
            Some(CpuSample {
                timestamp: tokens[0].to_string(),
                pid: tokens[cols.pid].parse().ok()?,
                usr_pct: tokens[cols.usr].parse().ok()?,
                sys_pct: tokens[cols.sys].parse().ok()?,
                cpu_pct: tokens[cols.cpu].parse().ok()?,
                command: tokens[cols.command..].join(" "),
            })
        })();
        match parsed {
            Some(sample) if sample.usr_pct >= 0.0 && sample.sys_pct >= 0.0 => {
                if tokens[0] == "Average:" {
                    series.averages.push(sample);
                } else {
                    series.samples.push(sample);
                }
            }
            _ => series.skipped_rows += 1,
        }
    }
    series
}
