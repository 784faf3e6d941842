//! Goodput, loss and summary statistics over parsed run metrics, plus the
//! flat results table that downstream reports are built from.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::TransferVerdict;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("loss rate undefined: no packets dropped or delivered")]
    LossRateUndefined,
    #[error("cannot summarize an empty sample set")]
    EmptySamples,
    #[error("duplicate measurement id `{0}` in results table")]
    DuplicateId(String),
    #[error("knob `{0}` not present in any table row")]
    UnknownKnob(String),
    #[error("table serialization failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("table io failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Goodput in Mbit/s (SI): payload bits over transfer duration.
pub fn goodput(bytes: u64, duration_secs: f64) -> Result<f64, AnalysisError> {
    if duration_secs <= 0.0 {
        return Err(AnalysisError::NonPositiveDuration(duration_secs));
    }
    Ok(bytes as f64 * 8.0 / duration_secs / 1e6)
}

/// Fraction of packets dropped: dropped / (dropped + delivered).
///
/// Undefined when both counts are zero; callers must report the value as
/// absent rather than zero in that case.
pub fn loss_rate(dropped: u64, delivered: u64) -> Result<f64, AnalysisError> {
    if dropped == 0 && delivered == 0 {
        return Err(AnalysisError::LossRateUndefined);
    }
    Ok(dropped as f64 / (dropped + delivered) as f64)
}

/// Boxplot-style summary of one metric across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation (n-1 denominator); 0 for n = 1.
    pub stddev: f64,
}

/// Quantile by linear interpolation between closest ranks ("type 7").
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - h.floor()) * (sorted[hi] - sorted[lo])
}

/// Summarize a non-empty sample set. Quartiles use linear interpolation
/// between closest ranks; stddev is the sample (n-1) form.
pub fn summarize(values: &[f64]) -> Result<StatsSummary, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptySamples);
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let stddev = if n >= 2 {
        let ss = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(StatsSummary {
        n,
        mean,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: sorted[n - 1],
        stddev,
    })
}

/// One row of the flat results table: everything needed to reproduce the
/// derived metrics of a single measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub client: String,
    pub server: String,
    pub knob_name: Option<String>,
    pub knob_value: Option<String>,
    pub repetition: u32,
    pub transfer_bytes: u64,
    pub duration_secs: Option<f64>,
    pub goodput_mbps: Option<f64>,
    pub verdict: TransferVerdict,
    pub rcvbuf_drops: Option<i64>,
    pub ring_drops: Option<i64>,
    pub ack_frames_sent: Option<u64>,
    pub packets_sent: Option<u64>,
    pub packets_received: Option<u64>,
    pub client_cpu_mean: Option<f64>,
    pub server_cpu_mean: Option<f64>,
    pub provenance_digest: Option<String>,
}

/// Parsed metrics attached to one run before table assembly.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub rcvbuf_drops: Option<i64>,
    pub ring_drops: Option<i64>,
    pub ack_frames_sent: Option<u64>,
    pub packets_sent: Option<u64>,
    pub packets_received: Option<u64>,
    pub client_cpu_mean: Option<f64>,
    pub server_cpu_mean: Option<f64>,
}

/// Ordered collection of run records; one row per measurement, ids unique.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<RunRecord>,
}

impl ResultsTable {
    pub fn from_rows(rows: Vec<RunRecord>) -> Result<Self, AnalysisError> {
        let mut seen = std::collections::HashSet::new();
        for row in &rows {
            if !seen.insert(row.id.clone()) {
                return Err(AnalysisError::DuplicateId(row.id.clone()));
            }
        }
        Ok(ResultsTable { rows })
    }

    /// Render as a comma-separated table with a header row.
    pub fn render_csv<W: Write>(&self, out: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn parse_csv(data: &str) -> Result<Self, AnalysisError> {
        let mut r = csv::Reader::from_reader(data.as_bytes());
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec?);
        }
        Self::from_rows(rows)
    }
}

/// Assemble run records into a table, preserving matrix order. Failed runs
/// are retained with their verdict and empty metrics.
pub fn build_results_table(
    runs: Vec<(crate::plan::MeasurementSpec, crate::orchestrator::RunSummary, RunMetrics)>,
) -> Result<ResultsTable, AnalysisError> {
    let mut rows = Vec::with_capacity(runs.len());
    for (spec, summary, metrics) in runs {
        let ok = summary.verdict == TransferVerdict::Ok;
        let duration = if ok { summary.duration_secs } else { None };
        let gp = match duration {
            Some(d) if d > 0.0 => Some(goodput(spec.transfer_size, d)?),
            _ => None,
        };
        rows.push(RunRecord {
            id: spec.id.clone(),
            client: spec.client.name.clone(),
            server: spec.server.name.clone(),
            knob_name: spec.knob.as_ref().map(|k| k.0.to_string()),
            knob_value: spec.knob.as_ref().map(|k| k.1.clone()),
            repetition: spec.repetition_index,
            transfer_bytes: spec.transfer_size,
            duration_secs: duration,
            goodput_mbps: gp,
            verdict: summary.verdict,
            rcvbuf_drops: metrics.rcvbuf_drops,
            ring_drops: metrics.ring_drops,
            ack_frames_sent: metrics.ack_frames_sent,
            packets_sent: metrics.packets_sent,
            packets_received: metrics.packets_received,
            client_cpu_mean: metrics.client_cpu_mean,
            server_cpu_mean: metrics.server_cpu_mean,
            provenance_digest: summary.provenance_digest,
        });
    }
    ResultsTable::from_rows(rows)
}

/// Per (pair, knob value) aggregate for a parameter sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepGroup {
    pub client: String,
    pub server: String,
    pub knob_value: String,
    pub goodput: Option<StatsSummary>,
    pub mean_rcvbuf_drops: Option<f64>,
    pub mean_ack_frames: Option<f64>,
    pub ok_runs: usize,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub knob: String,
    pub groups: Vec<SweepGroup>,
}

fn knob_sort_key(v: &str) -> (f64, String) {
    match v.parse::<f64>() {
        Ok(n) => (n, String::new()),
        Err(_) => (f64::INFINITY, v.to_string()),
    }
}

/// Group rows by (pair, knob value) and summarize goodput per group.
/// Only rows with an ok verdict contribute to the goodput statistics;
/// failures are counted and reported alongside.
pub fn sweep_report(table: &ResultsTable, knob: &str) -> Result<SweepReport, AnalysisError> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RunRecord>> = BTreeMap::new();
    let mut found = false;
    for row in &table.rows {
        if row.knob_name.as_deref() == Some(knob) {
            found = true;
            let key = (
                row.client.clone(),
                row.server.clone(),
                row.knob_value.clone().unwrap_or_default(),
            );
            groups.entry(key).or_default().push(row);
        }
    }
    if !found {
        return Err(AnalysisError::UnknownKnob(knob.to_string()));
    }
    let mut out: Vec<SweepGroup> = Vec::new();
    for ((client, server, knob_value), rows) in groups {
        let ok_rows: Vec<&&RunRecord> = rows
            .iter()
            .filter(|r| r.verdict == TransferVerdict::Ok)
            .collect();
        let goodputs: Vec<f64> = ok_rows.iter().filter_map(|r| r.goodput_mbps).collect();
        let drops: Vec<f64> = ok_rows
            .iter()
            .filter_map(|r| r.rcvbuf_drops.map(|d| d as f64))
            .collect();
        let acks: Vec<f64> = ok_rows
            .iter()
            .filter_map(|r| r.ack_frames_sent.map(|a| a as f64))
            .collect();
        out.push(SweepGroup {
            client,
            server,
            knob_value,
            goodput: if goodputs.is_empty() {
                None
            } else {
                Some(summarize(&goodputs)?)
            },
            mean_rcvbuf_drops: mean_of(&drops),
            mean_ack_frames: mean_of(&acks),
            ok_runs: ok_rows.len(),
            failed_runs: rows.len() - ok_rows.len(),
        });
    }
    out.sort_by(|a, b| {
        (a.client.clone(), a.server.clone())
            .cmp(&(b.client.clone(), b.server.clone()))
            .then(
                knob_sort_key(&a.knob_value)
                    .partial_cmp(&knob_sort_key(&b.knob_value))
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    Ok(SweepReport {
        knob: knob.to_string(),
        groups: out,
    })
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Per client-server pair aggregate for the baseline matrix.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixCell {
    pub client: String,
    pub server: String,
    pub goodput: Option<StatsSummary>,
    pub ok_runs: usize,
    pub failed_runs: usize,
}

/// Aggregate goodput per client-server pair, matrix order.
pub fn matrix_report(table: &ResultsTable) -> Result<Vec<MatrixCell>, AnalysisError> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for row in &table.rows {
        groups
            .entry((row.client.clone(), row.server.clone()))
            .or_default()
            .push(row);
    }
    let mut cells = Vec::new();
    for ((client, server), rows) in groups {
        let goodputs: Vec<f64> = rows
            .iter()
            .filter(|r| r.verdict == TransferVerdict::Ok)
            .filter_map(|r| r.goodput_mbps)
            .collect();
        let ok = rows
            .iter()
            .filter(|r| r.verdict == TransferVerdict::Ok)
            .count();
        cells.push(MatrixCell {
            client,
            server,
            goodput: if goodputs.is_empty() {
                None
            } else {
                Some(summarize(&goodputs)?)
            },
            ok_runs: ok,
            failed_runs: rows.len() - ok,
        });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goodput_basic() {
        assert_eq!(goodput(8_000_000_000, 20.0).unwrap(), 3200.0);
        assert_eq!(goodput(0, 5.0).unwrap(), 0.0);
        assert!(goodput(1, 0.0).is_err());
        assert!(goodput(1, -1.0).is_err());
    }

    #[test]
    fn goodput_inverse_matches_reported_rate() {
        // 8e9 bytes at 3250 Mbit/s takes 19.69 s (within 0.01 s).
        let duration: f64 = 8e9 * 8.0 / (3250.0 * 1e6);
        assert!((duration - 19.69).abs() < 0.01);
        let gp = goodput(8_000_000_000, 19.69).unwrap();
        assert!((gp - 3250.0).abs() / 3250.0 < 0.005);
    }

    #[test]
    fn loss_rate_cases() {
        assert!((loss_rate(11_400, 5_688_600).unwrap() - 0.002).abs() < 1e-12);
        assert!((loss_rate(7_000, 6_993_000).unwrap() - 0.001).abs() < 1e-12);
        assert_eq!(loss_rate(0, 1_000_000).unwrap(), 0.0);
        assert_eq!(loss_rate(5, 0).unwrap(), 1.0);
        assert!(loss_rate(0, 0).is_err());
    }

    #[test]
    fn summarize_small() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 5.0);
    }

    #[test]
    fn summarize_singleton() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.median, 5.0);
        assert_eq!(s.q1, 5.0);
        assert_eq!(s.q3, 5.0);
        assert_eq!(s.stddev, 0.0);
    }

    #[test]
    fn summarize_empty_is_error() {
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![RunRecord {
            id: "m0".into(),
            client: "lsquic".into(),
            server: "quiche".into(),
            knob_name: Some("udp_rcvbuf_multiple".into()),
            knob_value: Some("16".into()),
            repetition: 0,
            transfer_bytes: 100,
            duration_secs: Some(0.125),
            goodput_mbps: Some(goodput(100, 0.125).unwrap()),
            verdict: TransferVerdict::Ok,
            rcvbuf_drops: Some(7),
            ring_drops: Some(0),
            ack_frames_sent: Some(42),
            packets_sent: Some(100),
            packets_received: Some(99),
            client_cpu_mean: Some(82.0),
            server_cpu_mean: None,
            provenance_digest: Some("abc".into()),
        }];
        let table = ResultsTable::from_rows(rows).unwrap();
        let mut buf = Vec::new();
        table.render_csv(&mut buf).unwrap();
        let parsed = ResultsTable::parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed, table);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let row = RunRecord {
            id: "dup".into(),
            client: "a".into(),
            server: "b".into(),
            knob_name: None,
            knob_value: None,
            repetition: 0,
            transfer_bytes: 1,
            duration_secs: None,
            goodput_mbps: None,
            verdict: TransferVerdict::Missing,
            rcvbuf_drops: None,
            ring_drops: None,
            ack_frames_sent: None,
            packets_sent: None,
            packets_received: None,
            client_cpu_mean: None,
            server_cpu_mean: None,
            provenance_digest: None,
        };
        assert!(ResultsTable::from_rows(vec![row.clone(), row]).is_err());
    }

    #[test]
    fn sweep_plateau_detected() {
        // Goodput rises then plateaus at 16x and beyond.
        let mut rows = Vec::new();
        for (value, gp) in [("1", 2990.0), ("4", 3100.0), ("16", 3250.0), ("32", 3250.0)] {
            for rep in 0..3u32 {
                rows.push(RunRecord {
                    id: format!("m-{value}-{rep}"),
                    client: "lsquic".into(),
                    server: "lsquic".into(),
                    knob_name: Some("udp_rcvbuf_multiple".into()),
                    knob_value: Some(value.into()),
                    repetition: rep,
                    transfer_bytes: 8_000_000_000,
                    duration_secs: Some(8e9 * 8.0 / (gp * 1e6)),
                    goodput_mbps: Some(gp),
                    verdict: TransferVerdict::Ok,
                    rcvbuf_drops: None,
                    ring_drops: None,
                    ack_frames_sent: None,
                    packets_sent: None,
                    packets_received: None,
                    client_cpu_mean: None,
                    server_cpu_mean: None,
                    provenance_digest: None,
                });
            }
        }
        let table = ResultsTable::from_rows(rows).unwrap();
        let report = sweep_report(&table, "udp_rcvbuf_multiple").unwrap();
        assert_eq!(report.groups.len(), 4);
        let values: Vec<&str> = report.groups.iter().map(|g| g.knob_value.as_str()).collect();
        assert_eq!(values, ["1", "4", "16", "32"]);
        let g16 = report.groups[2].goodput.as_ref().unwrap().mean;
        let g32 = report.groups[3].goodput.as_ref().unwrap().mean;
        assert!((g16 - g32).abs() < 1e-9);
    }

    #[test]
    fn sweep_unknown_knob() {
        let table = ResultsTable::default();
        assert!(matches!(
            sweep_report(&table, "nope"),
            Err(AnalysisError::UnknownKnob(_))
        ));
    }
}
