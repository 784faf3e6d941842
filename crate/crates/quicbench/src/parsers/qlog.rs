//! ACK and packet counting from qlog event traces.
//!
//! Accepts both framings produced by endpoints: a single JSON document with
//! `traces[].events[]`, and newline-delimited JSON events (optionally
//! prefixed with the 0x1e record separator). Events may be objects with a
//! `name` field or draft-style arrays `[time, category, event, data]`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ParseError;

/// Packet and ACK-frame counts for one endpoint's qlog output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AckStats {
    /// packet_sent events carrying at least one ack frame.
    pub ack_frames_sent: u64,
    pub packets_sent: u64,
    pub packets_received: u64,
    /// Events that could not be interpreted.
    pub skipped_events: u64,
}

fn frames_contain_ack(data: &Value) -> bool {
    data.get("frames")
        .and_then(Value::as_array)
        .map(|frames| {
            frames.iter().any(|f| {
                f.get("frame_type").and_then(Value::as_str) == Some("ack")
            })
        })
        .unwrap_or(false)
}

enum EventKind {
    Sent { with_ack: bool },
    Received,
    Other,
    Unparseable,
}

fn classify_event(event: &Value) -> EventKind {
    let (name, data) = match event {
        Value::Object(obj) => {
            let name = obj.get("name").and_then(Value::as_str);
            match name {
                Some(n) => (n.to_string(), obj.get("data")),
                None => return EventKind::Unparseable,
            }
        }
        Value::Array(fields) => {
            // [time, category, event_type, data]
            if fields.len() < 4 {
                return EventKind::Unparseable;
            }
            match (fields[1].as_str(), fields[2].as_str()) {
                (Some(cat), Some(ev)) => (format!("{cat}:{ev}"), Some(&fields[3])),
                _ => return EventKind::Unparseable,
            }
        }
        _ => return EventKind::Unparseable,
    };
    let short = name.rsplit(':').next().unwrap_or(&name);
    match short {
        "packet_sent" => EventKind::Sent {
            with_ack: data.map(frames_contain_ack).unwrap_or(false),
        },
        "packet_received" => EventKind::Received,
        _ => EventKind::Other,
    }
}

fn count_event(event: &Value, stats: &mut AckStats) {
    match classify_event(event) {
        EventKind::Sent { with_ack } => {
            stats.packets_sent += 1;
            if with_ack {
                stats.ack_frames_sent += 1;
            }
        }
        EventKind::Received => stats.packets_received += 1,
        EventKind::Other => {}
        EventKind::Unparseable => stats.skipped_events += 1,
    }
}

fn count_document(doc: &Value, stats: &mut AckStats) -> Result<(), ParseError> {
    let traces = doc
        .get("traces")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::BadQlog("document has no traces array".into()))?;
    for trace in traces {
        if let Some(events) = trace.get("events").and_then(Value::as_array) {
            for event in events {
                count_event(event, stats);
            }
        }
    }
    Ok(())
}

/// Count ACK-bearing sent packets and packet events in one qlog blob.
pub fn count_acks_qlog(text: &str) -> Result<AckStats, ParseError> {
    let mut stats = AckStats::default();
    let trimmed = text.trim_start_matches('\u{1e}').trim();
    if trimmed.is_empty() {
        return Ok(stats);
    }
    // Whole-file JSON first; otherwise newline-delimited events.
    if let Ok(doc) = serde_json::from_str::<Value>(trimmed) {
        if doc.get("traces").is_some() {
            count_document(&doc, &mut stats)?;
            return Ok(stats);
        }
        count_event(&doc, &mut stats);
        return Ok(stats);
    }
    let mut parsed_any = false;
    for line in text.lines() {
        let line = line.trim_start_matches('\u{1e}').trim();
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(line) {
            Ok(event) => {
                parsed_any = true;
                // A leading file-header record carries qlog_format/title,
                // not an event.
                if event.get("qlog_format").is_some() || event.get("qlog_version").is_some() {
                    continue;
                }
                count_event(&event, &mut stats);
            }
            Err(_) => stats.skipped_events += 1,
        }
    }
    if !parsed_any && stats.skipped_events > 0 {
        return Err(ParseError::BadQlog(
            "input is neither a qlog document nor event lines".into(),
        ));
    }
    Ok(stats)
}

/// Merge counts across several blobs of one endpoint.
pub fn count_acks_qlog_all<'a, I>(blobs: I) -> Result<AckStats, ParseError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut total = AckStats::default();
    for blob in blobs {
        let s = count_acks_qlog(blob)?;
        total.ack_frames_sent += s.ack_frames_sent;
        total.packets_sent += s.packets_sent;
        total.packets_received += s.packets_received;
        total.skipped_events += s.skipped_events;
    }
    Ok(total)
}

#[cfg(test)]
pub(crate) fn sent_event(with_ack: bool) -> String {
    let frames = if with_ack {
        r#"[{"frame_type":"ack","acked_ranges":[[0,10]]}]"#
    } else {
        r#"[{"frame_type":"stream","stream_id":0}]"#
    };
    format!(
        r#"{{"time":1.0,"name":"transport:packet_sent","data":{{"header":{{"packet_number":1}},"frames":{frames}}}}}"#
    )
}
