//! Counter snapshots from `ethtool -S` and `netstat -su`, and their
//! before/after deltas.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CounterKind {
    Ethtool,
    Netstat,
}

impl fmt::Display for CounterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CounterKind::Ethtool => f.write_str("ethtool"),
            CounterKind::Netstat => f.write_str("netstat"),
        }
    }
}

/// Named counters from one snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterMap {
    pub kind: CounterKind,
    pub counters: BTreeMap<String, u64>,
}

/// Signed per-counter difference between two snapshots of the same kind.
/// Counters present in only one snapshot are listed in `asymmetric`
/// rather than defaulted to zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterDelta {
    pub kind: CounterKind,
    pub deltas: BTreeMap<String, i64>,
    pub asymmetric: Vec<String>,
}

/// Parse an `ethtool -S <if>` or `netstat -su` style snapshot.
///
/// ethtool output is flat `name: value` lines under a `NIC statistics:`
/// header. netstat output is sectioned (`Udp:`, `IcmpMsg:` ...); section
/// entries are either `name: value` or `<value> free text description`.
/// Sections are flattened with a dotted prefix and description words are
/// joined with dashes, e.g. `Udp.receive-buffer-errors`.
pub fn parse_counter_snapshot(text: &str, kind: CounterKind) -> Result<CounterMap, ParseError> {
    let mut counters = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        // Section or tool banner: a line ending in ':' with no value.
        if trimmed.ends_with(':') {
            let name = trimmed.trim_end_matches(':').trim();
            if kind == CounterKind::Netstat && !name.contains(' ') {
                section = Some(name.to_string());
            }
            // ethtool's "NIC statistics:" banner is skipped.
            continue;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            let value = value.trim();
            if let Ok(v) = value.parse::<u64>() {
                let key = match &section {
                    Some(s) => format!("{s}.{}", name.trim()),
                    None => name.trim().to_string(),
                };
                counters.insert(key, v);
                continue;
            }
        }
        // netstat style: "<count> description words".
        let mut parts = trimmed.splitn(2, char::is_whitespace);
        if let (Some(first), Some(rest)) = (parts.next(), parts.next()) {
            if let Ok(v) = first.parse::<u64>() {
                let slug = rest
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join("-")
                    .to_lowercase();
                let key = match &section {
                    Some(s) => format!("{s}.{slug}"),
                    None => slug,
                };
                counters.insert(key, v);
                continue;
            }
        }
        return Err(ParseError::BadLine {
            kind: "counter snapshot",
            line,
            content: trimmed.to_string(),
        });
    }
    Ok(CounterMap { kind, counters })
}

/// Difference (after - before) per shared counter. Kinds must match.
pub fn diff_counters(before: &CounterMap, after: &CounterMap) -> Result<CounterDelta, ParseError> {
    if before.kind != after.kind {
        return Err(ParseError::KindMismatch {
            before: before.kind.to_string(),
            after: after.kind.to_string(),
        });
    }
    let mut deltas = BTreeMap::new();
    let mut asymmetric = Vec::new();
    for (name, b) in &before.counters {
        match after.counters.get(name) {
            Some(a) => {
                deltas.insert(name.clone(), *a as i64 - *b as i64);
            }
            None => asymmetric.push(name.clone()),
        }
    }
    for name in after.counters.keys() {
        if !before.counters.contains_key(name) {
            asymmetric.push(name.clone());
        }
    }
    asymmetric.sort();
    Ok(CounterDelta {
        kind: before.kind,
        deltas,
        asymmetric,
    })
}

/// Render a counter map back to snapshot text (fixture generator; inverse
/// of `parse_counter_snapshot` for flat ethtool-style maps).
pub fn render_counter_snapshot(map: &CounterMap) -> String {
    let mut out = String::new();
    if map.kind == CounterKind::Ethtool {
        out.push_str("NIC statistics:\n");
    }
    for (name, value) in &map.counters {
        out.push_str(&format!("     {name}: {value}\n"));
    }
    out
}
