//! Parser for `perf script` stack dumps.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// One profiling sample: the leaf frame plus the rest of the call chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerfSample {
    pub command: String,
    pub pid: u64,
    pub leaf_symbol: String,
    /// Caller frames, leaf-adjacent first.
    pub call_chain: Vec<String>,
    pub unknown_leaf: bool,
    /// Sample ended at EOF without a blank separator.
    pub truncated: bool,
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // "comm 1234 [003] 123.456: 250000 cycles:" with optional tid.
        Regex::new(r"^(?P<comm>.+?)\s+(?P<pid>\d+)(?:/\d+)?\s+\[\d+\]\s+[\d.]+:\s").unwrap()
    })
}

fn frame_symbol(line: &str) -> Option<String> {
    // "  ffffffff81234567 sendmsg+0x2a (/lib/modules/...)"
    let trimmed = line.trim();
    let mut parts = trimmed.splitn(2, char::is_whitespace);
    let addr = parts.next()?;
    if addr.is_empty() || !addr.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let rest = parts.next()?.trim();
    // Strip trailing "(dso)".
    let sym = match rest.rfind(" (") {
        Some(idx) => &rest[..idx],
        None => rest,
    };
    // Strip "+0x..." offset.
    let sym = match sym.rfind('+') {
        Some(idx) if sym[idx + 1..].starts_with("0x") => &sym[..idx],
        _ => sym,
    };
    let sym = sym.trim();
    if sym.is_empty() {
        None
    } else {
        Some(sym.to_string())
    }
}

/// Parse `perf script` output into one sample per stack. The first frame of
/// each stack is the leaf; `[unknown]` frames are kept but the sample is
/// marked. A stack cut off by end of input is kept and flagged truncated.
pub fn parse_perf_script(text: &str) -> Vec<PerfSample> {
    let mut samples: Vec<PerfSample> = Vec::new();
    let mut current: Option<PerfSample> = None;
    for line in text.lines() {
        if line.trim().is_empty() {
            if let Some(sample) = current.take() {
                samples.push(sample);
            }
            continue;
        }
        if !line.starts_with(|c: char| c.is_whitespace()) {
            if let Some(sample) = current.take() {
                // Header directly after frames: previous sample had no
                // separating blank line but is complete.
                samples.push(sample);
            }
            if let Some(caps) = header_re().captures(line) {
                current = Some(PerfSample {
                    command: caps["comm"].trim().to_string(),
                    pid: caps["pid"].parse().unwrap_or(0),
                    leaf_symbol: String::new(),
                    call_chain: Vec::new(),
                    unknown_leaf: false,
                    truncated: false,
                });
            }
            continue;
        }
        if let Some(sample) = current.as_mut() {
            if let Some(sym) = frame_symbol(line) {
                if sample.leaf_symbol.is_empty() {
                    sample.unknown_leaf = sym == "[unknown]";
                    sample.leaf_symbol = sym;
                } else {
                    sample.call_chain.push(sym);
                }
            }
        }
    }
    if let Some(mut sample) = current.take() {
        sample.truncated = true;
        samples.push(sample);
    }
    for sample in &mut samples {
        if sample.leaf_symbol.is_empty() {
            sample.leaf_symbol = "[unknown]".to_string();
            sample.unknown_leaf = true;
        }
    }
    samples
}
