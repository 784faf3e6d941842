//! Pure parsers for the raw output of the monitoring tool suite.
//!
//! Every parser is a total function over arbitrary input: it returns a
//! structured value or a structured error, never panics.

pub mod counters;
pub mod pcap;
pub mod perf;
pub mod pidstat;
pub mod qlog;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("unrecognized {kind} format at line {line}: `{content}`")]
    BadLine {
        kind: &'static str,
        line: usize,
        content: String,
    },
    #[error("counter snapshot source kinds differ: {before} vs {after}")]
    KindMismatch { before: String, after: String },
    #[error("malformed pcap header: {0}")]
    BadPcapHeader(String),
    #[error("qlog format error: {0}")]
    BadQlog(String),
}
