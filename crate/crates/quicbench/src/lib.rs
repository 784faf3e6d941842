//! Benchmarking harness for transport-protocol endpoint pairs.
//!
//! The harness expands a declarative experiment plan into concrete
//! measurements, drives each one through a four-phase workflow on a
//! client host and a server host, collects monitoring-tool output,
//! parses it into structured metrics, and aggregates the results into
//! goodput and bottleneck reports.

pub mod analysis;
pub mod cli;
pub mod collectors;
pub mod exec;
pub mod orchestrator;
pub mod parsers;
pub mod perfcat;
pub mod plan;
pub mod refendpoint;
pub mod tuning;
