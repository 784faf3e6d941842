//! Declarative experiment plans: loading, validation, matrix expansion and
//! provenance fingerprinting.
//!
//! A plan is a single TOML file declaring the implementations under test,
//! the client/server pairs, repetitions, an optional parameter sweep and
//! host tuning. See the README for the full schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::collectors::CollectorId;
use crate::tuning::{HostTuning, OffloadProfile, DEFAULT_RCVBUF_BYTES};

/// Paper-scale defaults: an 8 GB transfer repeated 50 times.
pub const DEFAULT_TRANSFER_SIZE: u64 = 8_000_000_000;
pub const DEFAULT_REPETITIONS: u32 = 50;
pub const DEFAULT_TIMEOUT_SECS: u64 = 120;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read plan file: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan schema violation: {0}")]
    Schema(#[from] toml::de::Error),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("pair ({client}, {server}) references undeclared implementation `{missing}`")]
    DanglingPair {
        client: String,
        server: String,
        missing: String,
    },
    #[error("version probe missing for implementation(s): {}", .0.join(", "))]
    MissingVersions(Vec<String>),
}

fn invalid(field: &str, message: impl Into<String>) -> PlanError {
    PlanError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleSupport {
    Client,
    Server,
    Both,
}

impl RoleSupport {
    pub fn supports_client(self) -> bool {
        matches!(self, RoleSupport::Client | RoleSupport::Both)
    }
    pub fn supports_server(self) -> bool {
        matches!(self, RoleSupport::Server | RoleSupport::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CipherScenario {
    #[default]
    Default,
    ForceAes,
    ForceChacha20,
}

/// One endpoint implementation and how to drive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplementationSpec {
    pub name: String,
    pub role_support: RoleSupport,
    #[serde(default)]
    pub setup_command: Option<String>,
    #[serde(default)]
    pub run_client_command: Option<String>,
    #[serde(default)]
    pub run_server_command: Option<String>,
    #[serde(default)]
    pub version_command: Option<String>,
    #[serde(default)]
    pub congestion_control: Option<String>,
    #[serde(default)]
    pub cipher_scenario: Option<CipherScenario>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKnob {
    UdpRcvbufMultiple,
    OffloadProfile,
    CipherScenario,
}

impl fmt::Display for SweepKnob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepKnob::UdpRcvbufMultiple => "udp_rcvbuf_multiple",
            SweepKnob::OffloadProfile => "offload_profile",
            SweepKnob::CipherScenario => "cipher_scenario",
        };
        f.write_str(s)
    }
}

/// A knob value as written in the plan; numbers are normalized to a
/// canonical decimal rendering before hashing or comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawKnobValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl RawKnobValue {
    pub fn normalized(&self) -> String {
        match self {
            RawKnobValue::Int(v) => v.to_string(),
            RawKnobValue::Float(v) => format!("{v}"),
            RawKnobValue::Text(s) => s.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSweep {
    pub knob: SweepKnob,
    pub values: Vec<RawKnobValue>,
}

/// Client/server pairing: explicit pairs or the full role-compatible cross
/// product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pairing {
    AllPairs(String),
    Explicit(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub description: String,
    pub implementations: Vec<ImplementationSpec>,
    pub pairs: Pairing,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_transfer_size")]
    pub transfer_size: u64,
    #[serde(default)]
    pub sweep: Option<ParameterSweep>,
    #[serde(default)]
    pub host_tuning: HostTuning,
    #[serde(default)]
    pub collectors: BTreeSet<CollectorId>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}
fn default_transfer_size() -> u64 {
    DEFAULT_TRANSFER_SIZE
}
fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<Self, PlanError> {
        let plan: ExperimentPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.repetitions < 1 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        if self.transfer_size < 1 {
            return Err(invalid("transfer_size", "must be at least 1 byte"));
        }
        let mut names = BTreeSet::new();
        for imp in &self.implementations {
            if imp.name.is_empty() {
                return Err(invalid("implementations.name", "must be non-empty"));
            }
            if !names.insert(imp.name.clone()) {
                return Err(invalid(
                    "implementations.name",
                    format!("duplicate implementation `{}`", imp.name),
                ));
            }
            if imp.role_support.supports_client() && imp.run_client_command.is_none() {
                return Err(invalid(
                    "implementations.run_client_command",
                    format!("`{}` supports the client role but has no run command", imp.name),
                ));
            }
            if imp.role_support.supports_server() && imp.run_server_command.is_none() {
                return Err(invalid(
                    "implementations.run_server_command",
                    format!("`{}` supports the server role but has no run command", imp.name),
                ));
            }
        }
        match &self.pairs {
            Pairing::AllPairs(token) => {
                if token != "all-pairs" {
                    return Err(invalid(
                        "pairs",
                        format!("expected \"all-pairs\" or a list of pairs, got `{token}`"),
                    ));
                }
            }
            Pairing::Explicit(pairs) => {
                for (client, server) in pairs {
                    for name in [client, server] {
                        if !names.contains(name) {
                            return Err(PlanError::DanglingPair {
                                client: client.clone(),
                                server: server.clone(),
                                missing: name.clone(),
                            });
                        }
                    }
                    let c = self.implementation(client).unwrap();
                    let s = self.implementation(server).unwrap();
                    if !c.role_support.supports_client() {
                        return Err(invalid(
                            "pairs",
                            format!("`{client}` does not support the client role"),
                        ));
                    }
                    if !s.role_support.supports_server() {
                        return Err(invalid(
                            "pairs",
                            format!("`{server}` does not support the server role"),
                        ));
                    }
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep.values", "must be non-empty"));
            }
            let mut seen = BTreeSet::new();
            for value in &sweep.values {
                let norm = value.normalized();
                if !seen.insert(norm.clone()) {
                    return Err(invalid("sweep.values", format!("duplicate value `{norm}`")));
                }
                match sweep.knob {
                    SweepKnob::UdpRcvbufMultiple => {
                        let parsed: f64 = norm.parse().map_err(|_| {
                            invalid("sweep.values", format!("`{norm}` is not a number"))
                        })?;
                        if parsed <= 0.0 {
                            return Err(invalid(
                                "sweep.values",
                                format!("buffer multiple `{norm}` must be positive"),
                            ));
                        }
                    }
                    SweepKnob::OffloadProfile => {
                        OffloadProfile::parse(&norm)
                            .map_err(|e| invalid("sweep.values", e))?;
                    }
                    SweepKnob::CipherScenario => {
                        if !matches!(norm.as_str(), "default" | "force-aes" | "force-chacha20") {
                            return Err(invalid(
                                "sweep.values",
                                format!("unknown cipher scenario `{norm}`"),
                            ));
                        }
                    }
                }
            }
        }
        self.host_tuning
            .validate()
            .map_err(|e| invalid("host_tuning", e))?;
        Ok(())
    }

    pub fn implementation(&self, name: &str) -> Option<&ImplementationSpec> {
        self.implementations.iter().find(|i| i.name == name)
    }

    /// The concrete (client, server) pairs, declaration order; "all-pairs"
    /// expands only over role-compatible implementations.
    pub fn resolved_pairs(&self) -> Vec<(String, String)> {
        match &self.pairs {
            Pairing::Explicit(pairs) => pairs.clone(),
            Pairing::AllPairs(_) => {
                let clients: Vec<&ImplementationSpec> = self
                    .implementations
                    .iter()
                    .filter(|i| i.role_support.supports_client())
                    .collect();
                let servers: Vec<&ImplementationSpec> = self
                    .implementations
                    .iter()
                    .filter(|i| i.role_support.supports_server())
                    .collect();
                let mut out = Vec::new();
                for c in &clients {
                    for s in &servers {
                        out.push((c.name.clone(), s.name.clone()));
                    }
                }
                out
            }
        }
    }

    /// Canonical serialization used for fingerprinting: struct field order
    /// is fixed by the type, numbers are normalized, whitespace and key
    /// order of the source file cannot leak through.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("plan is always serializable")
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        hex::encode(hasher.finalize())
    }
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, PlanError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentPlan::parse(&text)
}

/// One fully concrete measurement: no templates or sweep placeholders left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub id: String,
    pub client: ImplementationSpec,
    pub server: ImplementationSpec,
    pub repetition_index: u32,
    pub knob: Option<(SweepKnob, String)>,
    pub transfer_size: u64,
    /// Name of the served (and downloaded) file.
    pub file_name: String,
    pub timeout_secs: u64,
    pub host_tuning: HostTuning,
    pub collectors: BTreeSet<CollectorId>,
}

fn resolve_tuning(
    base: &HostTuning,
    knob: Option<&(SweepKnob, String)>,
) -> Result<HostTuning, PlanError> {
    let mut tuning = base.clone();
    if let Some((knob, value)) = knob {
        match knob {
            SweepKnob::UdpRcvbufMultiple => {
                let multiple: f64 = value
                    .parse()
                    .map_err(|_| invalid("sweep.values", format!("`{value}` is not a number")))?;
                tuning.udp_rcvbuf_bytes =
                    Some((multiple * DEFAULT_RCVBUF_BYTES as f64).round() as u64);
            }
            SweepKnob::OffloadProfile => {
                tuning.offload_profile =
                    Some(OffloadProfile::parse(value).map_err(|e| invalid("sweep.values", e))?);
            }
            SweepKnob::CipherScenario => {}
        }
    }
    Ok(tuning)
}

fn resolve_cipher(imp: &ImplementationSpec, knob: Option<&(SweepKnob, String)>) -> ImplementationSpec {
    let mut imp = imp.clone();
    if let Some((SweepKnob::CipherScenario, value)) = knob {
        imp.cipher_scenario = Some(match value.as_str() {
            "force-aes" => CipherScenario::ForceAes,
            "force-chacha20" => CipherScenario::ForceChacha20,
            _ => CipherScenario::Default,
        });
    }
    imp
}

/// Expand a validated plan into the full measurement list: pair-major, then
/// knob value, then repetition index. |result| = pairs x sweep x reps.
pub fn expand_matrix(plan: &ExperimentPlan) -> Result<Vec<MeasurementSpec>, PlanError> {
    let pairs = plan.resolved_pairs();
    let knob_values: Vec<Option<(SweepKnob, String)>> = match &plan.sweep {
        Some(sweep) => sweep
            .values
            .iter()
            .map(|v| Some((sweep.knob, v.normalized())))
            .collect(),
        None => vec![None],
    };
    let mut specs = Vec::with_capacity(pairs.len() * knob_values.len() * plan.repetitions as usize);
    for (client_name, server_name) in &pairs {
        let client = plan
            .implementation(client_name)
            .ok_or_else(|| PlanError::DanglingPair {
                client: client_name.clone(),
                server: server_name.clone(),
                missing: client_name.clone(),
            })?;
        let server = plan
            .implementation(server_name)
            .ok_or_else(|| PlanError::DanglingPair {
                client: client_name.clone(),
                server: server_name.clone(),
                missing: server_name.clone(),
            })?;
        for knob in &knob_values {
            let tuning = resolve_tuning(&plan.host_tuning, knob.as_ref())?;
            for rep in 0..plan.repetitions {
                let id = match knob {
                    Some((k, v)) => format!("{client_name}_{server_name}_{k}_{v}_{rep:03}"),
                    None => format!("{client_name}_{server_name}_{rep:03}"),
                };
                specs.push(MeasurementSpec {
                    id,
                    client: resolve_cipher(client, knob.as_ref()),
                    server: resolve_cipher(server, knob.as_ref()),
                    repetition_index: rep,
                    knob: knob.clone(),
                    transfer_size: plan.transfer_size,
                    file_name: format!("payload_{}.bin", plan.transfer_size),
                    timeout_secs: plan.timeout_secs,
                    host_tuning: tuning.clone(),
                    collectors: plan.collectors.clone(),
                });
            }
        }
    }
    Ok(specs)
}

/// Hardware identity of one measurement host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareDescriptor {
    pub cpu_model: String,
    #[serde(default)]
    pub cpu_year: Option<u32>,
    #[serde(default)]
    pub max_frequency_ghz: Option<f64>,
    #[serde(default)]
    pub memory_bytes: Option<u64>,
    #[serde(default)]
    pub nic_model: Option<String>,
}

/// Environment probe results for one host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostProbe {
    pub host: String,
    pub hardware: HardwareDescriptor,
    pub os_release: String,
    /// Output of each implementation's version_command on this host;
    /// `None` marks a failed probe.
    pub implementation_versions: BTreeMap<String, Option<String>>,
}

/// Reproducibility fingerprint binding results to the exact plan,
/// implementation versions and hardware that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub plan_digest: String,
    pub implementation_versions: BTreeMap<String, String>,
    pub framework_version: String,
    pub hosts: Vec<HostProbe>,
    pub timestamp: chrono::DateTime<chrono::Utc>,
    /// Implementations whose version probe failed; non-empty marks the
    /// record incomplete.
    pub incomplete: Vec<String>,
}

/// Build the provenance record for a plan from per-host probe results.
/// Implementations with no successful version probe on any host are named
/// in `incomplete`.
pub fn fingerprint(plan: &ExperimentPlan, probes: &[HostProbe]) -> ProvenanceRecord {
    let mut versions = BTreeMap::new();
    let mut incomplete = Vec::new();
    for imp in &plan.implementations {
        let version = probes
            .iter()
            .filter_map(|p| p.implementation_versions.get(&imp.name))
            .filter_map(|v| v.clone())
            .next();
        match version {
            Some(v) => {
                versions.insert(imp.name.clone(), v);
            }
            None => incomplete.push(imp.name.clone()),
        }
    }
    ProvenanceRecord {
        plan_digest: plan.digest(),
        implementation_versions: versions,
        framework_version: env!("CARGO_PKG_VERSION").to_string(),
        hosts: probes.to_vec(),
        timestamp: chrono::Utc::now(),
        incomplete,
    }
}
