//! OS-level host tuning around a measurement: socket buffer maxima and NIC
//! offload flags, applied before a run and restored afterwards.
//!
//! The mechanism is configuration, not code: every change goes through the
//! command templates in [`TuningCommands`], so a deployment can swap in a
//! different sysctl path or a wrapper with elevated privileges, and tests
//! can point the templates at a fake settings store.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{CommandRequest, ExecError, Executor};

/// Default Linux UDP receive buffer: 208 KiB.
pub const DEFAULT_RCVBUF_BYTES: u64 = 212_992;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("[{host}] `{command}` failed: {stderr}")]
    CommandFailed {
        host: String,
        command: String,
        stderr: String,
    },
    #[error("[{host}] interface or feature `{setting}` not reported by offload probe")]
    UnknownSetting { host: String, setting: String },
    #[error("[{host}] read-back mismatch for {setting}: requested `{requested}`, host reports `{actual}`")]
    ReadbackMismatch {
        host: String,
        setting: String,
        requested: String,
        actual: String,
    },
    #[error("[{host}] restore failed for: {}", .settings.join(", "))]
    PartialRestore { host: String, settings: Vec<String> },
}

/// Per-host tuning requested by a measurement. Everything is optional; an
/// empty tuning issues no commands at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostTuning {
    pub udp_rcvbuf_bytes: Option<u64>,
    pub udp_sndbuf_bytes: Option<u64>,
    pub offload_profile: Option<OffloadProfile>,
    #[serde(default = "default_interface")]
    pub interface_name: String,
}

impl Default for HostTuning {
    fn default() -> Self {
        HostTuning {
            udp_rcvbuf_bytes: None,
            udp_sndbuf_bytes: None,
            offload_profile: None,
            interface_name: default_interface(),
        }
    }
}

fn default_interface() -> String {
    "lo".to_string()
}

impl HostTuning {
    pub fn is_empty(&self) -> bool {
        self.udp_rcvbuf_bytes.is_none()
            && self.udp_sndbuf_bytes.is_none()
            && self.offload_profile.is_none()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.udp_rcvbuf_bytes == Some(0) {
            return Err("udp_rcvbuf_bytes must be positive".into());
        }
        if self.udp_sndbuf_bytes == Some(0) {
            return Err("udp_sndbuf_bytes must be positive".into());
        }
        Ok(())
    }
}

/// Desired on/off state per offload; unset flags are left alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffloadProfile {
    pub gso: Option<bool>,
    pub gro: Option<bool>,
    pub tso: Option<bool>,
}

impl OffloadProfile {
    /// Parse a sweep value like `gso+gro`, `all-on`, `all-off`; named
    /// features are switched on and the remaining two off.
    pub fn parse(value: &str) -> Result<Self, String> {
        match value {
            "all-on" => {
                return Ok(OffloadProfile {
                    gso: Some(true),
                    gro: Some(true),
                    tso: Some(true),
                })
            }
            "all-off" | "none" => {
                return Ok(OffloadProfile {
                    gso: Some(false),
                    gro: Some(false),
                    tso: Some(false),
                })
            }
            _ => {}
        }
        let mut profile = OffloadProfile {
            gso: Some(false),
            gro: Some(false),
            tso: Some(false),
        };
        for part in value.split('+') {
            match part.trim() {
                "gso" => profile.gso = Some(true),
                "gro" => profile.gro = Some(true),
                "tso" => profile.tso = Some(true),
                other => return Err(format!("unknown offload `{other}`")),
            }
        }
        Ok(profile)
    }

    fn features(&self) -> Vec<(&'static str, bool)> {
        let mut out = Vec::new();
        if let Some(v) = self.gso {
            out.push(("gso", v));
        }
        if let Some(v) = self.gro {
            out.push(("gro", v));
        }
        if let Some(v) = self.tso {
            out.push(("tso", v));
        }
        out
    }
}

/// ethtool's long feature names, used when parsing `ethtool -k` output.
pub fn offload_long_name(feature: &str) -> &'static str {
    match feature {
        "gso" => "generic-segmentation-offload",
        "gro" => "generic-receive-offload",
        "tso" => "tcp-segmentation-offload",
        _ => "unknown-offload",
    }
}

/// Command templates used to read and change host settings. Placeholders:
/// `{key}`, `{value}` for sysctls; `{iface}`, `{feature}`, `{value}` for
/// offloads (feature is the short name, value `on` or `off`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningCommands {
    pub sysctl_get: String,
    pub sysctl_set: String,
    pub offload_get: String,
    pub offload_set: String,
}

impl Default for TuningCommands {
    fn default() -> Self {
        TuningCommands {
            sysctl_get: "sysctl -n {key}".into(),
            sysctl_set: "sysctl -w {key}={value}".into(),
            offload_get: "ethtool -k {iface}".into(),
            offload_set: "ethtool -K {iface} {feature} {value}".into(),
        }
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// One concrete host setting, addressable for read-back and restore.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingKey {
    Sysctl(String),
    Offload { iface: String, feature: String },
}

impl fmt::Display for SettingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SettingKey::Sysctl(key) => write!(f, "sysctl {key}"),
            SettingKey::Offload { iface, feature } => write!(f, "offload {iface}/{feature}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedSetting {
    pub key: SettingKey,
    pub prior: String,
}

/// Prior values of every setting changed on one host, in application order;
/// sufficient to restore the pre-measurement state exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AppliedTuning {
    pub host: String,
    pub settings: Vec<AppliedSetting>,
}

impl AppliedTuning {
    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }
}

struct Tuner<'a> {
    exec: &'a dyn Executor,
    commands: &'a TuningCommands,
}

impl<'a> Tuner<'a> {
    fn run_ok(&self, command: String) -> Result<String, TuningError> {
        let out = self.exec.run(&CommandRequest::new(command.clone()))?;
        if !out.success() {
            return Err(TuningError::CommandFailed {
                host: self.exec.host().to_string(),
                command,
                stderr: if out.stderr.trim().is_empty() {
                    format!("exit code {:?}", out.exit_code)
                } else {
                    out.stderr.trim().to_string()
                },
            });
        }
        Ok(out.stdout.trim().to_string())
    }

    fn read_sysctl(&self, key: &str) -> Result<String, TuningError> {
        self.run_ok(fill(&self.commands.sysctl_get, &[("key", key)]))
    }

    fn write_sysctl(&self, key: &str, value: &str) -> Result<(), TuningError> {
        self.run_ok(fill(
            &self.commands.sysctl_set,
            &[("key", key), ("value", value)],
        ))?;
        Ok(())
    }

    fn read_offloads(&self, iface: &str) -> Result<BTreeMap<String, String>, TuningError> {
        let text = self.run_ok(fill(&self.commands.offload_get, &[("iface", iface)]))?;
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if let Some((name, value)) = line.trim().split_once(':') {
                let state = value.trim().split_whitespace().next().unwrap_or("");
                map.insert(name.trim().to_string(), state.to_string());
            }
        }
        Ok(map)
    }

    fn write_offload(&self, iface: &str, feature: &str, value: &str) -> Result<(), TuningError> {
        self.run_ok(fill(
            &self.commands.offload_set,
            &[
                ("iface", iface),
                ("feature", feature),
                ("feature_long", offload_long_name(feature)),
                ("value", value),
            ],
        ))?;
        Ok(())
    }

    fn set_sysctl_checked(
        &self,
        key: &str,
        value: &str,
        applied: &mut AppliedTuning,
    ) -> Result<(), TuningError> {
        let prior = self.read_sysctl(key)?;
        self.write_sysctl(key, value)?;
        applied.settings.push(AppliedSetting {
            key: SettingKey::Sysctl(key.to_string()),
            prior,
        });
        let actual = self.read_sysctl(key)?;
        if actual != value {
            return Err(TuningError::ReadbackMismatch {
                host: self.exec.host().to_string(),
                setting: format!("sysctl {key}"),
                requested: value.to_string(),
                actual,
            });
        }
        Ok(())
    }
}

/// Apply the requested settings, recording prior values as we go. Every
/// change is read back and compared. On error the returned `AppliedTuning`
/// inside the error path is not available, so callers should treat any
/// partially applied state via [`reset_host_tuning`] on the tuning captured
/// so far; [`apply_host_tuning`] therefore rolls back internally when a
/// later step fails.
pub fn apply_host_tuning(
    tuning: &HostTuning,
    exec: &dyn Executor,
    commands: &TuningCommands,
) -> Result<AppliedTuning, TuningError> {
    let tuner = Tuner { exec, commands };
    let mut applied = AppliedTuning {
        host: exec.host().to_string(),
        settings: Vec::new(),
    };
    let result = (|| -> Result<(), TuningError> {
        if let Some(bytes) = tuning.udp_rcvbuf_bytes {
            let value = bytes.to_string();
            tuner.set_sysctl_checked("net.core.rmem_max", &value, &mut applied)?;
            tuner.set_sysctl_checked("net.core.rmem_default", &value, &mut applied)?;
        }
        if let Some(bytes) = tuning.udp_sndbuf_bytes {
            let value = bytes.to_string();
            tuner.set_sysctl_checked("net.core.wmem_max", &value, &mut applied)?;
            tuner.set_sysctl_checked("net.core.wmem_default", &value, &mut applied)?;
        }
        if let Some(profile) = &tuning.offload_profile {
            let iface = &tuning.interface_name;
            let current = tuner.read_offloads(iface)?;
            for (feature, enabled) in profile.features() {
                let long = offload_long_name(feature);
                let prior = current.get(long).cloned().ok_or_else(|| {
                    TuningError::UnknownSetting {
                        host: exec.host().to_string(),
                        setting: format!("{iface}/{long}"),
                    }
                })?;
                let value = if enabled { "on" } else { "off" };
                tuner.write_offload(iface, feature, value)?;
                applied.settings.push(AppliedSetting {
                    key: SettingKey::Offload {
                        iface: iface.clone(),
                        feature: feature.to_string(),
                    },
                    prior,
                });
                let after = tuner.read_offloads(iface)?;
                let actual = after.get(long).cloned().unwrap_or_default();
                if actual != value {
                    return Err(TuningError::ReadbackMismatch {
                        host: exec.host().to_string(),
                        setting: format!("offload {iface}/{feature}"),
                        requested: value.to_string(),
                        actual,
                    });
                }
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(applied),
        Err(err) => {
            // Roll back whatever was already changed before reporting.
            let _ = reset_host_tuning(&applied, exec, commands);
            Err(err)
        }
    }
}

/// Restore every changed setting to its recorded prior value, most recent
/// first, verifying each by read-back. Failures are aggregated so one bad
/// setting does not block restoring the rest.
pub fn reset_host_tuning(
    applied: &AppliedTuning,
    exec: &dyn Executor,
    commands: &TuningCommands,
) -> Result<(), TuningError> {
    let tuner = Tuner { exec, commands };
    let mut failed = Vec::new();
    for setting in applied.settings.iter().rev() {
        let restored = match &setting.key {
            SettingKey::Sysctl(key) => tuner
                .write_sysctl(key, &setting.prior)
                .and_then(|()| tuner.read_sysctl(key))
                .map(|actual| actual == setting.prior),
            SettingKey::Offload { iface, feature } => tuner
                .write_offload(iface, feature, &setting.prior)
                .and_then(|()| tuner.read_offloads(iface))
                .map(|map| {
                    map.get(offload_long_name(feature))
                        .map(|v| v == &setting.prior)
                        .unwrap_or(false)
                }),
        };
        match restored {
            Ok(true) => {}
            _ => failed.push(setting.key.to_string()),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(TuningError::PartialRestore {
            host: exec.host().to_string(),
            settings: failed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::LocalExecutor;
    use std::path::Path;

    /// File-backed fake settings store driven through the command
    /// templates, standing in for sysctl/ethtool.
    pub fn fake_store(dir: &Path) -> TuningCommands {
        let d = dir.display();
        std::fs::write(dir.join("net.core.rmem_max"), "212992\n").unwrap();
        std::fs::write(dir.join("net.core.rmem_default"), "212992\n").unwrap();
        std::fs::write(dir.join("net.core.wmem_max"), "212992\n").unwrap();
        std::fs::write(dir.join("net.core.wmem_default"), "212992\n").unwrap();
        std::fs::write(
            dir.join("offload-lo"),
            "generic-segmentation-offload: on\n\
             generic-receive-offload: on\n\
             tcp-segmentation-offload: on\n",
        )
        .unwrap();
        TuningCommands {
            sysctl_get: format!("cat {d}/{{key}}"),
            sysctl_set: format!("printf '%s\\n' {{value}} > {d}/{{key}}"),
            offload_get: format!("cat {d}/offload-{{iface}}"),
            offload_set: format!(
                "sed -i 's/^{{feature_long}}: .*/{{feature_long}}: {{value}}/' {d}/offload-{{iface}}"
            ),
        }
    }

    fn snapshot(dir: &Path) -> Vec<(String, String)> {
        let mut entries: Vec<(String, String)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read_to_string(e.path()).unwrap(),
                )
            })
            .collect();
        entries.sort();
        entries
    }

    #[test]
    fn rcvbuf_multiple_sixteen() {
        // 16 x 212992 = 3407872
        assert_eq!(16 * DEFAULT_RCVBUF_BYTES, 3_407_872);
        let dir = tempfile::tempdir().unwrap();
        let commands = fake_store(dir.path());
        let exec = LocalExecutor::default();
        let tuning = HostTuning {
            udp_rcvbuf_bytes: Some(16 * DEFAULT_RCVBUF_BYTES),
            ..Default::default()
        };
        let applied = apply_host_tuning(&tuning, &exec, &commands).unwrap();
        assert_eq!(applied.settings.len(), 2);
        let value =
            std::fs::read_to_string(dir.path().join("net.core.rmem_max")).unwrap();
        assert_eq!(value.trim(), "3407872");
    }

    #[test]
    fn offloads_read_back_off() {
        let dir = tempfile::tempdir().unwrap();
        let commands = fake_store(dir.path());
        let exec = LocalExecutor::default();
        let tuning = HostTuning {
            offload_profile: Some(OffloadProfile::parse("all-off").unwrap()),
            ..Default::default()
        };
        apply_host_tuning(&tuning, &exec, &commands).unwrap();
        let text = std::fs::read_to_string(dir.path().join("offload-lo")).unwrap();
        for line in text.lines() {
            assert!(line.ends_with(": off"), "line not off: {line}");
        }
    }

    #[test]
    fn empty_tuning_is_noop() {
        let exec = LocalExecutor::default();
        // Commands that would fail if ever invoked.
        let commands = TuningCommands {
            sysctl_get: "false".into(),
            sysctl_set: "false".into(),
            offload_get: "false".into(),
            offload_set: "false".into(),
        };
        let applied = apply_host_tuning(&HostTuning::default(), &exec, &commands).unwrap();
        assert!(applied.is_empty());
        reset_host_tuning(&applied, &exec, &commands).unwrap();
    }

    #[test]
    fn apply_reset_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let commands = fake_store(dir.path());
        let exec = LocalExecutor::default();
        let initial = snapshot(dir.path());
        let tuning = HostTuning {
            udp_rcvbuf_bytes: Some(4 * DEFAULT_RCVBUF_BYTES),
            udp_sndbuf_bytes: Some(2 * DEFAULT_RCVBUF_BYTES),
            offload_profile: Some(OffloadProfile::parse("gso+gro").unwrap()),
            interface_name: "lo".into(),
        };
        let applied = apply_host_tuning(&tuning, &exec, &commands).unwrap();
        assert_ne!(snapshot(dir.path()), initial);
        reset_host_tuning(&applied, &exec, &commands).unwrap();
        assert_eq!(snapshot(dir.path()), initial);
    }

    #[test]
    fn privilege_denied_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut commands = fake_store(dir.path());
        commands.sysctl_set = "echo 'permission denied' >&2; false".into();
        let exec = LocalExecutor::default();
        let tuning = HostTuning {
            udp_rcvbuf_bytes: Some(425_984),
            ..Default::default()
        };
        let err = apply_host_tuning(&tuning, &exec, &commands).unwrap_err();
        assert!(matches!(err, TuningError::CommandFailed { .. }));
        assert!(err.to_string().contains("permission denied"));
    }

    #[test]
    fn failed_apply_rolls_back_earlier_settings() {
        let dir = tempfile::tempdir().unwrap();
        let commands = fake_store(dir.path());
        let initial = snapshot(dir.path());
        let exec = LocalExecutor::default();
        // rcvbuf succeeds, then the offload probe fails on a bad interface.
        let tuning = HostTuning {
            udp_rcvbuf_bytes: Some(4 * DEFAULT_RCVBUF_BYTES),
            udp_sndbuf_bytes: None,
            offload_profile: Some(OffloadProfile::parse("all-off").unwrap()),
            interface_name: "missing0".into(),
        };
        assert!(apply_host_tuning(&tuning, &exec, &commands).is_err());
        assert_eq!(snapshot(dir.path()), initial);
    }

    #[test]
    fn restore_denied_names_setting() {
        let dir = tempfile::tempdir().unwrap();
        let commands = fake_store(dir.path());
        let exec = LocalExecutor::default();
        let tuning = HostTuning {
            udp_rcvbuf_bytes: Some(425_984),
            ..Default::default()
        };
        let applied = apply_host_tuning(&tuning, &exec, &commands).unwrap();
        let mut broken = commands.clone();
        broken.sysctl_set = "false".into();
        let err = reset_host_tuning(&applied, &exec, &broken).unwrap_err();
        match err {
            TuningError::PartialRestore { settings, .. } => {
                assert_eq!(settings.len(), 2);
                assert!(settings.iter().any(|s| s.contains("rmem_max")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
