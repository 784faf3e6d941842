//! Command execution on measurement hosts.
//!
//! `Executor` abstracts over where commands run: `LocalExecutor` runs them
//! as local processes (the loopback, desk-scale setup), `SshExecutor`
//! dispatches them over `ssh`/`scp` to a remote measurement node. Both obey
//! the same contract: sequential foreground commands, individually
//! stoppable background tasks, and a hard deadline per command.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("[{host}] failed to start `{command}`: {source}")]
    Spawn {
        host: String,
        command: String,
        source: std::io::Error,
    },
    #[error("[{host}] `{command}` exceeded deadline of {timeout:?}")]
    Timeout {
        host: String,
        command: String,
        timeout: Duration,
    },
    #[error("[{host}] file transfer {from} -> {to} failed: {source}")]
    Copy {
        host: String,
        from: PathBuf,
        to: PathBuf,
        source: std::io::Error,
    },
    #[error("[{host}] io error: {source}")]
    Io {
        host: String,
        source: std::io::Error,
    },
}

/// A shell command plus the environment it runs with.
#[derive(Debug, Clone, Default)]
pub struct CommandRequest {
    /// Passed to `sh -c`.
    pub command: String,
    pub env: BTreeMap<String, String>,
    pub timeout: Option<Duration>,
}

impl CommandRequest {
    pub fn new(command: impl Into<String>) -> Self {
        CommandRequest {
            command: command.into(),
            ..Default::default()
        }
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.insert(key.into(), value.into());
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    /// Set when the process was killed at the deadline.
    pub timed_out: bool,
}

impl CommandOutput {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }
}

/// A command started in the background. Stdout/stderr stream into files so
/// they can be inspected while the task runs (readiness probing).
pub trait BackgroundTask: Send {
    fn is_running(&mut self) -> bool;
    /// Graceful stop (SIGTERM), escalating to SIGKILL after `grace`.
    /// Idempotent: subsequent calls return the captured output again.
    fn stop(&mut self, grace: Duration) -> Result<CommandOutput, ExecError>;
    fn stdout_path(&self) -> &Path;
    fn stderr_path(&self) -> &Path;
}

pub trait Executor: Send + Sync {
    /// Host identity, used in error messages and artifact paths.
    fn host(&self) -> &str;
    /// Run a command to completion, capturing output. Never raises on a
    /// nonzero exit; the caller inspects the exit code.
    fn run(&self, request: &CommandRequest) -> Result<CommandOutput, ExecError>;
    /// Start a command in the background, logging to files under `log_dir`.
    fn spawn(
        &self,
        request: &CommandRequest,
        log_dir: &Path,
        tag: &str,
    ) -> Result<Box<dyn BackgroundTask>, ExecError>;
    /// Copy a file from this host to the local machine.
    fn fetch(&self, remote: &Path, local: &Path) -> Result<(), ExecError>;
    /// Copy a local file to this host.
    fn push(&self, local: &Path, remote: &Path) -> Result<(), ExecError>;
}

fn wait_with_deadline(
    child: &mut Child,
    timeout: Option<Duration>,
) -> std::io::Result<(Option<i32>, bool)> {
    let start = Instant::now();
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status.code(), false));
        }
        if let Some(t) = timeout {
            if start.elapsed() >= t {
                let _ = child.kill();
                let _ = child.wait();
                return Ok((None, true));
            }
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

fn read_file_lossy(path: &Path) -> String {
    let mut buf = Vec::new();
    if let Ok(mut f) = File::open(path) {
        let _ = f.read_to_end(&mut buf);
    }
    String::from_utf8_lossy(&buf).into_owned()
}

/// Runs commands as local child processes.
pub struct LocalExecutor {
    host: String,
}

impl LocalExecutor {
    pub fn new(host: impl Into<String>) -> Self {
        LocalExecutor { host: host.into() }
    }
}

impl Default for LocalExecutor {
    fn default() -> Self {
        LocalExecutor::new("localhost")
    }
}

struct LocalBackgroundTask {
    host: String,
    child: Child,
    stdout_path: PathBuf,
    stderr_path: PathBuf,
    result: Option<CommandOutput>,
}

impl LocalBackgroundTask {
    fn collect(&mut self, exit_code: Option<i32>, timed_out: bool) -> CommandOutput {
        let output = CommandOutput {
            exit_code,
            stdout: read_file_lossy(&self.stdout_path),
            stderr: read_file_lossy(&self.stderr_path),
            timed_out,
        };
        self.result = Some(output.clone());
        output
    }
}

impl BackgroundTask for LocalBackgroundTask {
    fn is_running(&mut self) -> bool {
        if self.result.is_some() {
            return false;
        }
        matches!(self.child.try_wait(), Ok(None))
    }

    fn stop(&mut self, grace: Duration) -> Result<CommandOutput, ExecError> {
        if let Some(result) = &self.result {
            return Ok(result.clone());
        }
        if let Ok(Some(status)) = self.child.try_wait() {
            return Ok(self.collect(status.code(), false));
        }
        // SIGTERM first, then wait out the grace period.
        #[cfg(unix)]
        unsafe {
            libc_kill(self.child.id() as i32, 15);
        }
        let deadline = Instant::now() + grace;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Ok(self.collect(status.code(), false)),
                Ok(None) => {
                    if Instant::now() >= deadline {
                        let _ = self.child.kill();
                        let _ = self.child.wait();
                        return Ok(self.collect(None, false));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(source) => {
                    return Err(ExecError::Io {
                        host: self.host.clone(),
                        source,
                    })
                }
            }
        }
    }

    fn stdout_path(&self) -> &Path {
        &self.stdout_path
    }

    fn stderr_path(&self) -> &Path {
        &self.stderr_path
    }
}

impl Drop for LocalBackgroundTask {
    fn drop(&mut self) {
        if self.result.is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

#[cfg(unix)]
unsafe fn libc_kill(pid: i32, sig: i32) {
    extern "C" {
        fn kill(pid: i32, sig: i32) -> i32;
    }
    kill(pid, sig);
}

impl Executor for LocalExecutor {
    fn host(&self) -> &str {
        &self.host
    }

    fn run(&self, request: &CommandRequest) -> Result<CommandOutput, ExecError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(&request.command)
            .envs(&request.env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let mut child = cmd.spawn().map_err(|source| ExecError::Spawn {
            host: self.host.clone(),
            command: request.command.clone(),
            source,
        })?;
        let mut stdout = child.stdout.take();
        let mut stderr = child.stderr.take();
        // Drain pipes on threads so a chatty command cannot deadlock.
        let out_handle = std::thread::spawn(move || {
            let mut buf = Vec::new();
            if let Some(s) = stdout.as_mut() {
                let _ = s.read_to_end(&mut buf);
            }
            buf
        });
        let err_handle = std::thread::spawn(move || {
            let mut buf = Vec::new();
            if let Some(s) = stderr.as_mut() {
                let _ = s.read_to_end(&mut buf);
            }
            buf
        });
        let (exit_code, timed_out) =
            wait_with_deadline(&mut child, request.timeout).map_err(|source| ExecError::Io {
                host: self.host.clone(),
                source,
            })?;
        let stdout = String::from_utf8_lossy(&out_handle.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&err_handle.join().unwrap_or_default()).into_owned();
        Ok(CommandOutput {
            exit_code,
            stdout,
            stderr,
            timed_out,
        })
    }

    fn spawn(
        &self,
        request: &CommandRequest,
        log_dir: &Path,
        tag: &str,
    ) -> Result<Box<dyn BackgroundTask>, ExecError> {
        std::fs::create_dir_all(log_dir).map_err(|source| ExecError::Io {
            host: self.host.clone(),
            source,
        })?;
        let stdout_path = log_dir.join(format!("{tag}.stdout"));
        let stderr_path = log_dir.join(format!("{tag}.stderr"));
        let stdout_file = File::create(&stdout_path).map_err(|source| ExecError::Io {
            host: self.host.clone(),
            source,
        })?;
        let stderr_file = File::create(&stderr_path).map_err(|source| ExecError::Io {
            host: self.host.clone(),
            source,
        })?;
        let child = Command::new("sh")
            .arg("-c")
            .arg(&request.command)
            .envs(&request.env)
            .stdin(Stdio::null())
            .stdout(Stdio::from(stdout_file))
            .stderr(Stdio::from(stderr_file))
            .spawn()
            .map_err(|source| ExecError::Spawn {
                host: self.host.clone(),
                command: request.command.clone(),
                source,
            })?;
        Ok(Box::new(LocalBackgroundTask {
            host: self.host.clone(),
            child,
            stdout_path,
            stderr_path,
            result: None,
        }))
    }

    fn fetch(&self, remote: &Path, local: &Path) -> Result<(), ExecError> {
        if remote == local {
            return Ok(());
        }
        std::fs::copy(remote, local)
            .map(|_| ())
            .map_err(|source| ExecError::Copy {
                host: self.host.clone(),
                from: remote.to_path_buf(),
                to: local.to_path_buf(),
                source,
            })
    }

    fn push(&self, local: &Path, remote: &Path) -> Result<(), ExecError> {
        if remote == local {
            return Ok(());
        }
        if let Some(parent) = remote.parent() {
            std::fs::create_dir_all(parent).map_err(|source| ExecError::Io {
                host: self.host.clone(),
                source,
            })?;
        }
        std::fs::copy(local, remote)
            .map(|_| ())
            .map_err(|source| ExecError::Copy {
                host: self.host.clone(),
                from: local.to_path_buf(),
                to: remote.to_path_buf(),
                source,
            })
    }
}

/// Dispatches commands over an ssh transport. File transfer uses `scp`.
/// Background tasks are local `ssh` child processes, so stopping the local
/// process tears down the remote command with it (ssh -tt allocates a tty
/// so the remote side receives SIGHUP).
pub struct SshExecutor {
    host: String,
    ssh_args: Vec<String>,
    local: LocalExecutor,
}

impl SshExecutor {
    pub fn new(host: impl Into<String>) -> Self {
        let host = host.into();
        SshExecutor {
            local: LocalExecutor::new(host.clone()),
            host,
            ssh_args: vec!["-o".into(), "BatchMode=yes".into()],
        }
    }

    fn wrap(&self, request: &CommandRequest) -> CommandRequest {
        let mut env_prefix = String::new();
        for (k, v) in &request.env {
            env_prefix.push_str(&format!("{k}={} ", shell_quote(v)));
        }
        let remote = format!("{env_prefix}{}", request.command);
        CommandRequest {
            command: format!(
                "ssh {} -tt {} {}",
                self.ssh_args.join(" "),
                shell_quote(&self.host),
                shell_quote(&remote)
            ),
            env: BTreeMap::new(),
            timeout: request.timeout,
        }
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

impl Executor for SshExecutor {
    fn host(&self) -> &str {
        &self.host
    }

    fn run(&self, request: &CommandRequest) -> Result<CommandOutput, ExecError> {
        self.local.run(&self.wrap(request))
    }

    fn spawn(
        &self,
        request: &CommandRequest,
        log_dir: &Path,
        tag: &str,
    ) -> Result<Box<dyn BackgroundTask>, ExecError> {
        self.local.spawn(&self.wrap(request), log_dir, tag)
    }

    fn fetch(&self, remote: &Path, local: &Path) -> Result<(), ExecError> {
        let out = self.local.run(&CommandRequest::new(format!(
            "scp -B {}:{} {}",
            shell_quote(&self.host),
            shell_quote(&remote.to_string_lossy()),
            shell_quote(&local.to_string_lossy())
        )))?;
        if out.success() {
            Ok(())
        } else {
            Err(ExecError::Copy {
                host: self.host.clone(),
                from: remote.to_path_buf(),
                to: local.to_path_buf(),
                source: std::io::Error::other(out.stderr),
            })
        }
    }

    fn push(&self, local: &Path, remote: &Path) -> Result<(), ExecError> {
        let out = self.local.run(&CommandRequest::new(format!(
            "scp -B {} {}:{}",
            shell_quote(&local.to_string_lossy()),
            shell_quote(&self.host),
            shell_quote(&remote.to_string_lossy())
        )))?;
        if out.success() {
            Ok(())
        } else {
            Err(ExecError::Copy {
                host: self.host.clone(),
                from: local.to_path_buf(),
                to: remote.to_path_buf(),
                source: std::io::Error::other(out.stderr),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_captures_output_and_exit_code() {
        let exec = LocalExecutor::default();
        let out = exec
            .run(&CommandRequest::new("echo hello; echo oops >&2; exit 3"))
            .unwrap();
        assert_eq!(out.exit_code, Some(3));
        assert_eq!(out.stdout.trim(), "hello");
        assert_eq!(out.stderr.trim(), "oops");
        assert!(!out.success());
    }

    #[test]
    fn env_vars_reach_the_command() {
        let exec = LocalExecutor::default();
        let out = exec
            .run(&CommandRequest::new("printf %s \"$ROLE\"").env("ROLE", "client"))
            .unwrap();
        assert_eq!(out.stdout, "client");
    }

    #[test]
    fn deadline_kills_the_command() {
        let exec = LocalExecutor::default();
        let out = exec
            .run(&CommandRequest::new("sleep 5").timeout(Duration::from_millis(100)))
            .unwrap();
        assert!(out.timed_out);
        assert!(!out.success());
    }

    #[test]
    fn background_task_stoppable_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let exec = LocalExecutor::default();
        let mut task = exec
            .spawn(
                &CommandRequest::new("echo ready; sleep 10"),
                dir.path(),
                "bg",
            )
            .unwrap();
        // Let it write its readiness line.
        std::thread::sleep(Duration::from_millis(200));
        assert!(task.is_running());
        let out1 = task.stop(Duration::from_millis(200)).unwrap();
        assert!(out1.stdout.contains("ready"));
        let out2 = task.stop(Duration::from_millis(200)).unwrap();
        assert_eq!(out1.stdout, out2.stdout);
        assert!(!task.is_running());
    }

    #[test]
    fn spawn_failure_names_host() {
        let exec = LocalExecutor::new("client-host");
        let out = exec
            .run(&CommandRequest::new("/nonexistent/definitely-missing-binary"))
            .unwrap();
        assert!(!out.success());
    }
}
