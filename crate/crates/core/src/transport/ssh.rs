//! OpenSSH-backed endpoint: commands via `ssh`, transfers via `scp`.
//!
//! Authentication is key-file only and `BatchMode` is forced, so a missing
//! or rejected key fails fast instead of prompting.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::{
    local_temp_sibling, remote_parent, sha256_file, Connector, Endpoint, ExecResult, RemoteCommand, TransferReport,
    TransportError, DEFAULT_EXEC_TIMEOUT,
};
use crate::config::ClusterProfile;

/// ssh reserves this exit status for its own failures.
const SSH_FAILURE: i32 = 255;

#[derive(Debug, Clone)]
pub struct SshSettings {
    pub host: String,
    pub port: u16,
    pub user: String,
    pub key_path: PathBuf,
    pub default_timeout: Duration,
    pub ssh_binary: String,
    pub scp_binary: String,
}

impl SshSettings {
    pub fn from_profile(profile: &ClusterProfile) -> Self {
        SshSettings {
            host: profile.host.clone(),
            port: profile.port,
            user: profile.user.clone(),
            key_path: profile.key_path.clone(),
            default_timeout: DEFAULT_EXEC_TIMEOUT,
            ssh_binary: "ssh".into(),
            scp_binary: "scp".into(),
        }
    }

    fn destination(&self) -> String {
        format!("{}@{}", self.user, self.host)
    }

    fn common_options(&self) -> Vec<String> {
        vec![
            "-i".into(),
            self.key_path.display().to_string(),
            "-o".into(),
            "BatchMode=yes".into(),
            "-o".into(),
            "ConnectTimeout=30".into(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SshEndpoint {
    settings: SshSettings,
}

pub struct SshConnector {
    settings: SshSettings,
}

impl SshConnector {
    pub fn new(settings: SshSettings) -> Self {
        SshConnector { settings }
    }
}

impl Connector for SshConnector {
    fn connect(&self) -> Result<Box<dyn Endpoint>, TransportError> {
        Ok(Box::new(SshEndpoint::new(self.settings.clone())))
    }
}

/// Quotes argv tokens for the remote POSIX shell.
pub fn remote_command_line(command: &RemoteCommand) -> String {
    let argv = command.argv.iter().map(|t| quote(t)).collect::<Vec<_>>().join(" ");
    match &command.cwd {
        Some(dir) => format!("cd {} && {argv}", quote(dir)),
        None => argv,
    }
}

fn quote(token: &str) -> String {
    shlex::try_quote(token)
        .map(|q| q.into_owned())
        .unwrap_or_else(|_| format!("'{}'", token.replace('\0', "").replace('\'', r"'\''")))
}

struct Captured {
    status: Option<i32>,
    stdout: String,
    stderr: String,
    elapsed: Duration,
}

fn run_with_deadline(mut cmd: Command, deadline: Duration, label: &str) -> Result<Captured, TransportError> {
    let started = Instant::now();
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| TransportError::ConnectionLost(format!("cannot start {label}: {e}")))?;
    let mut out_pipe = child.stdout.take().expect("stdout piped");
    let mut err_pipe = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });
    let status = match child.wait_timeout(deadline)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(TransportError::Timeout {
                command: label.to_string(),
                after: deadline,
            });
        }
    };
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    Ok(Captured {
        status: status.code(),
        stdout,
        stderr,
        elapsed: started.elapsed(),
    })
}

impl SshEndpoint {
    pub fn new(settings: SshSettings) -> Self {
        SshEndpoint { settings }
    }

    fn ssh(&self, remote: &str, deadline: Duration, label: &str) -> Result<ExecResult, TransportError> {
        let mut cmd = Command::new(&self.settings.ssh_binary);
        cmd.args(self.settings.common_options())
            .arg("-p")
            .arg(self.settings.port.to_string())
            .arg(self.settings.destination())
            .arg("--")
            .arg(remote);
        let captured = run_with_deadline(cmd, deadline, label)?;
        match captured.status {
            Some(SSH_FAILURE) | None => Err(TransportError::ConnectionLost(captured.stderr.trim().to_string())),
            Some(code) => Ok(ExecResult {
                exit_code: code,
                stdout: captured.stdout,
                stderr: captured.stderr,
                duration_ms: captured.elapsed.as_millis() as u64,
            }),
        }
    }

    fn scp(&self, from: &str, to: &str) -> Result<Captured, TransportError> {
        let mut cmd = Command::new(&self.settings.scp_binary);
        cmd.args(self.settings.common_options())
            .arg("-q")
            .arg("-P")
            .arg(self.settings.port.to_string())
            .arg(from)
            .arg(to);
        run_with_deadline(cmd, self.settings.default_timeout, "scp")
    }

    fn remote_spec(&self, path: &str) -> String {
        format!("{}:{}", self.settings.destination(), path)
    }

    fn remote_sha256(&mut self, path: &str) -> Result<Option<String>, TransportError> {
        let res = self.exec(&RemoteCommand::new(["sha256sum", path]))?;
        if !res.success() {
            return Ok(None);
        }
        Ok(res.stdout.split_whitespace().next().map(str::to_string))
    }

    fn check(&mut self, argv: &[&str]) -> Result<ExecResult, TransportError> {
        self.exec(&RemoteCommand::new(argv.iter().copied()))
    }
}

impl Endpoint for SshEndpoint {
    fn exec(&mut self, command: &RemoteCommand) -> Result<ExecResult, TransportError> {
        let deadline = command.timeout.unwrap_or(self.settings.default_timeout);
        self.ssh(&remote_command_line(command), deadline, &command.display())
    }

    fn put_file(&mut self, local: &Path, remote: &str) -> Result<TransferReport, TransportError> {
        if !local.is_file() {
            return Err(TransportError::SourceMissing(local.display().to_string()));
        }
        let (bytes, local_sum) = sha256_file(local)?;
        let parent = remote_parent(remote);
        if !self.check(&["test", "-d", &parent])?.success() {
            return Err(TransportError::DestinationUnwritable(format!("{parent} does not exist")));
        }
        let staged = format!("{parent}/.{}.part-{}", super::remote_basename(remote), uuid::Uuid::new_v4().simple());
        let copied = self.scp(&local.display().to_string(), &self.remote_spec(&staged))?;
        match copied.status {
            Some(0) => {}
            Some(SSH_FAILURE) | None => return Err(TransportError::ConnectionLost(copied.stderr.trim().to_string())),
            Some(_) => return Err(TransportError::DestinationUnwritable(copied.stderr.trim().to_string())),
        }
        let remote_sum = self.remote_sha256(&staged)?.unwrap_or_default();
        if remote_sum != local_sum {
            let _ = self.check(&["rm", "-f", &staged]);
            return Err(TransportError::ChecksumMismatch {
                path: remote.to_string(),
                local: local_sum,
                remote: remote_sum,
            });
        }
        let moved = self.check(&["mv", "-f", &staged, remote])?;
        if !moved.success() {
            let _ = self.check(&["rm", "-f", &staged]);
            return Err(TransportError::DestinationUnwritable(moved.stderr.trim().to_string()));
        }
        Ok(TransferReport { bytes, checksum: local_sum })
    }

    fn get_file(&mut self, remote: &str, local: &Path) -> Result<TransferReport, TransportError> {
        let Some(remote_sum) = self.remote_sha256(remote)? else {
            return Err(TransportError::SourceMissing(remote.to_string()));
        };
        let staged = local_temp_sibling(local);
        let copied = self.scp(&self.remote_spec(remote), &staged.display().to_string())?;
        match copied.status {
            Some(0) => {}
            Some(SSH_FAILURE) | None => return Err(TransportError::ConnectionLost(copied.stderr.trim().to_string())),
            Some(_) => return Err(TransportError::DestinationUnwritable(copied.stderr.trim().to_string())),
        }
        let (bytes, local_sum) = sha256_file(&staged)?;
        if local_sum != remote_sum {
            let _ = std::fs::remove_file(&staged);
            return Err(TransportError::ChecksumMismatch {
                path: remote.to_string(),
                local: local_sum,
                remote: remote_sum,
            });
        }
        std::fs::rename(&staged, local)?;
        Ok(TransferReport { bytes, checksum: local_sum })
    }

    fn path_exists(&mut self, remote: &str) -> Result<bool, TransportError> {
        Ok(self.check(&["test", "-e", remote])?.success())
    }

    fn make_dirs(&mut self, remote: &str) -> Result<(), TransportError> {
        let res = self.check(&["mkdir", "-p", remote])?;
        if res.success() {
            Ok(())
        } else {
            Err(TransportError::DestinationUnwritable(res.stderr.trim().to_string()))
        }
    }

    fn remove_tree(&mut self, remote: &str) -> Result<bool, TransportError> {
        if !self.path_exists(remote)? {
            return Ok(false);
        }
        let res = self.check(&["rm", "-rf", remote])?;
        if res.success() {
            Ok(true)
        } else {
            Err(TransportError::DestinationUnwritable(res.stderr.trim().to_string()))
        }
    }
}
