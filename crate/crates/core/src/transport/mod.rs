//! Remote command execution and file transfer.
//!
//! [`Endpoint`] is the contract every backend implements: the OpenSSH-based
//! [`ssh::SshEndpoint`] for real clusters and the simulated endpoint in
//! [`crate::sim`]. Commands are passed as argv tokens and never re-parsed by
//! a shell on the caller's side; quoting for the remote shell is the
//! backend's job. Every transfer is verified with a SHA-256 digest.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub mod ssh;

/// Per-call deadline applied when a command does not set its own.
pub const DEFAULT_EXEC_TIMEOUT: Duration = Duration::from_secs(300);

/// Default number of pooled connections.
pub const DEFAULT_POOL_SIZE: usize = 4;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("`{command}` did not finish within {after:?}")]
    Timeout { command: String, after: Duration },
    #[error("transfer source missing: {0}")]
    SourceMissing(String),
    #[error("destination not writable: {0}")]
    DestinationUnwritable(String),
    #[error("checksum mismatch for {path}: local {local}, remote {remote}")]
    ChecksumMismatch {
        path: String,
        local: String,
        remote: String,
    },
    #[error("local I/O error: {0}")]
    Io(String),
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// A command to run on the remote side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteCommand {
    pub argv: Vec<String>,
    pub cwd: Option<String>,
    pub timeout: Option<Duration>,
}

impl RemoteCommand {
    pub fn new<I, S>(argv: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RemoteCommand {
            argv: argv.into_iter().map(Into::into).collect(),
            cwd: None,
            timeout: None,
        }
    }

    pub fn in_dir(mut self, dir: impl Into<String>) -> Self {
        self.cwd = Some(dir.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn display(&self) -> String {
        self.argv.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub bytes: u64,
    /// Lowercase hex SHA-256 of the transferred content.
    pub checksum: String,
}

/// A connected remote endpoint. One operation at a time per handle.
pub trait Endpoint: Send {
    fn exec(&mut self, command: &RemoteCommand) -> Result<ExecResult, TransportError>;
    fn put_file(&mut self, local: &Path, remote: &str) -> Result<TransferReport, TransportError>;
    fn get_file(&mut self, remote: &str, local: &Path) -> Result<TransferReport, TransportError>;
    fn path_exists(&mut self, remote: &str) -> Result<bool, TransportError>;
    fn make_dirs(&mut self, remote: &str) -> Result<(), TransportError>;
    /// Removes a file or directory tree. Returns whether anything was removed.
    fn remove_tree(&mut self, remote: &str) -> Result<bool, TransportError>;
}

/// Uploads in-memory content through a local temporary file.
pub fn put_bytes(endpoint: &mut dyn Endpoint, content: &[u8], remote: &str) -> Result<TransferReport, TransportError> {
    let mut tmp = tempfile::NamedTempFile::new()?;
    io::Write::write_all(&mut tmp, content)?;
    endpoint.put_file(tmp.path(), remote)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Streams a local file through SHA-256, returning `(bytes, hex digest)`.
pub fn sha256_file(path: &Path) -> io::Result<(u64, String)> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok((total, hex::encode(hasher.finalize())))
}

/// Source of time for polling loops. The simulator maps sleeps onto virtual time.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration)
    }
}

/// Opens new endpoint handles for a pool.
pub trait Connector: Send + Sync {
    fn connect(&self) -> Result<Box<dyn Endpoint>, TransportError>;
}

struct PoolState {
    idle: Vec<Box<dyn Endpoint>>,
    open: usize,
}

/// A bounded set of endpoint handles shared between worker threads.
pub struct EndpointPool {
    connector: Arc<dyn Connector>,
    size: usize,
    state: Mutex<PoolState>,
    returned: Condvar,
}

impl EndpointPool {
    pub fn new(connector: Arc<dyn Connector>, size: usize) -> Self {
        EndpointPool {
            connector,
            size: size.max(1),
            state: Mutex::new(PoolState { idle: Vec::new(), open: 0 }),
            returned: Condvar::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Checks out a handle, connecting lazily and blocking while all are in use.
    pub fn get(&self) -> Result<PooledEndpoint<'_>, TransportError> {
        let mut state = self.state.lock().expect("pool lock poisoned");
        loop {
            if let Some(ep) = state.idle.pop() {
                return Ok(PooledEndpoint { pool: self, endpoint: Some(ep) });
            }
            if state.open < self.size {
                state.open += 1;
                drop(state);
                return match self.connector.connect() {
                    Ok(ep) => Ok(PooledEndpoint { pool: self, endpoint: Some(ep) }),
                    Err(e) => {
                        self.state.lock().expect("pool lock poisoned").open -= 1;
                        self.returned.notify_one();
                        Err(e)
                    }
                };
            }
            state = self.returned.wait(state).expect("pool lock poisoned");
        }
    }

    fn put_back(&self, endpoint: Box<dyn Endpoint>) {
        self.state.lock().expect("pool lock poisoned").idle.push(endpoint);
        self.returned.notify_one();
    }
}

pub struct PooledEndpoint<'a> {
    pool: &'a EndpointPool,
    endpoint: Option<Box<dyn Endpoint>>,
}

impl std::ops::Deref for PooledEndpoint<'_> {
    type Target = dyn Endpoint;

    fn deref(&self) -> &Self::Target {
        self.endpoint.as_deref().expect("endpoint present until drop")
    }
}

impl std::ops::DerefMut for PooledEndpoint<'_> {
    fn deref_mut(&mut self) -> &mut Self::Target {
        self.endpoint.as_deref_mut().expect("endpoint present until drop")
    }
}

impl Drop for PooledEndpoint<'_> {
    fn drop(&mut self) {
        if let Some(ep) = self.endpoint.take() {
            self.pool.put_back(ep);
        }
    }
}

/// Final path component of a remote path.
pub fn remote_basename(path: &str) -> &str {
    path.trim_end_matches('/').rsplit('/').next().unwrap_or(path)
}

/// Parent of a remote path (`/` for top-level entries).
pub fn remote_parent(path: &str) -> String {
    let trimmed = path.trim_end_matches('/');
    match trimmed.rfind('/') {
        Some(0) => "/".to_string(),
        Some(i) => trimmed[..i].to_string(),
        None => ".".to_string(),
    }
}

/// A sibling temporary path used for write-then-rename on the local side.
pub(crate) fn local_temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.part-{}", uuid::Uuid::new_v4().simple()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_digest() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn remote_path_helpers() {
        assert_eq!(remote_basename("/a/b/c.zip"), "c.zip");
        assert_eq!(remote_parent("/a/b/c.zip"), "/a/b");
        assert_eq!(remote_parent("/a"), "/");
    }
}
