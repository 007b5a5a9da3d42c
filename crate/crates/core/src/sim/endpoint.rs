use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use super::fs::normalize;
use super::{exec, SimCluster, Topology};
use crate::transport::{
    local_temp_sibling, remote_basename, remote_parent, sha256_hex, Clock, Connector, Endpoint, ExecResult,
    RemoteCommand, TransferReport, TransportError, DEFAULT_EXEC_TIMEOUT,
};

/// Shared, thread-safe access to one simulated cluster.
///
/// Every endpoint and clock created from a handle operates on the same
/// cluster; calls are serialized by a mutex and so totally ordered.
#[derive(Clone, Default)]
pub struct SimHandle(Arc<Mutex<SimCluster>>);

impl SimHandle {
    pub fn new(cluster: SimCluster) -> Self {
        SimHandle(Arc::new(Mutex::new(cluster)))
    }

    pub fn with_topology(topology: Topology) -> Self {
        Self::new(SimCluster::new(topology))
    }

    pub fn lock(&self) -> MutexGuard<'_, SimCluster> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn endpoint(&self) -> SimEndpoint {
        SimEndpoint {
            cluster: self.clone(),
            home: "/".into(),
        }
    }

    pub fn clock(&self) -> SimClock {
        SimClock(self.clone())
    }

    pub fn connector(&self) -> SimConnector {
        SimConnector(self.clone())
    }

    /// Serializes the whole cluster, filesystem included.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&*self.lock()).expect("cluster state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let tmp = local_temp_sibling(path);
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(tmp, path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Endpoint onto a simulated cluster.
#[derive(Clone)]
pub struct SimEndpoint {
    cluster: SimHandle,
    home: String,
}

impl SimEndpoint {
    fn lost(&self) -> Option<TransportError> {
        if self.cluster.lock().take_transport_failure() {
            Some(TransportError::ConnectionLost("simulated connection drop".into()))
        } else {
            None
        }
    }
}

fn corrupted(mut bytes: Vec<u8>) -> Vec<u8> {
    match bytes.first_mut() {
        Some(b) => *b ^= 0xff,
        None => bytes.push(0),
    }
    bytes
}

impl Endpoint for SimEndpoint {
    fn exec(&mut self, command: &RemoteCommand) -> Result<ExecResult, TransportError> {
        if let Some(e) = self.lost() {
            return Err(e);
        }
        let cwd = command.cwd.as_deref().map_or(self.home.clone(), |c| normalize(&self.home, c));
        let deadline = command.timeout.unwrap_or(DEFAULT_EXEC_TIMEOUT);
        let mut cluster = self.cluster.lock();
        if !cluster.fs.is_dir(&cwd) {
            let msg = format!("bash: line 1: cd: {cwd}: No such file or directory\n");
            return Ok(ExecResult {
                exit_code: 1,
                stdout: String::new(),
                stderr: msg,
                duration_ms: 0,
            });
        }
        let out = exec::run(&mut cluster, &command.argv, &cwd);
        let busy = Duration::from_secs(out.busy_s);
        if busy > deadline {
            return Err(TransportError::Timeout {
                command: command.display(),
                after: deadline,
            });
        }
        Ok(ExecResult {
            exit_code: out.exit_code,
            stdout: out.stdout,
            stderr: out.stderr,
            duration_ms: busy.as_millis() as u64,
        })
    }

    fn put_file(&mut self, local: &Path, remote: &str) -> Result<TransferReport, TransportError> {
        if let Some(e) = self.lost() {
            return Err(e);
        }
        let bytes = std::fs::read(local).map_err(|_| TransportError::SourceMissing(local.display().to_string()))?;
        let remote = normalize(&self.home, remote);
        let checksum = sha256_hex(&bytes);
        let mut cluster = self.cluster.lock();
        let parent = remote_parent(&remote);
        if !cluster.fs.is_dir(&parent) {
            return Err(TransportError::DestinationUnwritable(format!("{parent} does not exist")));
        }
        let staged = format!("{parent}/.{}.part", remote_basename(&remote));
        let landed = if cluster.take_corrupt_transfer() {
            corrupted(bytes.clone())
        } else {
            bytes.clone()
        };
        cluster
            .fs
            .write(&staged, landed)
            .map_err(|e| TransportError::DestinationUnwritable(e.to_string()))?;
        let remote_sum = sha256_hex(cluster.fs.read(&staged).unwrap_or_default());
        if remote_sum != checksum {
            let _ = cluster.fs.remove_tree(&staged);
            return Err(TransportError::ChecksumMismatch {
                path: remote,
                local: checksum,
                remote: remote_sum,
            });
        }
        cluster
            .fs
            .rename(&staged, &remote)
            .map_err(|e| TransportError::DestinationUnwritable(e.to_string()))?;
        Ok(TransferReport {
            bytes: bytes.len() as u64,
            checksum,
        })
    }

    fn get_file(&mut self, remote: &str, local: &Path) -> Result<TransferReport, TransportError> {
        if let Some(e) = self.lost() {
            return Err(e);
        }
        let remote = normalize(&self.home, remote);
        let (bytes, corrupt) = {
            let mut cluster = self.cluster.lock();
            let bytes = cluster
                .fs
                .read(&remote)
                .map_err(|_| TransportError::SourceMissing(remote.clone()))?
                .to_vec();
            (bytes, cluster.take_corrupt_transfer())
        };
        let remote_sum = sha256_hex(&bytes);
        let landed = if corrupt { corrupted(bytes) } else { bytes };
        let staged = local_temp_sibling(local);
        std::fs::write(&staged, &landed).map_err(|e| TransportError::DestinationUnwritable(e.to_string()))?;
        let local_sum = sha256_hex(&landed);
        if local_sum != remote_sum {
            let _ = std::fs::remove_file(&staged);
            return Err(TransportError::ChecksumMismatch {
                path: remote,
                local: local_sum,
                remote: remote_sum,
            });
        }
        std::fs::rename(&staged, local)?;
        Ok(TransferReport {
            bytes: landed.len() as u64,
            checksum: local_sum,
        })
    }

    fn path_exists(&mut self, remote: &str) -> Result<bool, TransportError> {
        if let Some(e) = self.lost() {
            return Err(e);
        }
        Ok(self.cluster.lock().fs.exists(&normalize(&self.home, remote)))
    }

    fn make_dirs(&mut self, remote: &str) -> Result<(), TransportError> {
        if let Some(e) = self.lost() {
            return Err(e);
        }
        self.cluster
            .lock()
            .fs
            .mkdir_p(&normalize(&self.home, remote))
            .map_err(|e| TransportError::DestinationUnwritable(e.to_string()))
    }

    fn remove_tree(&mut self, remote: &str) -> Result<bool, TransportError> {
        if let Some(e) = self.lost() {
            return Err(e);
        }
        self.cluster
            .lock()
            .fs
            .remove_tree(&normalize(&self.home, remote))
            .map_err(|e| TransportError::DestinationUnwritable(e.to_string()))
    }
}

/// Clock whose sleeps advance the simulated cluster.
#[derive(Clone)]
pub struct SimClock(SimHandle);

impl Clock for SimClock {
    fn now(&self) -> Duration {
        Duration::from_secs(self.0.lock().now())
    }

    fn sleep(&self, duration: Duration) {
        let secs = duration.as_secs() + u64::from(duration.subsec_nanos() > 0);
        self.0.lock().advance(secs);
    }
}

#[derive(Clone)]
pub struct SimConnector(SimHandle);

impl Connector for SimConnector {
    fn connect(&self) -> Result<Box<dyn Endpoint>, TransportError> {
        Ok(Box::new(self.0.endpoint()))
    }
}
