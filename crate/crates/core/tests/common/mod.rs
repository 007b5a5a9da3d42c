#![allow(dead_code)]

pub mod props;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::json;
use slurmbridge::config::{parse_config, ClusterConfig};
use slurmbridge::descriptor::{parse_descriptor, ParamValues, WorkflowDescriptor};
use slurmbridge::orchestrator::{InputItem, RunContext, RunOptions};
use slurmbridge::sim::{SimEndpoint, SimHandle, Topology};
use slurmbridge::slurm::{init_environment, EnvReport};
use slurmbridge::transport::{
    sha256_hex, Connector, Endpoint, EndpointPool, ExecResult, RemoteCommand, TransferReport, TransportError,
};

pub const SCRATCH: &str = "/scratch";

pub const CONFIG: &str = "\
[ssh]
host = sim.example.org
user = tester

[cluster]
scratch_dir = /scratch

[converters]
zarr_to_tiff = docker.io/cellularimagingcf/convert_zarr_to_tiff:1.14.0

[workflow.cellpose]
repo = https://github.com/TorecLuik/W_NucleiSegmentation-Cellpose
version = v1.2.7
";

pub fn config() -> ClusterConfig {
    parse_config(CONFIG).unwrap()
}

pub fn descriptor() -> WorkflowDescriptor {
    let text = json!({
        "name": "NucleiSegmentation-Cellpose",
        "schema-version": "cytomine-0.1",
        "container-image": {"image": "torecluik/w_nucleisegmentation-cellpose", "version": "v1.2.7"},
        "command-line": "python wrapper.py INFOLDER OUTFOLDER GTFOLDER [DIAMETER] [USE_GPU]",
        "inputs": [
            {"id": "diameter", "name": "Diameter", "type": "Number", "command-line-flag": "--diameter",
             "optional": true, "default-value": 30},
            {"id": "use_gpu", "name": "Use GPU", "type": "Boolean", "command-line-flag": "--use_gpu",
             "optional": true, "default-value": false}
        ]
    });
    parse_descriptor(&text.to_string()).unwrap()
}

/// Records every remote file (path and checksum) just before its tree is removed.
#[derive(Clone, Default)]
pub struct RemovalLog(Arc<Mutex<BTreeMap<String, String>>>);

impl RemovalLog {
    pub fn files(&self) -> BTreeMap<String, String> {
        self.0.lock().unwrap().clone()
    }
}

struct RecordingEndpoint {
    inner: SimEndpoint,
    sim: SimHandle,
    log: RemovalLog,
}

impl Endpoint for RecordingEndpoint {
    fn exec(&mut self, command: &RemoteCommand) -> Result<ExecResult, TransportError> {
        self.inner.exec(command)
    }
    fn put_file(&mut self, local: &Path, remote: &str) -> Result<TransferReport, TransportError> {
        self.inner.put_file(local, remote)
    }
    fn get_file(&mut self, remote: &str, local: &Path) -> Result<TransferReport, TransportError> {
        self.inner.get_file(remote, local)
    }
    fn path_exists(&mut self, remote: &str) -> Result<bool, TransportError> {
        self.inner.path_exists(remote)
    }
    fn make_dirs(&mut self, remote: &str) -> Result<(), TransportError> {
        self.inner.make_dirs(remote)
    }
    fn remove_tree(&mut self, remote: &str) -> Result<bool, TransportError> {
        {
            let cluster = self.sim.lock();
            let mut log = self.log.0.lock().unwrap();
            for f in cluster.fs.walk_files(remote) {
                let sum = sha256_hex(cluster.fs.read(&f).unwrap());
                log.insert(f, sum);
            }
        }
        self.inner.remove_tree(remote)
    }
}

struct RecordingConnector {
    sim: SimHandle,
    log: RemovalLog,
}

impl Connector for RecordingConnector {
    fn connect(&self) -> Result<Box<dyn Endpoint>, TransportError> {
        Ok(Box::new(RecordingEndpoint {
            inner: self.sim.endpoint(),
            sim: self.sim.clone(),
            log: self.log.clone(),
        }))
    }
}

pub struct Harness {
    pub sim: SimHandle,
    pub config: ClusterConfig,
    pub ctx: RunContext,
    pub removed: RemovalLog,
    pub state_dir: tempfile::TempDir,
    pub inputs_dir: tempfile::TempDir,
    pub output_dir: tempfile::TempDir,
    pub init_report: EnvReport,
}

impl Harness {
    pub fn new() -> Harness {
        Self::with(config(), Topology::default())
    }

    pub fn with(config: ClusterConfig, topology: Topology) -> Harness {
        let sim = SimHandle::with_topology(topology);
        let init_report = init_environment(&mut sim.endpoint(), &config.profile, &config.registry).unwrap();
        let removed = RemovalLog::default();
        let connector = Arc::new(RecordingConnector {
            sim: sim.clone(),
            log: removed.clone(),
        });
        let pool = Arc::new(EndpointPool::new(connector, 4));
        let state_dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(
            config.profile.clone(),
            config.registry.clone(),
            pool,
            Arc::new(sim.clock()),
            state_dir.path(),
        );
        Harness {
            sim,
            config,
            ctx,
            removed,
            state_dir,
            inputs_dir: tempfile::tempdir().unwrap(),
            output_dir: tempfile::tempdir().unwrap(),
            init_report,
        }
    }

    pub fn options(&self) -> RunOptions {
        let mut o = RunOptions::new(self.output_dir.path());
        o.poll_interval = Duration::from_secs(5);
        o
    }

    pub fn tiff_inputs(&self, n: usize) -> Vec<InputItem> {
        (0..n)
            .map(|i| {
                let p = self.inputs_dir.path().join(format!("img{i:02}.tiff"));
                std::fs::write(&p, format!("II*\0 synthetic image {i}\n")).unwrap();
                InputItem::detect(&p).unwrap()
            })
            .collect()
    }

    pub fn zarr_inputs(&self, n: usize) -> Vec<InputItem> {
        (0..n)
            .map(|i| {
                let root = self.inputs_dir.path().join(format!("plate{i}.zarr"));
                std::fs::create_dir_all(root.join("0")).unwrap();
                std::fs::write(root.join(".zgroup"), "{\"zarr_format\": 2}").unwrap();
                std::fs::write(root.join("0/0.0"), format!("chunk {i}")).unwrap();
                InputItem::detect(&root).unwrap()
            })
            .collect()
    }

    pub fn staging_is_empty(&self) -> bool {
        let staging = self.state_dir.path().join("staging");
        !staging.exists() || std::fs::read_dir(staging).unwrap().next().is_none()
    }

    pub fn remote_exists(&self, path: &str) -> bool {
        self.sim.lock().fs.exists(path)
    }

    pub fn workflow_submissions(&self) -> usize {
        self.sim
            .lock()
            .jobs()
            .filter(|j| j.script_path.ends_with("/job.sh"))
            .count()
    }
}

pub fn no_values() -> ParamValues {
    ParamValues::new()
}

/// Entry name to sha256 for every file in a local zip.
pub fn zip_checksums(path: &Path) -> BTreeMap<String, String> {
    let mut archive = zip::ZipArchive::new(std::fs::File::open(path).unwrap()).unwrap();
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i).unwrap();
        if entry.is_dir() {
            continue;
        }
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).unwrap();
        out.insert(entry.name().trim_start_matches("./").to_string(), sha256_hex(&bytes));
    }
    out
}

pub fn local_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect())
        .unwrap_or_default();
    out.sort();
    out
}
