//! Slurm operations over a transport [`Endpoint`].
//!
//! Commands used on the cluster: `sbatch <script>` (answering
//! `Submitted batch job <id>`), `sacct -n -P -X -o JobID,State -j <ids>`
//! (answering `<id>|<STATE>` or `<id>_<task>|<STATE>` lines) and
//! `scancel <id>`. Provisioning additionally uses `singularity pull`,
//! `curl`, `ls`, `mv` and `zip`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{ClusterProfile, JobScriptSource, WorkflowRegistry};
use crate::jobscript::{generate_installed_script, render_script, scan_directives};
use crate::transport::{put_bytes, remote_parent, Clock, Endpoint, ExecResult, RemoteCommand, TransportError};

pub mod state;

pub use state::{aggregate_array, JobState};

/// Directories created under the scratch root, relative to it.
pub const MANAGED_DIRS: [&str; 4] = ["singularity_images", "slurm-scripts/jobs", "data", "logs"];

/// Consecutive failed polls tolerated by [`wait_terminal`].
pub const MAX_POLL_FAILURES: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum SlurmError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("scratch directory not writable: {0}")]
    ScratchUnwritable(String),
    #[error("pulling the image for {workflow} failed with exit code {exit_code}: {stderr}")]
    PullFailed {
        workflow: String,
        exit_code: i32,
        stderr: String,
    },
    #[error("submission rejected (exit {exit_code}): {stderr}")]
    SubmitRejected { exit_code: i32, stderr: String },
    #[error("no job id in submission output {0:?}")]
    UnparseableJobId(String),
    #[error("accounting unavailable: {0}")]
    AccountingUnavailable(String),
    #[error("unknown job state token {0:?}")]
    UnknownState(String),
    #[error("logfile missing: {0}")]
    LogMissing(String),
    #[error("output folder {0} contains no files")]
    EmptyOutput(String),
    #[error("`{command}` failed with exit code {exit_code}: {stderr}")]
    RemoteCommandFailed {
        command: String,
        exit_code: i32,
        stderr: String,
    },
    #[error("local I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Paths of the managed layout under the scratch root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScratchLayout {
    pub root: String,
}

impl ScratchLayout {
    pub fn new(root: impl Into<String>) -> Self {
        ScratchLayout {
            root: root.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn images_dir(&self) -> String {
        format!("{}/singularity_images", self.root)
    }

    pub fn jobs_dir(&self) -> String {
        format!("{}/slurm-scripts/jobs", self.root)
    }

    pub fn data_dir(&self) -> String {
        format!("{}/data", self.root)
    }

    pub fn logs_dir(&self) -> String {
        format!("{}/logs", self.root)
    }

    pub fn run_dir(&self, run_id: &str) -> String {
        format!("{}/{run_id}", self.data_dir())
    }

    pub fn image_path(&self, file_name: &str) -> String {
        format!("{}/{file_name}", self.images_dir())
    }

    pub fn job_script_path(&self, workflow: &str) -> String {
        format!("{}/{workflow}.sh", self.jobs_dir())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobKind {
    Workflow,
    ConversionArray,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: u64,
    pub kind: JobKind,
    pub script_path: String,
    /// Log of the job itself. For arrays this is the parent log, which may not exist.
    pub logfile_path: String,
    /// The `--output` pattern the job was submitted with.
    pub log_pattern: String,
    pub submitted_at: DateTime<Utc>,
    /// Task indices of an array job; empty otherwise.
    #[serde(default)]
    pub array_tasks: Vec<u32>,
}

impl JobHandle {
    /// Log of one array task.
    pub fn task_log_path(&self, task: u32) -> String {
        let id = self.job_id.to_string();
        self.log_pattern
            .replace("%A", &id)
            .replace("%a", &task.to_string())
            .replace("%j", &id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionFailure {
    pub workflow: String,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvReport {
    pub created_dirs: Vec<String>,
    /// `(workflow, image path)` for each image pulled by this call.
    pub pulled_images: Vec<(String, String)>,
    /// `(format pair, image path)` for each converter pulled by this call.
    pub pulled_converters: Vec<(String, String)>,
    pub placed_scripts: Vec<String>,
    /// True when the layout already existed before the call.
    pub refreshed: bool,
    pub failures: Vec<ProvisionFailure>,
}

impl EnvReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn pull_count(&self) -> usize {
        self.pulled_images.len() + self.pulled_converters.len()
    }
}

fn run(ep: &mut dyn Endpoint, argv: &[&str]) -> Result<ExecResult, TransportError> {
    ep.exec(&RemoteCommand::new(argv.iter().copied()))
}

fn check(ep: &mut dyn Endpoint, argv: &[&str]) -> Result<ExecResult, SlurmError> {
    let res = run(ep, argv)?;
    if res.success() {
        Ok(res)
    } else {
        Err(SlurmError::RemoteCommandFailed {
            command: argv.join(" "),
            exit_code: res.exit_code,
            stderr: res.stderr.trim().to_string(),
        })
    }
}

/// Image file name for a converter image reference, e.g.
/// `docker.io/x/convert_zarr_to_tiff:1.14.0` becomes `convert_zarr_to_tiff_1.14.0.sif`.
pub fn converter_image_file(image_ref: &str) -> String {
    let without_scheme = image_ref.split("://").last().unwrap_or(image_ref);
    let last = without_scheme.rsplit('/').next().unwrap_or(without_scheme);
    let (name, tag) = last.split_once(':').unwrap_or((last, "latest"));
    format!("{name}_{tag}.sif")
}

fn pull_uri(image_ref: &str) -> String {
    if image_ref.contains("://") {
        image_ref.to_string()
    } else {
        format!("docker://{image_ref}")
    }
}

/// Pulls `image_ref` to `target` through a temporary name unless the target exists.
/// Returns whether a pull happened.
fn ensure_image(ep: &mut dyn Endpoint, owner: &str, image_ref: &str, target: &str) -> Result<bool, SlurmError> {
    if ep.path_exists(target)? {
        return Ok(false);
    }
    let staged = format!("{}/.{}.pull", remote_parent(target), crate::transport::remote_basename(target));
    ep.remove_tree(&staged)?;
    let res = run(ep, &["singularity", "pull", &staged, &pull_uri(image_ref)])?;
    if !res.success() {
        ep.remove_tree(&staged)?;
        return Err(SlurmError::PullFailed {
            workflow: owner.to_string(),
            exit_code: res.exit_code,
            stderr: res.stderr.trim().to_string(),
        });
    }
    check(ep, &["mv", "-f", &staged, target])?;
    Ok(true)
}

/// Removes image files of `workflow` other than `keep`.
fn remove_stale_images(
    ep: &mut dyn Endpoint,
    layout: &ScratchLayout,
    registry: &WorkflowRegistry,
    workflow: &str,
    keep: &str,
) -> Result<(), SlurmError> {
    let listing = check(ep, &["ls", "-1", &layout.images_dir()])?;
    let prefix = format!("{workflow}_");
    for file in listing.stdout.lines() {
        if !file.starts_with(&prefix) || !file.ends_with(".sif") || file == keep {
            continue;
        }
        let owned_by_longer_name = registry
            .entries
            .keys()
            .any(|other| other.len() > workflow.len() && file.starts_with(&format!("{other}_")));
        if !owned_by_longer_name {
            ep.remove_tree(&layout.image_path(file))?;
        }
    }
    Ok(())
}

/// Creates the managed layout, pulls missing images and places job scripts.
///
/// Repeated calls converge: present images are not pulled again, and
/// generated scripts are rewritten with identical bytes. A failing workflow
/// is reported in [`EnvReport::failures`] without undoing the others.
pub fn init_environment(
    ep: &mut dyn Endpoint,
    profile: &ClusterProfile,
    registry: &WorkflowRegistry,
) -> Result<EnvReport, SlurmError> {
    let layout = ScratchLayout::new(&profile.scratch_dir);
    let mut report = EnvReport::default();
    for rel in MANAGED_DIRS {
        let dir = format!("{}/{rel}", layout.root);
        if ep.path_exists(&dir)? {
            continue;
        }
        ep.make_dirs(&dir)
            .map_err(|e| SlurmError::ScratchUnwritable(format!("{dir}: {e}")))?;
        report.created_dirs.push(dir);
    }
    report.refreshed = report.created_dirs.is_empty();

    for (pair, image_ref) in &profile.converters {
        let target = layout.image_path(&converter_image_file(image_ref));
        match ensure_image(ep, &pair.key(), image_ref, &target) {
            Ok(true) => report.pulled_converters.push((pair.key(), target)),
            Ok(false) => {}
            Err(SlurmError::PullFailed {
                workflow,
                exit_code,
                stderr,
            }) => report.failures.push(ProvisionFailure {
                workflow,
                exit_code,
                message: stderr,
            }),
            Err(e) => return Err(e),
        }
    }

    for (name, entry) in &registry.entries {
        let resolved = registry
            .resolve_workflow(name)
            .expect("registered workflows resolve");
        let file = resolved.image_file_name();
        let target = layout.image_path(&file);
        match ensure_image(ep, name, &resolved.image_reference, &target) {
            Ok(pulled) => {
                if pulled {
                    report.pulled_images.push((name.clone(), target.clone()));
                }
                remove_stale_images(ep, &layout, registry, name, &file)?;
            }
            Err(SlurmError::PullFailed {
                workflow,
                exit_code,
                stderr,
            }) => {
                report.failures.push(ProvisionFailure {
                    workflow,
                    exit_code,
                    message: stderr,
                });
                continue;
            }
            Err(e) => return Err(e),
        }

        let script_path = layout.job_script_path(name);
        match entry.job_script_source {
            JobScriptSource::Generated => {
                let script = generate_installed_script(&target, &entry.resources, profile);
                put_bytes(ep, render_script(&script).as_bytes(), &script_path)?;
            }
            JobScriptSource::RepoProvided => {
                let url = entry.repo_script_url();
                let staged = format!("{}/.{name}.sh.fetch", layout.jobs_dir());
                let res = run(ep, &["curl", "-fsSL", "-o", &staged, &url])?;
                if !res.success() {
                    ep.remove_tree(&staged)?;
                    report.failures.push(ProvisionFailure {
                        workflow: name.clone(),
                        exit_code: res.exit_code,
                        message: format!("fetching {url}: {}", res.stderr.trim()),
                    });
                    continue;
                }
                check(ep, &["mv", "-f", &staged, &script_path])?;
            }
        }
        report.placed_scripts.push(script_path);
    }
    Ok(report)
}

/// Task indices from an `--array` value such as `0-5`, `1,3,7` or `0-9%2`.
pub fn parse_array(raw: &str) -> Option<Vec<u32>> {
    let spec = raw.split('%').next()?;
    let mut out = BTreeSet::new();
    for part in spec.split(',') {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi): (u32, u32) = (lo.parse().ok()?, hi.parse().ok()?);
                if lo > hi {
                    return None;
                }
                out.extend(lo..=hi);
            }
            None => {
                out.insert(part.parse().ok()?);
            }
        }
    }
    if out.is_empty() {
        None
    } else {
        Some(out.into_iter().collect())
    }
}

/// Parses `Submitted batch job <id>` out of submission output.
pub fn parse_job_id(stdout: &str) -> Option<u64> {
    stdout
        .lines()
        .find_map(|l| l.trim().strip_prefix("Submitted batch job "))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|id| id.parse().ok())
        .filter(|id| *id > 0)
}

/// Uploads `script_text` (when given) to `remote_script_path` and submits it.
///
/// `env` is prepended to the submission as `env NAME=value ... sbatch <path>`.
/// The job kind and logfile follow from the script's `--array` and
/// `--output` directives.
pub fn submit_job(
    ep: &mut dyn Endpoint,
    script_text: Option<&str>,
    remote_script_path: &str,
    env: &[(String, String)],
) -> Result<JobHandle, SlurmError> {
    let script_dir = remote_parent(remote_script_path);
    let text = match script_text {
        Some(text) => {
            ep.make_dirs(&script_dir)?;
            put_bytes(ep, text.as_bytes(), remote_script_path)?;
            text.to_string()
        }
        None => check(ep, &["cat", remote_script_path])?.stdout,
    };
    let directives = scan_directives(&text);
    let directive = |keys: &[&str]| {
        directives
            .iter()
            .rev()
            .find(|(k, _)| keys.contains(&k.as_str()))
            .map(|(_, v)| v.clone())
    };
    let array_tasks = directive(&["--array", "-a"])
        .and_then(|v| parse_array(&v))
        .unwrap_or_default();
    let kind = if array_tasks.is_empty() {
        JobKind::Workflow
    } else {
        JobKind::ConversionArray
    };
    let log_pattern = match directive(&["--output", "-o"]) {
        Some(p) if p.starts_with('/') => p,
        Some(p) => format!("{script_dir}/{p}"),
        None if kind == JobKind::ConversionArray => format!("{script_dir}/slurm-%A_%a.out"),
        None => format!("{script_dir}/slurm-%j.out"),
    };

    let mut argv: Vec<String> = Vec::new();
    if !env.is_empty() {
        argv.push("env".into());
        argv.extend(env.iter().map(|(k, v)| format!("{k}={v}")));
    }
    argv.push("sbatch".into());
    argv.push(remote_script_path.to_string());
    let res = ep.exec(&RemoteCommand::new(argv).in_dir(script_dir.clone()))?;
    if !res.success() {
        return Err(SlurmError::SubmitRejected {
            exit_code: res.exit_code,
            stderr: format!("{}{}", res.stdout, res.stderr).trim().to_string(),
        });
    }
    let job_id = parse_job_id(&res.stdout).ok_or_else(|| SlurmError::UnparseableJobId(res.stdout.clone()))?;
    let id = job_id.to_string();
    let logfile_path = log_pattern
        .replace("_%a", "")
        .replace("%a", "")
        .replace("%A", &id)
        .replace("%j", &id);
    Ok(JobHandle {
        job_id,
        kind,
        script_path: remote_script_path.to_string(),
        logfile_path,
        log_pattern,
        submitted_at: Utc::now(),
        array_tasks,
    })
}

/// Raw accounting rows per job id: `(task index, state)`, task `None` for plain jobs.
pub type AccountingRows = BTreeMap<u64, Vec<(Option<u32>, JobState)>>;

/// Parses `sacct -n -P` output. Pending bracket ranges such as `7_[2-5]` expand to tasks.
pub fn parse_accounting(stdout: &str) -> Result<AccountingRows, SlurmError> {
    let mut rows: AccountingRows = BTreeMap::new();
    for line in stdout.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let Some((job, token)) = line.split_once('|') else {
            return Err(SlurmError::AccountingUnavailable(format!("malformed line {line:?}")));
        };
        let token = token.split('|').next().unwrap_or(token);
        let state = JobState::from_token(token).ok_or_else(|| SlurmError::UnknownState(token.to_string()))?;
        let malformed = || SlurmError::AccountingUnavailable(format!("malformed job id in {line:?}"));
        match job.split_once('_') {
            None => {
                let id: u64 = job.parse().map_err(|_| malformed())?;
                rows.entry(id).or_default().push((None, state));
            }
            Some((id, task)) => {
                let id: u64 = id.parse().map_err(|_| malformed())?;
                let entry = rows.entry(id).or_default();
                if let Some(range) = task.strip_prefix('[') {
                    let range = range.trim_end_matches(']');
                    let tasks = parse_array(range).ok_or_else(malformed)?;
                    entry.extend(tasks.into_iter().map(|t| (Some(t), state)));
                } else {
                    entry.push((Some(task.parse().map_err(|_| malformed())?), state));
                }
            }
        }
    }
    Ok(rows)
}

/// Runs one accounting query for `ids`.
pub fn query_accounting(ep: &mut dyn Endpoint, ids: &[u64]) -> Result<AccountingRows, SlurmError> {
    let list = ids.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let res = run(ep, &["sacct", "-n", "-P", "-X", "-o", "JobID,State", "-j", &list])
        .map_err(|e| SlurmError::AccountingUnavailable(e.to_string()))?;
    if !res.success() {
        return Err(SlurmError::AccountingUnavailable(format!(
            "sacct exited {}: {}",
            res.exit_code,
            res.stderr.trim()
        )));
    }
    parse_accounting(&res.stdout)
}

/// Current state of every handle, from a single accounting query.
///
/// Jobs or array tasks absent from accounting are reported as pending.
pub fn poll_jobs(ep: &mut dyn Endpoint, handles: &[JobHandle]) -> Result<BTreeMap<u64, JobState>, SlurmError> {
    if handles.is_empty() {
        return Ok(BTreeMap::new());
    }
    let ids: Vec<u64> = handles.iter().map(|h| h.job_id).collect();
    let rows = query_accounting(ep, &ids)?;
    let mut states = BTreeMap::new();
    for h in handles {
        let job_rows = rows.get(&h.job_id).map(Vec::as_slice).unwrap_or(&[]);
        let state = if h.kind == JobKind::ConversionArray || job_rows.iter().any(|(t, _)| t.is_some()) {
            let mut tasks: BTreeMap<u32, JobState> = h.array_tasks.iter().map(|t| (*t, JobState::Pending)).collect();
            for (t, s) in job_rows {
                if let Some(t) = t {
                    tasks.insert(*t, *s);
                }
            }
            aggregate_array(&tasks.into_values().collect::<Vec<_>>())
        } else {
            job_rows.last().map(|(_, s)| *s).unwrap_or(JobState::Pending)
        };
        states.insert(h.job_id, state);
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaitOutcome {
    pub states: BTreeMap<u64, JobState>,
    /// Set when the deadline passed before every job was terminal.
    pub deadline_exceeded: bool,
    pub polls: u32,
}

/// Polls every `interval` until all handles are terminal or `deadline` has elapsed.
///
/// Up to two consecutive failed polls are tolerated; the third is returned
/// as an error.
pub fn wait_terminal(
    ep: &mut dyn Endpoint,
    clock: &dyn Clock,
    handles: &[JobHandle],
    interval: Duration,
    deadline: Duration,
) -> Result<WaitOutcome, SlurmError> {
    let started = clock.now();
    let mut failures = 0;
    let mut polls = 0;
    let mut states: BTreeMap<u64, JobState> = handles.iter().map(|h| (h.job_id, JobState::Pending)).collect();
    loop {
        match poll_jobs(ep, handles) {
            Ok(s) => {
                failures = 0;
                polls += 1;
                states = s;
                if states.values().all(|s| s.is_terminal()) {
                    return Ok(WaitOutcome {
                        states,
                        deadline_exceeded: false,
                        polls,
                    });
                }
            }
            Err(e @ (SlurmError::AccountingUnavailable(_) | SlurmError::Transport(_))) => {
                failures += 1;
                log::warn!("poll failed ({failures}/{MAX_POLL_FAILURES}): {e}");
                if failures >= MAX_POLL_FAILURES {
                    return Err(e);
                }
            }
            Err(e) => return Err(e),
        }
        let elapsed = clock.now().saturating_sub(started);
        if elapsed >= deadline {
            return Ok(WaitOutcome {
                states,
                deadline_exceeded: true,
                polls,
            });
        }
        clock.sleep(interval.min(deadline - elapsed));
    }
}

/// Cancels a job. Cancelling a finished job succeeds without effect.
pub fn cancel_job(ep: &mut dyn Endpoint, handle: &JobHandle) -> Result<(), SlurmError> {
    let id = handle.job_id.to_string();
    let res = run(ep, &["scancel", &id])?;
    if res.success() || res.stderr.contains("already completing or completed") {
        Ok(())
    } else {
        Err(SlurmError::RemoteCommandFailed {
            command: format!("scancel {id}"),
            exit_code: res.exit_code,
            stderr: res.stderr.trim().to_string(),
        })
    }
}

/// Copies the job's logfile into `local_dir` as `omero-job-<id>.log`.
///
/// For arrays, per-task logs are copied as `omero-job-<id>_<task>.log`
/// alongside the parent log when present.
pub fn fetch_logfile(ep: &mut dyn Endpoint, handle: &JobHandle, local_dir: &Path) -> Result<Vec<PathBuf>, SlurmError> {
    std::fs::create_dir_all(local_dir)?;
    let mut fetched = Vec::new();
    let mut sources = vec![(handle.logfile_path.clone(), format!("omero-job-{}.log", handle.job_id))];
    for t in &handle.array_tasks {
        sources.push((handle.task_log_path(*t), format!("omero-job-{}_{t}.log", handle.job_id)));
    }
    for (remote, name) in sources {
        if !ep.path_exists(&remote)? {
            continue;
        }
        let local = local_dir.join(name);
        ep.get_file(&remote, &local)?;
        fetched.push(local);
    }
    if fetched.is_empty() {
        return Err(SlurmError::LogMissing(handle.logfile_path.clone()));
    }
    Ok(fetched)
}

/// Zips `run_out_dir` on the cluster and copies the archive to `local_dir/archive_name`.
///
/// Entry names are relative to the out dir. The archive is written next to
/// the out dir, not inside it.
pub fn fetch_results(
    ep: &mut dyn Endpoint,
    run_out_dir: &str,
    local_dir: &Path,
    archive_name: &str,
) -> Result<PathBuf, SlurmError> {
    let listing = check(ep, &["ls", "-A", run_out_dir])?;
    if listing.stdout.trim().is_empty() {
        return Err(SlurmError::EmptyOutput(run_out_dir.to_string()));
    }
    let remote_archive = format!("{}/{archive_name}", remote_parent(run_out_dir));
    ep.remove_tree(&remote_archive)?;
    let res = ep.exec(&RemoteCommand::new(["zip", "-q", "-r", "-D", &remote_archive, "."]).in_dir(run_out_dir))?;
    match res.exit_code {
        0 => {}
        12 => return Err(SlurmError::EmptyOutput(run_out_dir.to_string())),
        code => {
            return Err(SlurmError::RemoteCommandFailed {
                command: format!("zip {remote_archive}"),
                exit_code: code,
                stderr: res.stderr.trim().to_string(),
            })
        }
    }
    std::fs::create_dir_all(local_dir)?;
    let local = local_dir.join(archive_name);
    ep.get_file(&remote_archive, &local)?;
    Ok(local)
}

/// Removes each path that exists and returns the ones removed.
pub fn cleanup_run(ep: &mut dyn Endpoint, paths: &[String]) -> Result<Vec<String>, SlurmError> {
    let mut removed = Vec::new();
    for p in paths {
        if ep.remove_tree(p)? {
            removed.push(p.clone());
        }
    }
    Ok(removed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_id_grammar() {
        assert_eq!(parse_job_id("Submitted batch job 42\n"), Some(42));
        assert_eq!(parse_job_id("sbatch: error: Invalid partition\n"), None);
        assert_eq!(parse_job_id("Submitted batch job x\n"), None);
    }

    #[test]
    fn accounting_grammar() {
        let rows = parse_accounting("42|COMPLETED\n43_0|RUNNING\n43_[1-2]|PENDING\n").unwrap();
        assert_eq!(rows[&42], vec![(None, JobState::Completed)]);
        assert_eq!(
            rows[&43],
            vec![
                (Some(0), JobState::Running),
                (Some(1), JobState::Pending),
                (Some(2), JobState::Pending)
            ]
        );
        assert!(matches!(parse_accounting("42|WEIRD\n"), Err(SlurmError::UnknownState(t)) if t == "WEIRD"));
    }

    #[test]
    fn converter_file_names() {
        assert_eq!(
            converter_image_file("docker.io/x/convert_zarr_to_tiff:1.14.0"),
            "convert_zarr_to_tiff_1.14.0.sif"
        );
        assert_eq!(converter_image_file("docker://y/conv"), "conv_latest.sif");
    }
}
