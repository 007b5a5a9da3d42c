//! Run records and the plain-text run journal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::descriptor::ParamValues;
use crate::slurm::{JobHandle, JobState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RunState {
    Preparing,
    Transferring,
    Queued,
    Running,
    Retrieving,
    Done,
    Failed,
    PartialFailure,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Done | RunState::Failed | RunState::PartialFailure)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Preparing => "Preparing",
            RunState::Transferring => "Transferring",
            RunState::Queued => "Queued",
            RunState::Running => "Running",
            RunState::Retrieving => "Retrieving",
            RunState::Done => "Done",
            RunState::Failed => "Failed",
            RunState::PartialFailure => "PartialFailure",
        }
    }

    pub fn parse(s: &str) -> Option<RunState> {
        [
            RunState::Preparing,
            RunState::Transferring,
            RunState::Queued,
            RunState::Running,
            RunState::Retrieving,
            RunState::Done,
            RunState::Failed,
            RunState::PartialFailure,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for RunState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureStage {
    TransferFailed,
    ConversionFailed,
    WorkflowFailed,
    RetrievalFailed,
}

impl fmt::Display for FailureStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub stage: FailureStage,
    pub message: String,
    /// A fetched logfile, when one could be retrieved.
    pub logfile: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRun {
    pub index: usize,
    pub items: Vec<String>,
    pub remote_dir: String,
    pub conversion_handle: Option<JobHandle>,
    pub workflow_handle: Option<JobHandle>,
    /// Last observed state of the workflow job; `None` before submission.
    pub state: Option<JobState>,
    /// Remote script the workflow job is submitted from.
    #[serde(default)]
    pub workflow_script: String,
    /// Environment prepended to the workflow submission.
    #[serde(default)]
    pub workflow_env: Vec<(String, String)>,
    pub result_zip: Option<PathBuf>,
    pub logs: Vec<PathBuf>,
    pub failure: Option<BatchFailure>,
}

impl BatchRun {
    pub fn succeeded(&self) -> bool {
        self.state == Some(JobState::Completed) && self.failure.is_none()
    }

    pub fn in_dir(&self) -> String {
        format!("{}/in", self.remote_dir)
    }

    pub fn out_dir(&self) -> String {
        format!("{}/out", self.remote_dir)
    }

    pub fn gt_dir(&self) -> String {
        format!("{}/gt", self.remote_dir)
    }

    pub(crate) fn fail(&mut self, stage: FailureStage, message: impl Into<String>) {
        if self.failure.is_none() {
            self.failure = Some(BatchFailure {
                stage,
                message: message.into(),
                logfile: None,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub at: DateTime<Utc>,
    pub stage: RunState,
    pub detail: String,
}

impl StageEntry {
    pub fn journal_line(&self) -> String {
        format!(
            "{} {} {}",
            self.at.to_rfc3339_opts(SecondsFormat::Millis, true),
            self.stage,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub workflow: String,
    pub workflow_version: String,
    pub values: ParamValues,
    /// Local path of every input item, by id.
    pub inputs: BTreeMap<String, PathBuf>,
    pub skip_conversion: bool,
    pub batches: Vec<BatchRun>,
    pub overall_state: RunState,
    pub stage_history: Vec<StageEntry>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub output_dir: PathBuf,
    pub output_artifacts: Vec<PathBuf>,
    #[serde(default)]
    pub imported: Vec<PathBuf>,
    /// Set once cancellation was requested.
    #[serde(default)]
    pub cancelled: bool,
}

/// Outcome of a run that did not finish `Done`.
#[derive(Debug, Clone, thiserror::Error)]
#[error("run {run_id} ended {state}: {summary}")]
pub struct RunFailure {
    pub run_id: String,
    pub state: RunState,
    pub summary: String,
    pub failures: Vec<(usize, BatchFailure)>,
}

impl RunRecord {
    /// Final state implied by the batch outcomes.
    pub fn aggregate_state(&self) -> RunState {
        let ok = self.batches.iter().filter(|b| b.succeeded()).count();
        match ok {
            _ if self.batches.is_empty() => RunState::Done,
            n if n == self.batches.len() => RunState::Done,
            0 => RunState::Failed,
            _ => RunState::PartialFailure,
        }
    }

    pub fn result_zips(&self) -> Vec<&Path> {
        self.batches.iter().filter_map(|b| b.result_zip.as_deref()).collect()
    }

    pub fn failures(&self) -> Vec<(usize, &BatchFailure)> {
        self.batches
            .iter()
            .filter_map(|b| b.failure.as_ref().map(|f| (b.index, f)))
            .collect()
    }

    /// `Ok` for `Done` runs, otherwise the per-batch failures.
    pub fn into_result(self) -> Result<RunRecord, RunFailure> {
        if self.overall_state == RunState::Done {
            return Ok(self);
        }
        let failures: Vec<(usize, BatchFailure)> = self
            .batches
            .iter()
            .filter_map(|b| b.failure.clone().map(|f| (b.index, f)))
            .collect();
        let summary = failures
            .iter()
            .map(|(i, f)| format!("batch{i} {}: {}", f.stage, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        Err(RunFailure {
            run_id: self.run_id,
            state: self.overall_state,
            summary,
            failures,
        })
    }

    /// The record as JSON with run id, job ids and timestamps masked, for
    /// comparing runs that differ only in identity.
    pub fn redacted(&self) -> serde_json::Value {
        let mut job_ids = BTreeSet::new();
        for b in &self.batches {
            for h in [&b.conversion_handle, &b.workflow_handle].into_iter().flatten() {
                job_ids.insert(h.job_id);
            }
        }
        let mut value = serde_json::to_value(self).expect("record serializes");
        redact(&mut value, &self.run_id, &job_ids);
        value
    }
}

fn redact(value: &mut serde_json::Value, run_id: &str, job_ids: &BTreeSet<u64>) {
    use serde_json::Value;
    match value {
        Value::String(s) => {
            let mut out = s.replace(run_id, "<run>");
            for id in job_ids.iter().rev() {
                out = out
                    .replace(&format!("omero-job-{id}"), "omero-job-<job>")
                    .replace(&format!("job {id}"), "job <job>");
            }
            *s = out;
        }
        Value::Array(items) => items.iter_mut().for_each(|v| redact(v, run_id, job_ids)),
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                match k.as_str() {
                    "at" | "started_at" | "finished_at" | "submitted_at" => *v = Value::Null,
                    "job_id" => *v = Value::from(0),
                    _ => redact(v, run_id, job_ids),
                }
            }
        }
        _ => {}
    }
}

/// Where run records and journals live.
#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

impl RunStore {
    pub fn new(state_dir: &Path) -> Self {
        RunStore {
            dir: state_dir.join("runs"),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record_path(&self, run_id: &str) -> PathBuf {
        self.dir.join(format!("{run_id}.json"))
    }

    pub fn journal_path(&self, run_id: &str) -> PathBuf {
        self.dir.join(format!("{run_id}.journal"))
    }

    pub fn save(&self, record: &RunRecord) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.record_path(&record.run_id);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(record).map_err(std::io::Error::other)?)?;
        std::fs::rename(tmp, path)
    }

    pub fn load(&self, run_id: &str) -> std::io::Result<RunRecord> {
        let text = std::fs::read(self.record_path(run_id))?;
        serde_json::from_slice(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.record_path(run_id).is_file()
    }

    pub fn append_journal(&self, run_id: &str, entry: &StageEntry) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.journal_path(run_id))?;
        writeln!(f, "{}", entry.journal_line())
    }

    pub fn read_journal(&self, run_id: &str) -> std::io::Result<Vec<String>> {
        Ok(std::fs::read_to_string(self.journal_path(run_id))?
            .lines()
            .map(str::to_string)
            .collect())
    }

    /// Run ids with a stored record, sorted.
    pub fn list(&self) -> std::io::Result<Vec<String>> {
        let Ok(entries) = std::fs::read_dir(&self.dir) else {
            return Ok(Vec::new());
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                e.file_name()
                    .to_string_lossy()
                    .strip_suffix(".json")
                    .map(str::to_string)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}
