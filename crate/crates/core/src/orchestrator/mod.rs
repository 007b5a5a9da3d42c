//! End-to-end workflow runs.
//!
//! A run packs local inputs per batch, copies them to
//! `data/<run-id>/batch<k>/` on the cluster, unpacks them into the
//! `in`/`out`/`gt` layout, submits an optional conversion array and the
//! workflow job, polls every outstanding job in one loop, retrieves results
//! and logs, and finally removes the run's remote data.
//!
//! A failing batch does not stop its siblings. Per-batch failures are
//! recorded in the [`RunRecord`]; only problems detected before anything is
//! sent to the cluster are returned as errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::config::{ClusterProfile, ConfigError, FormatPair, JobScriptSource, WorkflowInput, WorkflowRegistry};
use crate::descriptor::{env_assignments, render_cli_args, validate_values, DescriptorError, ParamValues, WorkflowDescriptor};
use crate::jobscript::{generate_conversion_script, generate_workflow_script, render_script, JobScriptError, RunPaths};
use crate::slurm::{
    cancel_job, cleanup_run, converter_image_file, fetch_logfile, fetch_results, poll_jobs, submit_job, JobHandle,
    JobState, ScratchLayout, SlurmError, MAX_POLL_FAILURES,
};
use crate::transport::{put_bytes, Clock, Endpoint, EndpointPool, RemoteCommand, TransportError};

mod import;
pub mod inputs;
pub mod record;

pub use import::{import_results, OutputMode};
pub use inputs::{pack_inputs, plan_batches, scan_input_dir, BatchPlan, InputError, InputFormat, InputItem};
pub use record::{BatchFailure, BatchRun, FailureStage, RunFailure, RunRecord, RunState, RunStore, StageEntry};

/// Default number of batches transferred or retrieved at once.
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    JobScript(#[from] JobScriptError),
    #[error("no converter configured for {0}")]
    NoConverter(FormatPair),
    #[error("workflow {workflow} is not installed on the cluster ({image} missing); run init first")]
    NotInitialized { workflow: String, image: String },
    #[error("unknown run id {0}")]
    UnknownRun(String),
    #[error("run {0} has no result archives")]
    NoResults(String),
    #[error("refusing to overwrite {0}")]
    Collision(PathBuf),
    #[error(transparent)]
    Slurm(#[from] SlurmError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("cannot persist run state: {0}")]
    Persist(#[from] std::io::Error),
}

/// Receives every journal entry as it is written, tagged with the run id.
pub type EventSink = Arc<dyn Fn(&str, &StageEntry) + Send + Sync>;

/// Everything a run needs besides its inputs.
pub struct RunContext {
    pub profile: ClusterProfile,
    pub registry: WorkflowRegistry,
    pub pool: Arc<EndpointPool>,
    pub clock: Arc<dyn Clock>,
    pub store: RunStore,
    /// Parent of the per-run local staging directories.
    pub staging_root: PathBuf,
    sink: Option<EventSink>,
}

impl RunContext {
    pub fn new(
        profile: ClusterProfile,
        registry: WorkflowRegistry,
        pool: Arc<EndpointPool>,
        clock: Arc<dyn Clock>,
        state_dir: &Path,
    ) -> Self {
        RunContext {
            profile,
            registry,
            pool,
            clock,
            store: RunStore::new(state_dir),
            staging_root: state_dir.join("staging"),
            sink: None,
        }
    }

    pub fn with_sink(mut self, sink: EventSink) -> Self {
        self.sink = Some(sink);
        self
    }

    fn layout(&self) -> ScratchLayout {
        ScratchLayout::new(&self.profile.scratch_dir)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub skip_conversion: bool,
    /// Batches transferred or retrieved concurrently.
    pub parallelism: usize,
    /// Local folder receiving result archives and logs.
    pub output_dir: PathBuf,
    pub poll_interval: Duration,
    /// Jobs still running after this long are cancelled.
    pub deadline: Option<Duration>,
    /// Return once jobs are queued instead of waiting for them.
    pub detach: bool,
}

impl RunOptions {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            skip_conversion: false,
            parallelism: DEFAULT_PARALLELISM,
            output_dir: output_dir.into(),
            poll_interval: Duration::from_secs(crate::config::DEFAULT_POLL_INTERVAL_S),
            deadline: None,
            detach: false,
        }
    }
}

/// Runs `f` over `items` with at most `parallelism` threads, keeping input order.
fn fan_out<T: Sync, R: Send>(parallelism: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = parallelism.clamp(1, items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

fn shell_join(tokens: &[String]) -> String {
    tokens
        .iter()
        .map(|t| shlex::try_quote(t).map(|q| q.into_owned()).unwrap_or_else(|_| t.clone()))
        .collect::<Vec<_>>()
        .join(" ")
}

struct Run<'a> {
    ctx: &'a RunContext,
    record: RunRecord,
    poll_interval: Duration,
    deadline: Option<Duration>,
    parallelism: usize,
}

impl<'a> Run<'a> {
    fn note(&mut self, stage: RunState, detail: impl Into<String>) {
        let entry = StageEntry {
            at: Utc::now(),
            stage,
            detail: detail.into(),
        };
        if let Err(e) = self.ctx.store.append_journal(&self.record.run_id, &entry) {
            log::warn!("cannot append to journal: {e}");
        }
        if let Some(sink) = &self.ctx.sink {
            sink(&self.record.run_id, &entry);
        }
        self.record.stage_history.push(entry);
    }

    fn enter(&mut self, stage: RunState, detail: impl Into<String>) {
        self.record.overall_state = stage;
        self.note(stage, detail);
    }

    fn save(&self) -> Result<(), RunError> {
        Ok(self.ctx.store.save(&self.record)?)
    }

    fn transfer(&mut self, items: &[InputItem]) -> Result<(), RunError> {
        self.enter(RunState::Transferring, format!("{} batches", self.record.batches.len()));
        std::fs::create_dir_all(&self.ctx.staging_root)?;
        let staging = tempfile::Builder::new()
            .prefix(&format!("{}-", self.record.run_id))
            .tempdir_in(&self.ctx.staging_root)?;
        let ctx = self.ctx;
        let jobs: Vec<(usize, String, Vec<&InputItem>)> = self
            .record
            .batches
            .iter()
            .map(|b| {
                let members = b
                    .items
                    .iter()
                    .map(|id| items.iter().find(|i| &i.id == id).expect("planned from items"))
                    .collect();
                (b.index, b.remote_dir.clone(), members)
            })
            .collect();
        let results = fan_out(self.parallelism, &jobs, |(index, remote_dir, members)| {
            transfer_batch(ctx, &staging.path().join(format!("batch{index}")), remote_dir, members)
        });
        for (batch, result) in self.record.batches.iter_mut().zip(results) {
            if let Err(msg) = result {
                batch.fail(FailureStage::TransferFailed, msg);
            }
        }
        for i in 0..self.record.batches.len() {
            let b = &self.record.batches[i];
            let detail = match &b.failure {
                Some(f) => format!("batch{i} transfer failed: {}", f.message),
                None => format!("batch{i} transferred {} items", b.items.len()),
            };
            self.note(RunState::Transferring, detail);
        }
        staging.close()?;
        Ok(())
    }

    fn submit_workflow(&mut self, ep: &mut dyn Endpoint, i: usize) {
        let b = &self.record.batches[i];
        let result = submit_job(ep, None, &b.workflow_script, &b.workflow_env);
        let stage = self.record.overall_state;
        match result {
            Ok(h) => {
                let detail = format!("batch{i} workflow job {} submitted", h.job_id);
                let b = &mut self.record.batches[i];
                b.workflow_handle = Some(h);
                b.state = Some(JobState::Pending);
                self.note(stage, detail);
            }
            Err(e) => {
                self.record.batches[i].fail(FailureStage::WorkflowFailed, format!("submission failed: {e}"));
                self.note(stage, format!("batch{i} workflow submission failed: {e}"));
            }
        }
    }

    fn submit(
        &mut self,
        ep: &mut dyn Endpoint,
        descriptor: &WorkflowDescriptor,
        values: &ParamValues,
        conversion: Option<&(FormatPair, String)>,
        items: &[InputItem],
    ) -> Result<(), RunError> {
        let entry = self.ctx.registry.get(&self.record.workflow)?.clone();
        let resolved = self.ctx.registry.resolve_workflow(&self.record.workflow)?;
        let layout = self.ctx.layout();
        self.enter(RunState::Queued, "submitting jobs");
        let image_file = layout.image_path(&resolved.image_file_name());
        for i in 0..self.record.batches.len() {
            if self.record.batches[i].failure.is_some() {
                continue;
            }
            let b = &self.record.batches[i];
            let paths = RunPaths {
                in_dir: b.in_dir(),
                out_dir: b.out_dir(),
                gt_dir: b.gt_dir(),
                image_file: image_file.clone(),
            };
            let (script, env) = match entry.job_script_source {
                JobScriptSource::Generated => {
                    let script = generate_workflow_script(descriptor, &entry.resources, values, &paths, &self.ctx.profile);
                    let path = format!("{}/job.sh", b.remote_dir);
                    if let Err(e) = put_bytes(ep, render_script(&script).as_bytes(), &path) {
                        self.record.batches[i].fail(FailureStage::WorkflowFailed, format!("uploading job script: {e}"));
                        continue;
                    }
                    (path, Vec::new())
                }
                JobScriptSource::RepoProvided => {
                    let mut env = env_assignments(descriptor, values);
                    env.push(("IN_PATH".into(), paths.in_dir.clone()));
                    env.push(("OUT_PATH".into(), paths.out_dir.clone()));
                    env.push(("GT_PATH".into(), paths.gt_dir.clone()));
                    env.push(("WORKFLOW_ARGS".into(), shell_join(&render_cli_args(descriptor, values))));
                    (layout.job_script_path(&self.record.workflow), env)
                }
            };
            let b = &mut self.record.batches[i];
            b.workflow_script = script;
            b.workflow_env = env;

            let zarr_count = b
                .items
                .iter()
                .filter(|id| items.iter().any(|it| &it.id == *id && it.format == InputFormat::Zarr))
                .count();
            match conversion {
                Some((pair, converter)) if zarr_count > 0 => {
                    let text = generate_conversion_script(zarr_count, pair, converter, &b.in_dir(), &self.ctx.profile)
                        .map(|s| render_script(&s))?;
                    let path = format!("{}/convert.sh", b.remote_dir);
                    match submit_job(ep, Some(&text), &path, &[]) {
                        Ok(h) => {
                            let detail = format!("batch{i} conversion job {} submitted ({zarr_count} tasks)", h.job_id);
                            self.record.batches[i].conversion_handle = Some(h);
                            self.note(RunState::Queued, detail);
                        }
                        Err(e) => {
                            self.record.batches[i]
                                .fail(FailureStage::ConversionFailed, format!("submission failed: {e}"));
                            self.note(RunState::Queued, format!("batch{i} conversion submission failed: {e}"));
                        }
                    }
                }
                _ => self.submit_workflow(ep, i),
            }
        }
        let submitted = self
            .record
            .batches
            .iter()
            .filter(|b| b.conversion_handle.is_some() || b.workflow_handle.is_some())
            .count();
        self.note(RunState::Queued, format!("{submitted} of {} batches submitted", self.record.batches.len()));
        self.save()
    }

    /// Handles to poll: a pending conversion, or a workflow job not yet terminal.
    fn pollable(&self) -> Vec<(usize, JobHandle)> {
        let mut out = Vec::new();
        for (i, b) in self.record.batches.iter().enumerate() {
            match (&b.conversion_handle, &b.workflow_handle) {
                (_, Some(w)) if !b.state.is_some_and(JobState::is_terminal) => out.push((i, w.clone())),
                (Some(c), None) if b.failure.is_none() => out.push((i, c.clone())),
                _ => {}
            }
        }
        out
    }

    fn cancel_outstanding(&mut self, ep: &mut dyn Endpoint, reason: &str) {
        self.record.cancelled = true;
        for (i, h) in self.pollable() {
            let stage = self.record.overall_state;
            match cancel_job(ep, &h) {
                Ok(()) => self.note(stage, format!("batch{i} job {} cancel requested ({reason})", h.job_id)),
                Err(e) => self.note(stage, format!("batch{i} job {} cancel failed: {e}", h.job_id)),
            }
        }
    }

    fn poll_loop(&mut self) -> Result<(), RunError> {
        let mut ep = self.ctx.pool.get()?;
        let started = self.ctx.clock.now();
        let mut failures = 0;
        let mut deadline_hit = false;
        if self.record.overall_state != RunState::Running {
            self.enter(RunState::Running, "polling");
        }
        loop {
            let pollable = self.pollable();
            if pollable.is_empty() {
                break;
            }
            let handles: Vec<JobHandle> = pollable.iter().map(|(_, h)| h.clone()).collect();
            match poll_jobs(&mut *ep, &handles) {
                Ok(states) => {
                    failures = 0;
                    for (i, h) in pollable {
                        let s = states[&h.job_id];
                        self.observe(&mut *ep, i, &h, s);
                    }
                    self.save()?;
                }
                Err(e) => {
                    failures += 1;
                    self.note(RunState::Running, format!("poll failed ({failures}/{MAX_POLL_FAILURES}): {e}"));
                    if failures >= MAX_POLL_FAILURES {
                        for (i, _) in pollable {
                            self.record.batches[i]
                                .fail(FailureStage::WorkflowFailed, format!("job state unavailable: {e}"));
                        }
                        break;
                    }
                }
            }
            if self.pollable().is_empty() {
                break;
            }
            if let Some(limit) = self.deadline {
                if !deadline_hit && self.ctx.clock.now().saturating_sub(started) >= limit {
                    deadline_hit = true;
                    self.cancel_outstanding(&mut *ep, "deadline exceeded");
                    continue;
                }
            }
            self.ctx.clock.sleep(self.poll_interval);
        }
        Ok(())
    }

    fn observe(&mut self, ep: &mut dyn Endpoint, i: usize, h: &JobHandle, s: JobState) {
        let b = &self.record.batches[i];
        let is_conversion = b.workflow_handle.is_none();
        if is_conversion {
            if !s.is_terminal() {
                return;
            }
            self.note(RunState::Running, format!("batch{i} conversion job {} {s}", h.job_id));
            if s == JobState::Completed && !self.record.cancelled {
                self.submit_workflow(ep, i);
            } else {
                let msg = if self.record.cancelled {
                    format!("run cancelled; conversion job {} ended {s}", h.job_id)
                } else {
                    format!("conversion job {} ended {s}", h.job_id)
                };
                self.record.batches[i].fail(FailureStage::ConversionFailed, msg);
            }
            return;
        }
        if b.state == Some(s) {
            return;
        }
        self.record.batches[i].state = Some(s);
        self.note(RunState::Running, format!("batch{i} workflow job {} {s}", h.job_id));
        if s.is_terminal() && s != JobState::Completed {
            self.record.batches[i].fail(FailureStage::WorkflowFailed, format!("workflow job {} ended {s}", h.job_id));
        }
    }

    fn retrieve(&mut self) -> Result<(), RunError> {
        self.enter(RunState::Retrieving, "fetching results and logs");
        let output_dir = self.record.output_dir.clone();
        std::fs::create_dir_all(&output_dir)?;
        let ctx = self.ctx;
        let run_id = self.record.run_id.clone();
        let batches = self.record.batches.clone();
        let results = fan_out(self.parallelism, &batches, |b| retrieve_batch(ctx, &run_id, &output_dir, b));
        for (b, r) in self.record.batches.iter_mut().zip(results) {
            b.result_zip = r.zip;
            b.logs = r.logs;
            if let Some(msg) = r.failure {
                b.fail(FailureStage::RetrievalFailed, msg);
            }
            if let Some(f) = b.failure.as_mut() {
                f.logfile = b.logs.first().cloned();
            }
        }
        self.record.output_artifacts = self
            .record
            .batches
            .iter()
            .flat_map(|b| b.result_zip.iter().chain(&b.logs).cloned())
            .collect();
        for i in 0..self.record.batches.len() {
            let b = &self.record.batches[i];
            let detail = match (&b.result_zip, &b.failure) {
                (Some(z), _) => format!("batch{i} results {}", z.display()),
                (None, Some(f)) => format!("batch{i} {}: {}", f.stage, f.message),
                (None, None) => format!("batch{i} no results"),
            };
            self.note(RunState::Retrieving, detail);
        }
        Ok(())
    }

    fn cleanup(&mut self) {
        let run_dir = self.ctx.layout().run_dir(&self.record.run_id);
        let result = self.ctx.pool.get().map_err(SlurmError::from).and_then(|mut ep| cleanup_run(&mut *ep, &[run_dir]));
        let stage = self.record.overall_state;
        match result {
            Ok(removed) => self.note(stage, format!("cleanup removed {} paths", removed.len())),
            Err(e) => self.note(stage, format!("cleanup failed: {e}")),
        }
    }

    fn finish(&mut self) -> Result<(), RunError> {
        let state = self.record.aggregate_state();
        let ok = self.record.batches.iter().filter(|b| b.succeeded()).count();
        self.record.finished_at = Some(Utc::now());
        self.enter(state, format!("{ok} of {} batches succeeded", self.record.batches.len()));
        self.save()
    }

    /// Polls to completion, retrieves, cleans up and finalizes.
    fn drive(&mut self) -> Result<(), RunError> {
        let polled = self.poll_loop();
        if let Err(e) = &polled {
            for b in &mut self.record.batches {
                if !b.state.is_some_and(JobState::is_terminal) {
                    b.fail(FailureStage::WorkflowFailed, format!("polling aborted: {e}"));
                }
            }
        }
        self.retrieve()?;
        self.cleanup();
        self.finish()
    }
}

fn transfer_batch(ctx: &RunContext, staging: &Path, remote_dir: &str, items: &[&InputItem]) -> Result<(), String> {
    let owned: Vec<InputItem> = items.iter().map(|i| (*i).clone()).collect();
    let zip = pack_inputs(&owned, staging).map_err(|e| e.to_string())?;
    let mut ep = ctx.pool.get().map_err(|e| e.to_string())?;
    let remote_zip = format!("{remote_dir}/inputs.zip");
    ep.make_dirs(remote_dir).map_err(|e| e.to_string())?;
    ep.put_file(&zip, &remote_zip).map_err(|e| e.to_string())?;
    let unzip = ep
        .exec(&RemoteCommand::new(["unzip", "-q", "-o", "inputs.zip", "-d", "."]).in_dir(remote_dir))
        .map_err(|e| e.to_string())?;
    if !unzip.success() {
        return Err(format!("unzip exited {}: {}", unzip.exit_code, unzip.stderr.trim()));
    }
    ep.remove_tree(&remote_zip).map_err(|e| e.to_string())?;
    for sub in ["in", "out", "gt"] {
        ep.make_dirs(&format!("{remote_dir}/{sub}")).map_err(|e| e.to_string())?;
    }
    let _ = std::fs::remove_file(&zip);
    Ok(())
}

struct Retrieved {
    zip: Option<PathBuf>,
    logs: Vec<PathBuf>,
    failure: Option<String>,
}

fn retrieve_batch(ctx: &RunContext, run_id: &str, output_dir: &Path, b: &BatchRun) -> Retrieved {
    let mut out = Retrieved {
        zip: None,
        logs: Vec::new(),
        failure: None,
    };
    let handle = b.workflow_handle.as_ref().or(b.conversion_handle.as_ref());
    if handle.is_none() {
        return out;
    }
    let mut ep = match ctx.pool.get() {
        Ok(ep) => ep,
        Err(e) => {
            out.failure = Some(e.to_string());
            return out;
        }
    };
    if b.state == Some(JobState::Completed) && b.failure.is_none() {
        match fetch_results(&mut *ep, &b.out_dir(), output_dir, &format!("{run_id}_batch{}.zip", b.index)) {
            Ok(z) => out.zip = Some(z),
            Err(e) => out.failure = Some(e.to_string()),
        }
    }
    let logs_dir = output_dir.join("logs");
    for h in [&b.conversion_handle, &b.workflow_handle].into_iter().flatten() {
        let wanted = b.workflow_handle.is_none() || h.kind == crate::slurm::JobKind::Workflow;
        if !wanted && b.failure.as_ref().is_none_or(|f| f.stage != FailureStage::ConversionFailed) {
            continue;
        }
        match fetch_logfile(&mut *ep, h, &logs_dir) {
            Ok(paths) => out.logs.extend(paths),
            Err(e) => log::warn!("batch{}: {e}", b.index),
        }
    }
    out
}

/// Single-batch run: every item in one batch.
pub fn run_workflow(
    ctx: &RunContext,
    workflow: &str,
    descriptor: &WorkflowDescriptor,
    values: &ParamValues,
    items: &[InputItem],
    options: &RunOptions,
) -> Result<RunRecord, RunError> {
    run_workflow_batched(ctx, workflow, descriptor, values, items, items.len().max(1), options)
}

/// Runs the workflow over `items` in batches of `batch_size`, one workflow job per batch.
pub fn run_workflow_batched(
    ctx: &RunContext,
    workflow: &str,
    descriptor: &WorkflowDescriptor,
    values: &ParamValues,
    items: &[InputItem],
    batch_size: usize,
    options: &RunOptions,
) -> Result<RunRecord, RunError> {
    let entry = ctx.registry.get(workflow)?.clone();
    let resolved = ctx.registry.resolve_workflow(workflow)?;
    let values = validate_values(descriptor, values)?;
    let plan = plan_batches(items, batch_size)?;
    let mut ids = BTreeSet::new();
    for item in items {
        if !ids.insert(item.id.as_str()) {
            return Err(InputError::DuplicateId(item.id.clone()).into());
        }
        if !item.local_path.exists() {
            return Err(InputError::MissingInput(item.local_path.clone()).into());
        }
    }
    let needs_conversion = !options.skip_conversion
        && entry.input_format == WorkflowInput::Tiff
        && items.iter().any(|i| i.format == InputFormat::Zarr);
    let layout = ctx.layout();
    let conversion = if needs_conversion {
        let pair = FormatPair::new("zarr", "tiff");
        let image = ctx
            .profile
            .converter_image(&pair)
            .ok_or_else(|| RunError::NoConverter(pair.clone()))?;
        Some((pair, layout.image_path(&converter_image_file(image))))
    } else {
        None
    };

    if !items.is_empty() {
        let mut ep = ctx.pool.get()?;
        let image = layout.image_path(&resolved.image_file_name());
        if !ep.path_exists(&image)? {
            return Err(RunError::NotInitialized {
                workflow: workflow.to_string(),
                image,
            });
        }
        if let Some((_, converter)) = &conversion {
            if !ep.path_exists(converter)? {
                return Err(RunError::NotInitialized {
                    workflow: "converter".to_string(),
                    image: converter.clone(),
                });
            }
        }
    }

    let run_id = uuid::Uuid::new_v4().to_string();
    let run_dir = layout.run_dir(&run_id);
    let record = RunRecord {
        run_id: run_id.clone(),
        workflow: workflow.to_string(),
        workflow_version: resolved.version.clone(),
        values: values.clone(),
        inputs: items.iter().map(|i| (i.id.clone(), i.local_path.clone())).collect(),
        skip_conversion: options.skip_conversion,
        batches: plan
            .batches
            .iter()
            .enumerate()
            .map(|(k, ids)| BatchRun {
                index: k,
                items: ids.clone(),
                remote_dir: format!("{run_dir}/batch{k}"),
                conversion_handle: None,
                workflow_handle: None,
                state: None,
                workflow_script: String::new(),
                workflow_env: Vec::new(),
                result_zip: None,
                logs: Vec::new(),
                failure: None,
            })
            .collect(),
        overall_state: RunState::Preparing,
        stage_history: Vec::new(),
        started_at: Utc::now(),
        finished_at: None,
        output_dir: options.output_dir.clone(),
        output_artifacts: Vec::new(),
        imported: Vec::new(),
        cancelled: false,
    };
    let mut run = Run {
        ctx,
        record,
        poll_interval: options.poll_interval,
        deadline: options.deadline,
        parallelism: options.parallelism.max(1),
    };
    run.enter(
        RunState::Preparing,
        format!(
            "{workflow} {} with {} items in {} batches",
            resolved.version,
            items.len(),
            plan.batches.len()
        ),
    );
    if items.is_empty() {
        run.finish()?;
        return Ok(run.record);
    }
    run.save()?;
    run.transfer(items)?;
    {
        let mut ep = ctx.pool.get()?;
        run.submit(&mut *ep, descriptor, &values, conversion.as_ref(), items)?;
    }
    if options.detach {
        return Ok(run.record);
    }
    run.drive()?;
    Ok(run.record)
}

fn load(ctx: &RunContext, run_id: &str) -> Result<RunRecord, RunError> {
    if !ctx.store.exists(run_id) {
        return Err(RunError::UnknownRun(run_id.to_string()));
    }
    Ok(ctx.store.load(run_id)?)
}

/// Continues a detached or interrupted run until it is terminal.
pub fn resume_run(ctx: &RunContext, run_id: &str, options: &RunOptions) -> Result<RunRecord, RunError> {
    let record = load(ctx, run_id)?;
    if record.overall_state.is_terminal() {
        return Ok(record);
    }
    let mut run = Run {
        ctx,
        record,
        poll_interval: options.poll_interval,
        deadline: options.deadline,
        parallelism: options.parallelism.max(1),
    };
    run.drive()?;
    Ok(run.record)
}

/// Cancels every outstanding job of a run, then drives it to its final state.
pub fn cancel_run(ctx: &RunContext, run_id: &str, options: &RunOptions) -> Result<RunRecord, RunError> {
    let record = load(ctx, run_id)?;
    if record.overall_state.is_terminal() {
        return Ok(record);
    }
    let mut run = Run {
        ctx,
        record,
        poll_interval: options.poll_interval,
        deadline: None,
        parallelism: options.parallelism.max(1),
    };
    {
        let mut ep = ctx.pool.get()?;
        run.cancel_outstanding(&mut *ep, "requested");
    }
    run.save()?;
    run.drive()?;
    Ok(run.record)
}

/// Summary of a stored run, as `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    pub batches: Vec<(usize, String)>,
    pub journal_tail: Vec<String>,
}

pub fn run_status(ctx: &RunContext, run_id: &str, tail: usize) -> Result<RunStatus, RunError> {
    let record = load(ctx, run_id)?;
    let journal = ctx.store.read_journal(run_id).unwrap_or_default();
    let skip = journal.len().saturating_sub(tail);
    Ok(RunStatus {
        run_id: record.run_id.clone(),
        state: record.overall_state,
        batches: record
            .batches
            .iter()
            .map(|b| {
                let s = match (&b.state, &b.failure, &b.conversion_handle) {
                    (Some(s), _, _) => s.to_string(),
                    (None, Some(f), _) => f.stage.to_string(),
                    (None, None, Some(_)) => "CONVERTING".to_string(),
                    (None, None, None) => "NOT_SUBMITTED".to_string(),
                };
                (b.index, s)
            })
            .collect(),
        journal_tail: journal[skip..].to_vec(),
    })
}

pub fn load_record(ctx: &RunContext, run_id: &str) -> Result<RunRecord, RunError> {
    load(ctx, run_id)
}
