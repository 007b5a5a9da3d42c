//! Deterministic discrete-event simulation of a Slurm cluster.
//!
//! [`SimCluster`] holds nodes, a FIFO queue, an append-only event history
//! and an in-memory filesystem. It answers the same commands a real login
//! node would (see [`exec`]) and is reached through [`SimHandle`], which
//! hands out [`crate::transport::Endpoint`]s and a virtual [`crate::transport::Clock`].
//!
//! Scheduling is strict FIFO with first-fit placement and no backfill: the
//! queue is scanned in submission order and stops at the first task that
//! cannot be placed. Tasks that could never fit any node are skipped and
//! reported by [`SimCluster::unschedulable_jobs`].
//!
//! Work is declared, not executed. A script line `#SIM duration=<s> outputs=<n>`
//! sets the runtime and the number of placeholder outputs.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::slurm::state::{aggregate_array, JobState};

mod endpoint;
pub mod exec;
pub mod fs;

pub use endpoint::{SimClock, SimConnector, SimEndpoint, SimHandle};
pub use fs::SimFs;

/// Runtime of a job without a `#SIM duration=` annotation.
pub const DEFAULT_DURATION_S: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub cpus: u32,
    #[serde(default)]
    pub gpus: u32,
    pub mem_mb: u64,
}

/// Cluster shape, loadable from a small JSON document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    /// Accepted partition names. Any partition is accepted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<Vec<String>>,
}

impl Default for Topology {
    /// Two nodes with 4 cpus, no gpus and 16 GiB each.
    fn default() -> Self {
        Topology {
            nodes: vec![
                NodeSpec {
                    cpus: 4,
                    gpus: 0,
                    mem_mb: 16384,
                };
                2
            ],
            partitions: None,
        }
    }
}

impl Topology {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let t: Topology = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if t.nodes.is_empty() {
            return Err("topology needs at least one node".into());
        }
        Ok(t)
    }
}

/// Per-task resource request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    pub cpus: u32,
    pub gpus: u32,
    pub mem_mb: u64,
}

impl Demand {
    fn fits(&self, free: &Demand) -> bool {
        self.cpus <= free.cpus && self.gpus <= free.gpus && self.mem_mb <= free.mem_mb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeUsage {
    pub cpus: u32,
    pub gpus: u32,
    pub mem_mb: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForcedOutcome {
    Failed,
    Timeout,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultMatcher {
    /// The next submitted job, once.
    NextSubmission,
    JobId(u64),
    /// Jobs whose script text, path or submission environment contains the substring.
    ScriptContains(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultAction {
    /// The job ends in this state instead of COMPLETED.
    Force(ForcedOutcome),
    /// The job completes but writes no outputs.
    MissingOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub matcher: FaultMatcher,
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTask {
    /// Array index; `None` for a plain job.
    pub index: Option<u32>,
    pub state: JobState,
    pub node: Option<usize>,
    pub start: Option<u64>,
    pub end: Option<u64>,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimJob {
    pub id: u64,
    pub script_path: String,
    pub script_text: String,
    pub demand: Demand,
    pub time_limit_s: Option<u64>,
    pub duration_s: u64,
    pub outputs: Option<u32>,
    pub output_pattern: String,
    pub partition: Option<String>,
    pub env: BTreeMap<String, String>,
    pub submit_time: u64,
    pub tasks: Vec<SimTask>,
    pub forced: Option<ForcedOutcome>,
    pub missing_output: bool,
    pub unschedulable: bool,
}

impl SimJob {
    pub fn is_array(&self) -> bool {
        self.tasks.first().is_some_and(|t| t.index.is_some())
    }

    /// Parent state: the task's state for plain jobs, the aggregate for arrays.
    pub fn state(&self) -> JobState {
        if self.is_array() {
            aggregate_array(&self.tasks.iter().map(|t| t.state).collect::<Vec<_>>())
        } else {
            self.tasks[0].state
        }
    }

    /// Logfile of one task, with `%j`, `%A` and `%a` substituted.
    pub fn log_path(&self, task: &SimTask) -> String {
        let task_id = task.index.map(|i| i.to_string()).unwrap_or_else(|| "4294967294".into());
        self.output_pattern
            .replace("%A", &self.id.to_string())
            .replace("%a", &task_id)
            .replace("%j", &self.id.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub job_id: u64,
    pub task: Option<u32>,
    pub from: JobState,
    pub to: JobState,
}

impl SimEvent {
    pub fn render(&self) -> String {
        let id = match self.task {
            Some(t) => format!("{}_{t}", self.job_id),
            None => self.job_id.to_string(),
        };
        format!("{} {id} {}->{}", self.time, self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct TaskRef {
    job: u64,
    task: usize,
}

/// One executed command, kept for inspection by tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLogEntry {
    pub time: u64,
    pub argv: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCluster {
    pub topology: Topology,
    clock: u64,
    usage: Vec<NodeUsage>,
    jobs: BTreeMap<u64, SimJob>,
    queue: VecDeque<TaskRef>,
    next_job_id: u64,
    history: Vec<SimEvent>,
    pub fs: SimFs,
    faults: Vec<Fault>,
    pull_failures: Vec<String>,
    transport_failures: u32,
    corrupt_transfers: u32,
    #[serde(default)]
    exec_log: Vec<ExecLogEntry>,
}

impl Default for SimCluster {
    fn default() -> Self {
        Self::new(Topology::default())
    }
}

impl SimCluster {
    pub fn new(topology: Topology) -> Self {
        let usage = vec![
            NodeUsage {
                cpus: 0,
                gpus: 0,
                mem_mb: 0,
            };
            topology.nodes.len()
        ];
        SimCluster {
            topology,
            clock: 0,
            usage,
            jobs: BTreeMap::new(),
            queue: VecDeque::new(),
            next_job_id: 1,
            history: Vec::new(),
            fs: SimFs::new(),
            faults: Vec::new(),
            pull_failures: Vec::new(),
            transport_failures: 0,
            corrupt_transfers: 0,
            exec_log: Vec::new(),
        }
    }

    /// Virtual seconds since the cluster was created.
    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn job(&self, id: u64) -> Option<&SimJob> {
        self.jobs.get(&id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &SimJob> {
        self.jobs.values()
    }

    /// Every state transition so far, in the order it happened.
    pub fn history(&self) -> &[SimEvent] {
        &self.history
    }

    pub fn render_history(&self) -> String {
        self.history.iter().map(|e| e.render() + "\n").collect()
    }

    pub fn usage(&self) -> &[NodeUsage] {
        &self.usage
    }

    pub fn exec_log(&self) -> &[ExecLogEntry] {
        &self.exec_log
    }

    pub fn clear_exec_log(&mut self) {
        self.exec_log.clear();
    }

    /// Count of executed commands whose first token is `program`.
    pub fn exec_count(&self, program: &str) -> usize {
        self.exec_log
            .iter()
            .filter(|e| e.argv.first().map(String::as_str) == Some(program))
            .count()
    }

    /// Ids of jobs that request more than any single node offers.
    pub fn unschedulable_jobs(&self) -> Vec<u64> {
        self.jobs.values().filter(|j| j.unschedulable).map(|j| j.id).collect()
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        if let FaultMatcher::JobId(id) = fault.matcher {
            if let Some(job) = self.jobs.get_mut(&id) {
                apply_fault(job, &fault.action);
                return;
            }
        }
        self.faults.push(fault);
    }

    /// `singularity pull` and `curl` fail for sources containing `pattern`.
    pub fn inject_pull_failure(&mut self, pattern: impl Into<String>) {
        self.pull_failures.push(pattern.into());
    }

    pub(crate) fn pull_fails(&self, source: &str) -> bool {
        self.pull_failures.iter().any(|p| source.contains(p.as_str()))
    }

    /// The next `n` endpoint operations fail with a lost connection.
    pub fn inject_transport_failures(&mut self, n: u32) {
        self.transport_failures += n;
    }

    pub(crate) fn take_transport_failure(&mut self) -> bool {
        if self.transport_failures > 0 {
            self.transport_failures -= 1;
            true
        } else {
            false
        }
    }

    /// The next `n` file transfers arrive corrupted.
    pub fn inject_corrupt_transfers(&mut self, n: u32) {
        self.corrupt_transfers += n;
    }

    pub(crate) fn take_corrupt_transfer(&mut self) -> bool {
        if self.corrupt_transfers > 0 {
            self.corrupt_transfers -= 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn log_exec(&mut self, argv: &[String], exit_code: i32) {
        self.exec_log.push(ExecLogEntry {
            time: self.clock,
            argv: argv.to_vec(),
            exit_code,
        });
    }

    fn fits_anywhere(&self, demand: &Demand) -> bool {
        self.topology.nodes.iter().any(|n| {
            demand.fits(&Demand {
                cpus: n.cpus,
                gpus: n.gpus,
                mem_mb: n.mem_mb,
            })
        })
    }

    fn free(&self, node: usize) -> Demand {
        let cap = self.topology.nodes[node];
        let used = self.usage[node];
        Demand {
            cpus: cap.cpus - used.cpus,
            gpus: cap.gpus - used.gpus,
            mem_mb: cap.mem_mb - used.mem_mb,
        }
    }

    /// Enqueues a parsed job and returns its id.
    pub(crate) fn enqueue(&mut self, mut job: SimJob) -> u64 {
        let id = self.next_job_id;
        self.next_job_id += 1;
        job.id = id;
        job.submit_time = self.clock;
        job.unschedulable = !self.fits_anywhere(&job.demand);
        let haystack = format!(
            "{}\n{}\n{}",
            job.script_path,
            job.script_text,
            job.env.values().cloned().collect::<Vec<_>>().join("\n")
        );
        let mut consumed = None;
        for (i, fault) in self.faults.iter().enumerate() {
            let hit = match &fault.matcher {
                FaultMatcher::NextSubmission => consumed.is_none(),
                FaultMatcher::JobId(fid) => *fid == id,
                FaultMatcher::ScriptContains(s) => haystack.contains(s.as_str()),
            };
            if hit {
                apply_fault(&mut job, &fault.action);
                if matches!(fault.matcher, FaultMatcher::NextSubmission | FaultMatcher::JobId(_)) {
                    consumed = Some(i);
                }
            }
        }
        if let Some(i) = consumed {
            self.faults.remove(i);
        }
        for t in 0..job.tasks.len() {
            self.queue.push_back(TaskRef { job: id, task: t });
        }
        self.jobs.insert(id, job);
        id
    }

    fn record(&mut self, r: TaskRef, to: JobState) -> SimEvent {
        let job = self.jobs.get_mut(&r.job).expect("task of known job");
        let task = &mut job.tasks[r.task];
        let from = task.state;
        debug_assert!(from.can_transition(to), "illegal transition {from} -> {to}");
        task.state = to;
        let ev = SimEvent {
            time: self.clock,
            job_id: r.job,
            task: task.index,
            from,
            to,
        };
        self.history.push(ev.clone());
        ev
    }

    /// Starts queued tasks at the current time, in FIFO order, first-fit.
    fn schedule(&mut self) -> Vec<SimEvent> {
        let mut events = Vec::new();
        let mut remaining = VecDeque::new();
        let mut blocked = false;
        while let Some(r) = self.queue.pop_front() {
            let job = &self.jobs[&r.job];
            if blocked || job.unschedulable {
                remaining.push_back(r);
                continue;
            }
            let demand = job.demand;
            let Some(node) = (0..self.usage.len()).find(|&n| demand.fits(&self.free(n))) else {
                blocked = true;
                remaining.push_back(r);
                continue;
            };
            let u = &mut self.usage[node];
            u.cpus += demand.cpus;
            u.gpus += demand.gpus;
            u.mem_mb += demand.mem_mb;
            let now = self.clock;
            let job = self.jobs.get_mut(&r.job).expect("queued job exists");
            let (end, _) = planned_end(job, now);
            let task = &mut job.tasks[r.task];
            task.node = Some(node);
            task.start = Some(now);
            task.end = Some(end);
            let log = job.log_path(&job.tasks[r.task]);
            let line = format!("[{now}] job {} started on node{node}\n", job.id);
            let _ = self.fs.append(&log, line.as_bytes());
            events.push(self.record(r, JobState::Running));
            self.assert_resources();
        }
        self.queue = remaining;
        events
    }

    fn release(&mut self, r: TaskRef) {
        let job = &self.jobs[&r.job];
        let demand = job.demand;
        if let Some(node) = job.tasks[r.task].node {
            let u = &mut self.usage[node];
            u.cpus -= demand.cpus;
            u.gpus -= demand.gpus;
            u.mem_mb -= demand.mem_mb;
        }
    }

    fn finish(&mut self, r: TaskRef) -> SimEvent {
        self.release(r);
        let now = self.clock;
        let job = &self.jobs[&r.job];
        let start = job.tasks[r.task].start.unwrap_or(now);
        let (_, mut outcome) = planned_end(job, start);
        let mut exit_code = match outcome {
            JobState::Completed => 0,
            JobState::Cancelled => 0,
            _ => 1,
        };
        let mut note = String::new();
        if outcome == JobState::Completed {
            if let Err(msg) = exec::complete_effects(self, r.job, r.task) {
                outcome = JobState::Failed;
                exit_code = 1;
                note = msg;
            }
        }
        let job = self.jobs.get_mut(&r.job).expect("finished job exists");
        job.tasks[r.task].exit_code = Some(exit_code);
        let log = job.log_path(&job.tasks[r.task]);
        let mut line = format!("[{now}] job {} finished: {outcome} exit={exit_code}\n", job.id);
        if !note.is_empty() {
            line = format!("[{now}] error: {note}\n{line}");
        }
        let _ = self.fs.append(&log, line.as_bytes());
        self.record(r, outcome)
    }

    /// Advances virtual time by `dt` seconds and returns the transitions that happened.
    ///
    /// Queued work is started at the current time first; then completions are
    /// processed in time order (ties by job id and task), rescheduling after
    /// each instant. `advance(0)` does nothing.
    pub fn advance(&mut self, dt: u64) -> Vec<SimEvent> {
        if dt == 0 {
            return Vec::new();
        }
        let target = self.clock + dt;
        let mut events = self.schedule();
        loop {
            let next = self
                .running()
                .filter_map(|(r, t)| t.end.map(|e| (e, r)))
                .filter(|(e, _)| *e <= target)
                .map(|(e, _)| e)
                .min();
            let Some(t) = next else { break };
            self.clock = t;
            let due: Vec<TaskRef> = self
                .running()
                .filter(|(_, task)| task.end == Some(t))
                .map(|(r, _)| r)
                .collect();
            for r in due {
                events.push(self.finish(r));
            }
            events.extend(self.schedule());
        }
        self.clock = target;
        events
    }

    /// Advances until no task is running or queued-and-schedulable, up to `limit` seconds.
    pub fn run_until_idle(&mut self, limit: u64) -> Vec<SimEvent> {
        let mut events = self.advance(1);
        while self.clock < limit {
            let next = self.running().filter_map(|(_, t)| t.end).min();
            match next {
                Some(t) => events.extend(self.advance(t.saturating_sub(self.clock).max(1))),
                None => break,
            }
        }
        events
    }

    fn running(&self) -> impl Iterator<Item = (TaskRef, &SimTask)> {
        self.jobs.iter().flat_map(|(id, job)| {
            job.tasks
                .iter()
                .enumerate()
                .filter(|(_, t)| t.state == JobState::Running)
                .map(move |(i, t)| (TaskRef { job: *id, task: i }, t))
        })
    }

    /// Cancels every non-terminal task of a job. Returns `None` for unknown ids.
    pub fn cancel(&mut self, id: u64) -> Option<Vec<SimEvent>> {
        let job = self.jobs.get(&id)?;
        let live: Vec<(TaskRef, JobState)> = job
            .tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.state.is_terminal())
            .map(|(i, t)| (TaskRef { job: id, task: i }, t.state))
            .collect();
        let mut events = Vec::new();
        for (r, state) in live {
            if state == JobState::Running {
                self.release(r);
            }
            self.queue.retain(|q| *q != r);
            let now = self.clock;
            let job = self.jobs.get_mut(&id).expect("known job");
            job.tasks[r.task].end = Some(now);
            job.tasks[r.task].exit_code = Some(0);
            let log = job.log_path(&job.tasks[r.task]);
            let _ = self
                .fs
                .append(&log, format!("[{now}] job {id} CANCELLED\n").as_bytes());
            events.push(self.record(r, JobState::Cancelled));
        }
        // Cancelling may free room for queued work, but starting it waits for the next advance.
        Some(events)
    }

    /// Checks per-node commitments against capacity.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, (cap, used)) in self.topology.nodes.iter().zip(&self.usage).enumerate() {
            if used.cpus > cap.cpus || used.gpus > cap.gpus || used.mem_mb > cap.mem_mb {
                return Err(format!("node{i} over-committed: {used:?} > {cap:?}"));
            }
        }
        let mut expected = vec![
            NodeUsage {
                cpus: 0,
                gpus: 0,
                mem_mb: 0
            };
            self.usage.len()
        ];
        for (r, t) in self.running() {
            let d = self.jobs[&r.job].demand;
            let n = t.node.ok_or("running task without node")?;
            expected[n].cpus += d.cpus;
            expected[n].gpus += d.gpus;
            expected[n].mem_mb += d.mem_mb;
        }
        if expected != self.usage {
            return Err(format!("usage bookkeeping drifted: {:?} vs {:?}", self.usage, expected));
        }
        Ok(())
    }

    fn assert_resources(&self) {
        debug_assert!(self.check_invariants().is_ok(), "{:?}", self.check_invariants());
    }
}

fn apply_fault(job: &mut SimJob, action: &FaultAction) {
    match action {
        FaultAction::Force(outcome) => job.forced = Some(*outcome),
        FaultAction::MissingOutput => job.missing_output = true,
    }
}

/// End time and terminal state for a task started at `start`.
fn planned_end(job: &SimJob, start: u64) -> (u64, JobState) {
    let limit = job.time_limit_s;
    match (job.forced, limit) {
        (Some(ForcedOutcome::Timeout), Some(l)) => (start + l, JobState::Timeout),
        (Some(ForcedOutcome::Timeout), None) => (start + job.duration_s, JobState::Timeout),
        (_, Some(l)) if job.duration_s > l => (start + l, JobState::Timeout),
        (Some(ForcedOutcome::Failed), _) => (start + job.duration_s, JobState::Failed),
        (Some(ForcedOutcome::Cancelled), _) => (start + job.duration_s, JobState::Cancelled),
        (None, _) => (start + job.duration_s, JobState::Completed),
    }
}
