//! Generators and property checks shared by the property suites and the acceptance run.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use serde_json::{json, Value};
use slurmbridge::descriptor::{
    env_assignments, parse_descriptor, render_cli_args, validate_values, ParamValue, ParamValues, ValueType,
    WorkflowDescriptor,
};
use slurmbridge::sim::{
    Demand, Fault, FaultAction, FaultMatcher, ForcedOutcome, NodeSpec, NodeUsage, SimCluster, SimEndpoint,
    SimHandle, Topology,
};
use slurmbridge::slurm::{poll_jobs, submit_job, JobHandle, JobState};

/// Runs a property with a fixed case count, returning the failure text instead of panicking.
pub fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(e: impl ToString) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

// Descriptors.

#[derive(Debug, Clone)]
struct GenParam {
    id: String,
    ty: ValueType,
    flag: Value,
    optional: bool,
    default: Option<Value>,
    in_template: bool,
}

pub fn value_for(ty: ValueType) -> BoxedStrategy<Value> {
    match ty {
        ValueType::Number => prop_oneof![
            (-1000i64..1000).prop_map(|n| json!(n)),
            (-1.0e6f64..1.0e6).prop_map(|f| json!(f)),
        ]
        .boxed(),
        ValueType::String => "[a-zA-Z0-9 ._/-]{0,12}".prop_map(|s| json!(s)).boxed(),
        ValueType::Boolean => any::<bool>().prop_map(|b| json!(b)).boxed(),
    }
}

fn value_type() -> impl Strategy<Value = ValueType> {
    prop_oneof![Just(ValueType::Number), Just(ValueType::String), Just(ValueType::Boolean)]
}

fn param(id: String) -> impl Strategy<Value = GenParam> {
    (value_type(), 0..4u8, any::<bool>(), any::<bool>(), any::<bool>()).prop_flat_map(
        move |(ty, flag_kind, optional, has_default, in_template)| {
            let id = id.clone();
            let flag = match flag_kind {
                0 => json!(format!("--{id}")),
                1 => json!("--@id"),
                2 => json!(format!("-{}", &id[..1])),
                _ => json!(""),
            };
            let default = if has_default {
                value_for(ty).prop_map(Some).boxed()
            } else {
                Just(None).boxed()
            };
            default.prop_map(move |default| GenParam {
                id: id.clone(),
                ty,
                flag: flag.clone(),
                optional,
                default,
                in_template,
            })
        },
    )
}

fn param_ids() -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[a-z][a-z0-9_]{0,7}", 0..6).prop_map(|ids| {
        ids.into_iter()
            .filter(|id| !["in_path", "out_path", "gt_path"].contains(&id.as_str()))
            .collect()
    })
}

prop_compose! {
    /// A valid descriptor document as JSON text.
    pub fn descriptor_doc()(
        params in param_ids().prop_flat_map(|ids| ids.into_iter().map(param).collect::<Vec<_>>()),
        literals in prop::collection::vec("[a-z][a-z0-9._]{0,6}", 0..4),
        order_seed in any::<u64>(),
        with_ignored in any::<bool>(),
        with_extra in any::<bool>(),
        name in "[A-Za-z][A-Za-z0-9_-]{0,15}",
    ) -> String {
        let mut tokens: Vec<String> = literals;
        let mut placeholders: Vec<String> = params
            .iter()
            .filter(|p| p.in_template)
            .map(|p| format!("[{}]", p.id.to_ascii_uppercase()))
            .collect();
        let k = placeholders.len().max(1);
        placeholders.rotate_left((order_seed as usize) % k);
        tokens.extend(placeholders);
        let mut inputs: Vec<Value> = params
            .iter()
            .map(|p| {
                let mut v = json!({
                    "id": p.id,
                    "name": format!("{} label", p.id),
                    "description": "generated",
                    "type": p.ty.as_str(),
                    "command-line-flag": p.flag,
                    "optional": p.optional,
                });
                if let Some(d) = &p.default {
                    v["default-value"] = d.clone();
                }
                v
            })
            .collect();
        if with_ignored {
            inputs.push(json!({"id": "domain", "name": "Domain", "type": "ListDomain", "optional": true}));
        }
        let mut doc = json!({
            "name": name,
            "schema-version": "cytomine-0.1",
            "container-image": {"image": "org/workflow", "version": "v1.0.0"},
            "command-line": tokens.join(" "),
            "inputs": inputs,
        });
        if with_extra {
            doc["description"] = json!("extra field kept verbatim");
        }
        doc.to_string()
    }
}

/// Descriptor plus values of the right type for a random subset of its params,
/// always covering required params without defaults.
pub fn with_values() -> impl Strategy<Value = (WorkflowDescriptor, ParamValues)> {
    descriptor_doc().prop_flat_map(|doc| {
        let d = parse_descriptor(&doc).expect("generated descriptors are valid");
        let per_param: Vec<_> = d
            .params
            .iter()
            .map(|p| {
                let must = !p.optional && p.default.is_none();
                let include = if must { Just(true).boxed() } else { any::<bool>().boxed() };
                (Just(p.id.clone()), include, value_for(p.value_type))
            })
            .collect();
        (Just(d), per_param).prop_map(|(d, picks)| {
            let mut values = ParamValues::new();
            for (id, include, raw) in picks {
                if include {
                    let ty = d.param(&id).unwrap().value_type;
                    values.insert(id, typed(&raw, ty));
                }
            }
            (d, values)
        })
    })
}

fn typed(raw: &Value, ty: ValueType) -> ParamValue {
    match ty {
        ValueType::Number => ParamValue::Number(raw.as_f64().unwrap()),
        ValueType::String => ParamValue::String(raw.as_str().unwrap().to_string()),
        ValueType::Boolean => ParamValue::Boolean(raw.as_bool().unwrap()),
    }
}

pub fn descriptor_round_trip(doc: String) -> Result<(), TestCaseError> {
    let d = parse_descriptor(&doc).map_err(fail)?;
    let again = parse_descriptor(&d.to_document()).map_err(fail)?;
    prop_assert_eq!(&again, &d);
    prop_assert_eq!(again.to_document(), d.to_document());
    Ok(())
}

/// Every rendered token is a template literal, a declared flag or a rendered value.
pub fn cli_token_provenance((d, values): (WorkflowDescriptor, ParamValues)) -> Result<(), TestCaseError> {
    let values = validate_values(&d, &values).map_err(fail)?;
    let literals: BTreeSet<&str> = d
        .command_line_template
        .split_whitespace()
        .filter(|t| !(t.starts_with('[') && t.ends_with(']')))
        .collect();
    let flags: BTreeSet<&str> = d.params.iter().map(|p| p.cli_flag.as_str()).collect();
    let rendered: BTreeSet<String> = values.iter().map(|(_, v)| v.render()).collect();
    for token in render_cli_args(&d, &values) {
        prop_assert!(
            literals.contains(token.as_str()) || flags.contains(token.as_str()) || rendered.contains(&token),
            "token {:?} has no source",
            token
        );
    }
    Ok(())
}

pub fn validation_idempotent((d, values): (WorkflowDescriptor, ParamValues)) -> Result<(), TestCaseError> {
    let once = validate_values(&d, &values).map_err(fail)?;
    let twice = validate_values(&d, &once).map_err(fail)?;
    prop_assert_eq!(once, twice);
    Ok(())
}

pub fn env_matches_cli((d, values): (WorkflowDescriptor, ParamValues)) -> Result<(), TestCaseError> {
    let values = validate_values(&d, &values).map_err(fail)?;
    let env = env_assignments(&d, &values);
    let tokens = render_cli_args(&d, &values);
    for p in &d.params {
        let Some(v) = values.get(&p.id) else { continue };
        let env_value = env
            .iter()
            .find(|(n, _)| *n == p.id.to_ascii_uppercase())
            .map(|(_, v)| v.clone());
        prop_assert_eq!(env_value, Some(v.render()));
        let placed = d
            .command_line_template
            .split_whitespace()
            .any(|t| t == format!("[{}]", p.id.to_ascii_uppercase()));
        let unique_flag = d.params.iter().filter(|q| q.cli_flag == p.cli_flag).count() == 1;
        let flagged_value = unique_flag && !p.cli_flag.is_empty() && !matches!(v, ParamValue::Boolean(_));
        if placed && flagged_value {
            let pos = tokens.iter().position(|t| *t == p.cli_flag).expect("flag rendered");
            prop_assert_eq!(&tokens[pos + 1], &v.render());
        }
    }
    Ok(())
}

// Simulator job mixes.

#[derive(Debug, Clone)]
pub struct JobSpec {
    pub cpus: u32,
    pub gpus: u32,
    pub mem_mb: u64,
    pub duration: u64,
    pub limit_min: Option<u32>,
    pub array: Option<u32>,
}

#[derive(Debug, Clone)]
pub enum Op {
    Submit(JobSpec),
    Advance(u64),
    Cancel(usize),
}

pub fn job_script(spec: &JobSpec) -> String {
    let mut s = format!(
        "#!/bin/bash\n#SBATCH --mem={}\n#SBATCH --cpus-per-task={}\n",
        spec.mem_mb, spec.cpus
    );
    if spec.gpus > 0 {
        s.push_str(&format!("#SBATCH --gres=gpu:{}\n", spec.gpus));
    }
    if let Some(m) = spec.limit_min {
        s.push_str(&format!("#SBATCH --time={m}\n"));
    }
    if let Some(n) = spec.array {
        s.push_str(&format!("#SBATCH --array=0-{}\n", n - 1));
    }
    s.push_str(&format!("#SIM duration={}\nsleep 1\n", spec.duration));
    s
}

pub fn topology() -> impl Strategy<Value = Topology> {
    prop::collection::vec((1u32..9, 0u32..3, 1024u64..16384), 1..4).prop_map(|nodes| Topology {
        nodes: nodes
            .into_iter()
            .map(|(cpus, gpus, mem_mb)| NodeSpec { cpus, gpus, mem_mb })
            .collect(),
        partitions: None,
    })
}

fn job_spec() -> impl Strategy<Value = JobSpec> {
    (
        1u32..10,
        0u32..3,
        256u64..18000,
        1u64..600,
        proptest::option::of(1u32..8),
        proptest::option::of(1u32..5),
    )
        .prop_map(|(cpus, gpus, mem_mb, duration, limit_min, array)| JobSpec {
            cpus,
            gpus,
            mem_mb,
            duration,
            limit_min,
            array,
        })
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => job_spec().prop_map(Op::Submit),
        4 => (0u64..400).prop_map(Op::Advance),
        1 => (0usize..16).prop_map(Op::Cancel),
    ]
}

pub fn job_mix() -> impl Strategy<Value = (Topology, Vec<Op>)> {
    (topology(), prop::collection::vec(op(), 1..40))
}

fn fits(d: &Demand, cap: &NodeSpec, used: &NodeUsage) -> bool {
    d.cpus + used.cpus <= cap.cpus && d.gpus + used.gpus <= cap.gpus && d.mem_mb + used.mem_mb <= cap.mem_mb
}

/// After scheduling, the head of the queue must not fit anywhere.
pub fn work_conserving(c: &SimCluster) -> Result<(), String> {
    let head = c
        .jobs()
        .filter(|j| !j.unschedulable)
        .flat_map(|j| j.tasks.iter().filter(|t| t.state == JobState::Pending).map(move |_| j))
        .next();
    if let Some(job) = head {
        let placeable = c
            .topology
            .nodes
            .iter()
            .zip(c.usage())
            .any(|(cap, used)| fits(&job.demand, cap, used));
        if placeable {
            return Err(format!("job {} waits although a node has room", job.id));
        }
    }
    Ok(())
}

/// Executes the ops, checking capacity after each one, and returns the cluster.
pub fn play(topology: Topology, ops: &[Op]) -> Result<SimHandle, TestCaseError> {
    let sim = SimHandle::with_topology(topology);
    let mut ep = sim.endpoint();
    let mut ids = Vec::new();
    for op in ops {
        match op {
            Op::Submit(spec) => {
                let path = format!("/jobs/job{}.sh", ids.len());
                let h = submit_job(&mut ep, Some(&job_script(spec)), &path, &[]).map_err(fail)?;
                ids.push(h.job_id);
            }
            Op::Advance(dt) => {
                let mut c = sim.lock();
                let before = c.now();
                c.advance(*dt);
                prop_assert_eq!(c.now(), before + dt);
                if *dt > 0 {
                    work_conserving(&c).map_err(fail)?;
                }
            }
            Op::Cancel(i) => {
                if let Some(id) = ids.get(*i) {
                    sim.lock().cancel(*id);
                }
            }
        }
        sim.lock().check_invariants().map_err(fail)?;
    }
    Ok(sim)
}

pub fn resource_safety((topology, ops): (Topology, Vec<Op>)) -> Result<(), TestCaseError> {
    let sim = play(topology, &ops)?;
    let c = sim.lock();
    for e in c.history() {
        prop_assert!(e.from.can_transition(e.to), "{}", e.render());
    }
    for job in c.jobs() {
        if job.unschedulable {
            prop_assert!(job
                .tasks
                .iter()
                .all(|t| matches!(t.state, JobState::Pending | JobState::Cancelled)));
        }
        for t in &job.tasks {
            if let (Some(s), Some(e)) = (t.start, t.end) {
                prop_assert!(e >= s);
                if let (Some(limit), true) = (job.time_limit_s, t.state.is_terminal()) {
                    prop_assert!(e - s <= limit);
                }
            }
        }
    }
    Ok(())
}

pub fn deterministic_trace((topology, ops): (Topology, Vec<Op>)) -> Result<(), TestCaseError> {
    let a = play(topology.clone(), &ops)?;
    let b = play(topology, &ops)?;
    prop_assert_eq!(a.lock().render_history(), b.lock().render_history());
    prop_assert_eq!(a.to_json(), b.to_json());
    Ok(())
}

// Observed schedules.

#[derive(Debug, Clone)]
pub enum Step {
    Submit {
        tasks: Option<u32>,
        duration: u64,
        cpus: u32,
        fault: Option<ForcedOutcome>,
    },
    Wait(u64),
    Cancel(usize),
    Poll,
}

fn step() -> impl Strategy<Value = Step> {
    let outcome = prop_oneof![
        Just(ForcedOutcome::Failed),
        Just(ForcedOutcome::Timeout),
        Just(ForcedOutcome::Cancelled)
    ];
    prop_oneof![
        3 => (proptest::option::of(1u32..5), 1u64..120, 1u32..4, proptest::option::weighted(0.3, outcome))
            .prop_map(|(tasks, duration, cpus, fault)| Step::Submit { tasks, duration, cpus, fault }),
        3 => (0u64..90).prop_map(Step::Wait),
        1 => (0usize..10).prop_map(Step::Cancel),
        4 => Just(Step::Poll),
    ]
}

pub fn schedule() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(step(), 1..60)
}

fn step_script(tasks: Option<u32>, duration: u64, cpus: u32) -> String {
    let mut s = format!("#!/bin/bash\n#SBATCH --cpus-per-task={cpus}\n#SBATCH --mem=512\n#SBATCH --time=1\n");
    if let Some(n) = tasks {
        s.push_str(&format!("#SBATCH --array=0-{}\n", n - 1));
    }
    s.push_str(&format!("#SIM duration={duration}\ntrue\n"));
    s
}

/// Plays a schedule, polling through the client, and checks that consecutive
/// observations of each job are related by the state machine.
pub fn observed_transitions_legal(steps: Vec<Step>) -> Result<(), TestCaseError> {
    let sim = SimHandle::with_topology(Topology {
        nodes: vec![
            NodeSpec {
                cpus: 4,
                gpus: 0,
                mem_mb: 4096
            };
            2
        ],
        partitions: None,
    });
    let mut ep = sim.endpoint();
    let mut handles: Vec<JobHandle> = Vec::new();
    let mut seen: BTreeMap<u64, Vec<JobState>> = BTreeMap::new();
    let observe = |handles: &[JobHandle],
                   ep: &mut SimEndpoint,
                   seen: &mut BTreeMap<u64, Vec<JobState>>|
     -> Result<(), TestCaseError> {
        let before = sim.lock().exec_count("sacct");
        let states = poll_jobs(ep, handles).map_err(fail)?;
        let calls = sim.lock().exec_count("sacct") - before;
        prop_assert_eq!(calls, usize::from(!handles.is_empty()));
        for (id, state) in states {
            prop_assert_eq!(state, sim.lock().job(id).unwrap().state());
            seen.entry(id).or_default().push(state);
        }
        Ok(())
    };
    for s in &steps {
        match s {
            Step::Submit {
                tasks,
                duration,
                cpus,
                fault,
            } => {
                if let Some(f) = fault {
                    sim.lock().inject_fault(Fault {
                        matcher: FaultMatcher::NextSubmission,
                        action: FaultAction::Force(*f),
                    });
                }
                let path = format!("/jobs/j{}.sh", handles.len());
                let h = submit_job(&mut ep, Some(&step_script(*tasks, *duration, *cpus)), &path, &[]).map_err(fail)?;
                handles.push(h);
            }
            Step::Wait(dt) => {
                sim.lock().advance(*dt);
            }
            Step::Cancel(i) => {
                if let Some(h) = handles.get(*i) {
                    sim.lock().cancel(h.job_id);
                }
            }
            Step::Poll => observe(&handles, &mut ep, &mut seen)?,
        }
    }
    sim.lock().advance(10_000);
    observe(&handles, &mut ep, &mut seen)?;
    for (id, states) in &seen {
        for w in states.windows(2) {
            prop_assert!(w[0].reachable(w[1]), "job {}: {} then {}", id, w[0], w[1]);
        }
        prop_assert!(states.last().unwrap().is_terminal(), "job {} never finished", id);
    }
    for e in sim.lock().history() {
        prop_assert!(e.from.can_transition(e.to), "{}", e.render());
    }
    Ok(())
}

/// Aggregation phrased as counts rather than predicates.
pub fn aggregate_oracle(tasks: &[JobState]) -> JobState {
    use JobState::*;
    let count = |s: JobState| tasks.iter().filter(|t| **t == s).count();
    let n = tasks.len();
    if n == 0 || count(Pending) == n {
        return Pending;
    }
    if count(Failed) > 0 {
        return Failed;
    }
    if count(Completed) == n {
        return Completed;
    }
    if count(Pending) + count(Running) > 0 {
        return Running;
    }
    if count(Timeout) > 0 {
        Timeout
    } else {
        Cancelled
    }
}

/// Every task-state combination of length up to `max`.
pub fn all_combinations(max: u32) -> Vec<Vec<JobState>> {
    let mut out = Vec::new();
    for len in 0..=max {
        for code in 0..6usize.pow(len) {
            let mut c = code;
            out.push(
                (0..len)
                    .map(|_| {
                        let s = JobState::ALL[c % 6];
                        c /= 6;
                        s
                    })
                    .collect(),
            );
        }
    }
    out
}
