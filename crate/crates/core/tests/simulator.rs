mod common;

use common::props::{deterministic_trace, job_mix, job_script as script, play, resource_safety, JobSpec};
use proptest::prelude::*;
use slurmbridge::sim::{NodeSpec, SimHandle, Topology};
use slurmbridge::slurm::{submit_job, JobState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn resources_are_never_overcommitted(mix in job_mix()) {
        resource_safety(mix)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn same_inputs_same_trace(mix in job_mix()) {
        deterministic_trace(mix)?;
    }

    #[test]
    fn json_round_trip_preserves_future((topology, ops) in job_mix(), tail in 1u64..1000) {
        let a = play(topology, &ops)?;
        let b = SimHandle::from_json(&a.to_json()).unwrap();
        a.lock().advance(tail);
        b.lock().advance(tail);
        prop_assert_eq!(a.to_json(), b.to_json());
    }
}

#[test]
fn advance_zero_changes_nothing() {
    let sim = SimHandle::with_topology(Topology::default());
    let mut ep = sim.endpoint();
    let spec = JobSpec {
        cpus: 1,
        gpus: 0,
        mem_mb: 100,
        duration: 5,
        limit_min: None,
        array: None,
    };
    submit_job(&mut ep, Some(&script(&spec)), "/j.sh", &[]).unwrap();
    let before = sim.to_json();
    assert!(sim.lock().advance(0).is_empty());
    assert_eq!(sim.to_json(), before);
    let events = sim.lock().advance(1);
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].to, JobState::Running);
}

#[test]
fn fifo_head_blocks_smaller_followers() {
    let topology = Topology {
        nodes: vec![NodeSpec {
            cpus: 4,
            gpus: 0,
            mem_mb: 8000,
        }],
        partitions: None,
    };
    let sim = SimHandle::with_topology(topology);
    let mut ep = sim.endpoint();
    let job = |cpus, duration| JobSpec {
        cpus,
        gpus: 0,
        mem_mb: 100,
        duration,
        limit_min: None,
        array: None,
    };
    for (i, spec) in [job(3, 100), job(4, 10), job(1, 10)].iter().enumerate() {
        submit_job(&mut ep, Some(&script(spec)), &format!("/j{i}.sh"), &[]).unwrap();
    }
    sim.lock().advance(1);
    let c = sim.lock();
    let states: Vec<JobState> = c.jobs().map(|j| j.state()).collect();
    assert_eq!(states, [JobState::Running, JobState::Pending, JobState::Pending]);
}

#[test]
fn oversized_jobs_are_skipped_not_blocking() {
    let sim = SimHandle::with_topology(Topology::default());
    let mut ep = sim.endpoint();
    let big = JobSpec {
        cpus: 64,
        gpus: 0,
        mem_mb: 100,
        duration: 5,
        limit_min: None,
        array: None,
    };
    let small = JobSpec { cpus: 1, ..big.clone() };
    let a = submit_job(&mut ep, Some(&script(&big)), "/big.sh", &[]).unwrap();
    let b = submit_job(&mut ep, Some(&script(&small)), "/small.sh", &[]).unwrap();
    sim.lock().advance(100);
    let c = sim.lock();
    assert_eq!(c.unschedulable_jobs(), vec![a.job_id]);
    assert_eq!(c.job(a.job_id).unwrap().state(), JobState::Pending);
    assert_eq!(c.job(b.job_id).unwrap().state(), JobState::Completed);
}
