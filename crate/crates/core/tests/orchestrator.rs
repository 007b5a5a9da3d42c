mod common;

use common::*;
use slurmbridge::descriptor::ParamValue;
use slurmbridge::jobscript::scan_directives;
use slurmbridge::orchestrator::{
    cancel_run, import_results, resume_run, run_status, run_workflow, run_workflow_batched, FailureStage, OutputMode,
    RunError, RunState,
};
use slurmbridge::sim::{Fault, FaultAction, FaultMatcher, ForcedOutcome};
use slurmbridge::slurm::JobState;

#[test]
fn single_batch_tiff_run_completes() {
    let h = Harness::new();
    let items = h.tiff_inputs(4);
    let mut opts = h.options();
    opts.skip_conversion = true;
    let record = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, &opts).unwrap();
    assert_eq!(record.overall_state, RunState::Done);
    assert_eq!(record.batches.len(), 1);
    assert!(record.batches[0].conversion_handle.is_none());
    let zip = record.batches[0].result_zip.clone().unwrap();
    assert_eq!(
        zip.file_name().unwrap().to_string_lossy(),
        format!("{}_batch0.zip", record.run_id)
    );
    let names: Vec<String> = zip_checksums(&zip).into_keys().collect();
    assert_eq!(
        names,
        ["img00_mask.tiff", "img01_mask.tiff", "img02_mask.tiff", "img03_mask.tiff"]
    );
    assert!(!h.remote_exists(&format!("{SCRATCH}/data/{}", record.run_id)));
    assert!(h.staging_is_empty());
}

#[test]
fn zero_items_is_done_without_remote_activity() {
    let h = Harness::new();
    h.sim.lock().clear_exec_log();
    let record = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &[], &h.options()).unwrap();
    assert_eq!(record.overall_state, RunState::Done);
    assert!(record.batches.is_empty());
    assert!(h.sim.lock().exec_log().is_empty());
}

#[test]
fn forced_failure_keeps_only_the_log() {
    let h = Harness::new();
    h.sim.lock().inject_fault(Fault {
        matcher: FaultMatcher::ScriptContains("/job.sh".into()),
        action: FaultAction::Force(ForcedOutcome::Failed),
    });
    let items = h.tiff_inputs(2);
    let record = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, &h.options()).unwrap();
    assert_eq!(record.overall_state, RunState::Failed);
    assert_eq!(record.output_artifacts.len(), 1);
    let log = &record.output_artifacts[0];
    assert!(log.to_string_lossy().ends_with(".log"), "{log:?}");
    let failure = record.batches[0].failure.as_ref().unwrap();
    assert_eq!(failure.stage, FailureStage::WorkflowFailed);
    assert_eq!(failure.logfile.as_ref(), Some(log));
    assert!(!h.remote_exists(&format!("{SCRATCH}/data/{}", record.run_id)));
    assert!(record.clone().into_result().is_err());
}

#[test]
fn batches_fail_independently() {
    let h = Harness::new();
    h.sim.lock().inject_fault(Fault {
        matcher: FaultMatcher::ScriptContains("batch1/job.sh".into()),
        action: FaultAction::Force(ForcedOutcome::Failed),
    });
    let items = h.tiff_inputs(12);
    let record =
        run_workflow_batched(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, 5, &h.options()).unwrap();
    assert_eq!(record.overall_state, RunState::PartialFailure);
    assert_eq!(record.result_zips().len(), 2);
    assert!(record.batches[1].result_zip.is_none());
    assert_eq!(record.batches[1].logs.len(), 1);
    assert_eq!(h.workflow_submissions(), 3);
}

#[test]
fn zarr_inputs_convert_first() {
    let h = Harness::new();
    let items = h.zarr_inputs(3);
    let record = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, &h.options()).unwrap();
    assert_eq!(record.overall_state, RunState::Done, "{:#?}", record.failures());
    let conv = record.batches[0].conversion_handle.as_ref().unwrap();
    assert_eq!(conv.array_tasks, vec![0, 1, 2]);
    let sim = h.sim.lock();
    let job = sim.job(conv.job_id).unwrap();
    let directives = scan_directives(&job.script_text);
    assert!(directives.iter().any(|(k, v)| k == "--array" && v == "0-2"));
    let names: Vec<String> = zip_checksums(record.batches[0].result_zip.as_ref().unwrap()).into_keys().collect();
    assert_eq!(names, ["plate0_mask.tiff", "plate1_mask.tiff", "plate2_mask.tiff"]);
}

#[test]
fn invalid_values_are_rejected_before_transfer() {
    let h = Harness::new();
    let items = h.tiff_inputs(1);
    let mut values = no_values();
    values.insert("diameter", ParamValue::String("big".into()));
    let err = run_workflow(&h.ctx, "cellpose", &descriptor(), &values, &items, &h.options()).unwrap_err();
    assert!(matches!(err, RunError::Descriptor(_)), "{err}");
    assert!(h.sim.lock().jobs().next().is_none());
}

#[test]
fn uninitialized_cluster_is_reported() {
    let h = Harness::new();
    h.sim.lock().fs.remove_tree(&format!("{SCRATCH}/singularity_images")).unwrap();
    let items = h.tiff_inputs(1);
    let err = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, &h.options()).unwrap_err();
    assert!(matches!(err, RunError::NotInitialized { .. }), "{err}");
}

#[test]
fn detached_run_resumes_and_journal_is_ordered() {
    let h = Harness::new();
    let items = h.tiff_inputs(3);
    let mut opts = h.options();
    opts.detach = true;
    let record = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, &opts).unwrap();
    assert_eq!(record.overall_state, RunState::Queued);
    let resumed = resume_run(&h.ctx, &record.run_id, &h.options()).unwrap();
    assert_eq!(resumed.overall_state, RunState::Done);
    let stages: Vec<RunState> = resumed.stage_history.iter().map(|e| e.stage).collect();
    assert!(stages.windows(2).all(|w| w[0] <= w[1]), "{stages:?}");
    let status = run_status(&h.ctx, &record.run_id, 1).unwrap();
    assert_eq!(status.state, RunState::Done);
    assert!(status.journal_tail[0].contains(" Done "), "{:?}", status.journal_tail);
}

#[test]
fn cancel_marks_batches_cancelled() {
    let h = Harness::new();
    let items = h.tiff_inputs(4);
    let mut opts = h.options();
    opts.detach = true;
    let record = run_workflow_batched(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, 2, &opts).unwrap();
    let cancelled = cancel_run(&h.ctx, &record.run_id, &h.options()).unwrap();
    assert_eq!(cancelled.overall_state, RunState::Failed);
    for b in &cancelled.batches {
        assert_eq!(b.state, Some(JobState::Cancelled));
    }
    assert!(!h.remote_exists(&format!("{SCRATCH}/data/{}", record.run_id)));
}

#[test]
fn deadline_cancels_outstanding_jobs() {
    let h = Harness::new();
    let items = h.tiff_inputs(2);
    let mut opts = h.options();
    opts.deadline = Some(std::time::Duration::from_secs(1));
    let record = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, &opts).unwrap();
    assert_eq!(record.overall_state, RunState::Failed);
    assert!(record.cancelled);
}

#[test]
fn import_modes() {
    let h = Harness::new();
    let items = h.tiff_inputs(3);
    let record =
        run_workflow_batched(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, 2, &h.options()).unwrap();
    let dest = tempfile::tempdir().unwrap();

    let zips = import_results(&record, OutputMode::SingleZip, dest.path()).unwrap();
    assert_eq!(zips.len(), 2);
    assert!(matches!(
        import_results(&record, OutputMode::SingleZip, dest.path()),
        Err(RunError::Collision(_))
    ));

    let images = import_results(&record, OutputMode::ImagesFolder, dest.path()).unwrap();
    assert_eq!(images.len(), 3);
    assert!(images.iter().all(|p| p.starts_with(dest.path().join(&record.run_id))));

    let sidecars = import_results(&record, OutputMode::SidecarAttachments, dest.path()).unwrap();
    assert_eq!(sidecars, vec![
        h.inputs_dir.path().join("img00_mask.tiff"),
        h.inputs_dir.path().join("img01_mask.tiff"),
        h.inputs_dir.path().join("img02_mask.tiff"),
    ]);
}

#[test]
fn import_without_results_fails() {
    let h = Harness::new();
    h.sim.lock().inject_fault(Fault {
        matcher: FaultMatcher::NextSubmission,
        action: FaultAction::Force(ForcedOutcome::Failed),
    });
    let items = h.tiff_inputs(1);
    let record = run_workflow(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, &h.options()).unwrap();
    let dest = tempfile::tempdir().unwrap();
    assert!(matches!(
        import_results(&record, OutputMode::ImagesFolder, dest.path()),
        Err(RunError::NoResults(_))
    ));
}

#[test]
fn corrupt_upload_fails_only_that_batch() {
    let h = Harness::new();
    let items = h.tiff_inputs(2);
    h.sim.lock().inject_corrupt_transfers(1);
    let mut opts = h.options();
    opts.parallelism = 1;
    let record = run_workflow_batched(&h.ctx, "cellpose", &descriptor(), &no_values(), &items, 1, &opts).unwrap();
    assert_eq!(record.overall_state, RunState::PartialFailure);
    assert_eq!(record.batches[0].failure.as_ref().unwrap().stage, FailureStage::TransferFailed);
    assert!(record.batches[1].succeeded());
    assert_eq!(h.workflow_submissions(), 1);
}
