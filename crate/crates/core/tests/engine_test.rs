//! Engine lifecycle tests against hand-computed oracles.

use slicer_core::engine::{Engine, EngineError, EngineOptions, EventKind, ExecMode, SubmitError};
use slicer_core::fabric::LatencyParams;
use slicer_core::model::{
    DeviceClass, DeviceKind, DeviceRequest, JobId, JobKind, JobSpec, SliceSpec, TaskSpec,
};
use slicer_core::scenario::{self, reference_cluster};
use slicer_core::time::Millis;
use slicer_core::SlicePhase;

/// attach 6, boot 30, prepare 5, launch 4, detach 5, destroy 10 — the
/// worked example used throughout these tests.
fn example_params() -> LatencyParams {
    LatencyParams {
        attach_s: Millis::from_secs(6),
        detach_s: Millis::from_secs(5),
        machine_boot_s: Millis::from_secs(30),
        prepare_s: Millis::from_secs(5),
        launch_per_device_s: Millis::from_secs(4),
        destroy_s: Millis::from_secs(10),
        bandwidth_ratio: 0.2,
    }
}

fn engine_with(params: LatencyParams) -> Engine {
    Engine::new(
        reference_cluster(),
        EngineOptions {
            params: Some(params),
            seed: 0,
            strict_fifo: false,
            mode: ExecMode::Simulated,
        },
    )
    .unwrap()
}

fn gpu_job(id: &str, nodes: u32, gpus: u32, model: &str, run_s: f64) -> JobSpec {
    let duration = Millis::from_secs_f64(run_s).unwrap();
    JobSpec {
        id: JobId::new(id),
        kind: if nodes == 1 {
            JobKind::SingleNode
        } else {
            JobKind::MultiNode
        },
        slice: SliceSpec {
            node_count: nodes,
            devices_per_node: if gpus > 0 {
                vec![DeviceRequest {
                    class: DeviceClass::new(DeviceKind::Gpu, model),
                    count: gpus,
                }]
            } else {
                Vec::new()
            },
            devices_per_slice: Vec::new(),
        },
        tasks: (0..nodes)
            .map(|i| TaskSpec {
                name: format!("t{i}"),
                duration_s: Some(duration),
                command: None,
                timeout_s: None,
                node_index: None,
            })
            .collect(),
    }
}

#[test]
fn single_node_single_device_lifecycle_makespan() {
    // attach 6 + (boot 30 + image 24) + prepare 5 + launch 4 + run 100
    // + detach 5 + destroy 10 = 184 s
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("j", 1, 1, "P100", 100.0)).unwrap();
    engine.run_to_quiescence().unwrap();
    let timeline = engine.timeline_of(&"j".into()).unwrap();
    assert_eq!(timeline.attach_device.duration(), Millis::from_secs(6));
    assert_eq!(timeline.launch_machine.duration(), Millis::from_secs(54));
    assert_eq!(timeline.prepare_task.duration(), Millis::from_secs(5));
    assert_eq!(timeline.launch_task.duration(), Millis::from_secs(4));
    assert_eq!(timeline.run_task.duration(), Millis::from_secs(100));
    assert_eq!(timeline.detach_device.duration(), Millis::from_secs(5));
    assert_eq!(timeline.destroy_machine.duration(), Millis::from_secs(10));
    assert_eq!(timeline.makespan(), Millis::from_secs(184));
}

#[test]
fn four_concurrent_downloads_share_the_link() {
    // 4 nodes pull 3 GB each over the shared 1 Gbps link: 96 s per node
    // against 24 s solo, so launch-machine runs 30 + 96 = 126 s.
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("j", 4, 1, "P100", 50.0)).unwrap();
    engine.run_to_quiescence().unwrap();
    let timeline = engine.timeline_of(&"j".into()).unwrap();
    assert_eq!(timeline.launch_machine.duration(), Millis::from_secs(126));
}

#[test]
fn attach_phase_serializes_per_node() {
    // 4 GPUs on one node attach at 6 s each: the phase lasts 24 s.
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("j", 1, 4, "P100", 10.0)).unwrap();
    engine.run_to_quiescence().unwrap();
    let timeline = engine.timeline_of(&"j".into()).unwrap();
    assert_eq!(timeline.attach_device.duration(), Millis::from_secs(24));
    // detach mirrors at 5 s per device
    assert_eq!(timeline.detach_device.duration(), Millis::from_secs(20));
    // task launch is 4 s per attached device
    assert_eq!(timeline.launch_task.duration(), Millis::from_secs(16));
}

#[test]
fn second_job_waits_for_the_first_to_destroy() {
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("a", 1, 4, "P100", 50.0)).unwrap();
    engine.submit(gpu_job("b", 1, 4, "P100", 50.0)).unwrap();
    assert_eq!(
        engine.job_status(&"b".into()).unwrap().phase,
        SlicePhase::Queued
    );
    assert_eq!(
        engine.job_status(&"b".into()).unwrap().queue_position,
        Some(0)
    );
    engine.run_to_quiescence().unwrap();
    let a = engine.timeline_of(&"a".into()).unwrap();
    let b = engine.timeline_of(&"b".into()).unwrap();
    assert_eq!(b.attach_device.start_s, a.destroy_machine.end_s);
}

#[test]
fn infeasible_submissions_are_rejected_with_the_constraint() {
    let mut engine = engine_with(example_params());
    let err = engine.submit(gpu_job("big", 5, 0, "P100", 1.0)).unwrap_err();
    match err {
        SubmitError::Infeasible(constraint) => {
            assert!(constraint.contains("node_count exceeds cluster"), "{constraint}");
        }
        other => panic!("expected infeasible, got {other}"),
    }
    let err = engine.submit(gpu_job("greedy", 2, 3, "P100", 1.0)).unwrap_err();
    assert!(matches!(err, SubmitError::Infeasible(_)));
}

#[test]
fn sharing_scenario_first_pass_allocates_slice1_and_slice3() {
    let scenario = scenario::sharing_4slices();
    let mut engine = Engine::new(scenario.cluster.clone(), EngineOptions::default()).unwrap();
    for entry in &scenario.jobs {
        engine.submit(entry.job.clone()).unwrap();
    }
    let phase = |id: &str| engine.job_status(&id.into()).unwrap().phase;
    assert_eq!(phase("slice1"), SlicePhase::Attaching);
    assert_eq!(phase("slice2"), SlicePhase::Queued);
    assert_eq!(phase("slice3"), SlicePhase::Attaching);
    assert_eq!(phase("slice4"), SlicePhase::Queued);
    // slice2 ahead of slice4 in the queue
    assert_eq!(
        engine.job_status(&"slice2".into()).unwrap().queue_position,
        Some(0)
    );
    assert_eq!(
        engine.job_status(&"slice4".into()).unwrap().queue_position,
        Some(1)
    );
}

#[test]
fn saturating_job_empties_the_pool_and_frees_it_back() {
    let mut engine = engine_with(example_params());
    // 4 nodes x 1 P100 plus the P40 and all 4 SSDs via slice-level extras
    let mut job = gpu_job("all", 4, 1, "P100", 10.0);
    job.slice.devices_per_slice = vec![
        DeviceRequest {
            class: DeviceClass::new(DeviceKind::Gpu, "P40"),
            count: 1,
        },
        DeviceRequest {
            class: DeviceClass::new(DeviceKind::Nvme, "SSD750"),
            count: 4,
        },
    ];
    engine.submit(job).unwrap();
    assert_eq!(engine.free_device_count(), 0);
    assert_eq!(engine.free_node_count(), 0);
    engine.run_to_quiescence().unwrap();
    assert_eq!(engine.free_device_count(), 9);
    assert_eq!(engine.free_node_count(), 4);
}

#[test]
fn advancing_an_idle_engine_moves_only_the_clock() {
    let mut engine = engine_with(example_params());
    engine.advance(Millis::from_secs(100)).unwrap();
    assert_eq!(engine.clock(), Millis::from_secs(100));
    assert!(engine.events().is_empty());
}

#[test]
fn time_regression_is_rejected() {
    let mut engine = engine_with(example_params());
    engine.advance(Millis::from_secs(10)).unwrap();
    assert!(matches!(
        engine.advance(Millis::from_secs(5)),
        Err(EngineError::TimeRegression { .. })
    ));
}

#[test]
fn advancing_past_run_completion_triggers_teardown_events() {
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("j", 1, 1, "P100", 100.0)).unwrap();
    // run ends at 69 + 100 = 169; advance to just before detach finishes
    engine.advance(Millis::from_secs(170)).unwrap();
    assert_eq!(
        engine.job_status(&"j".into()).unwrap().phase,
        SlicePhase::Detaching
    );
    assert!(engine
        .events()
        .iter()
        .any(|e| e.kind == EventKind::DetachDeviceStart));
}

#[test]
fn identical_runs_produce_identical_event_logs() {
    let run = || {
        let output = scenario::run(&scenario::sharing_4slices()).unwrap();
        slicer_core::engine::events_to_jsonl(&output.events)
    };
    assert_eq!(run(), run());
}

#[test]
fn timeline_of_active_or_unknown_jobs_errors() {
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("j", 1, 1, "P100", 100.0)).unwrap();
    assert!(matches!(
        engine.timeline_of(&"j".into()),
        Err(EngineError::StillActive(_))
    ));
    assert!(matches!(
        engine.timeline_of(&"ghost".into()),
        Err(EngineError::UnknownJob(_))
    ));
}

#[test]
fn task_timeout_fails_the_slice_but_cleans_up() {
    let mut engine = engine_with(example_params());
    let mut job = gpu_job("j", 2, 1, "P100", 100.0);
    // second rank times out at 40 s; gang barrier still waits for rank 0
    job.tasks[1].timeout_s = Some(Millis::from_secs(40));
    engine.submit(job).unwrap();
    engine.run_to_quiescence().unwrap();
    let status = engine.job_status(&"j".into()).unwrap();
    assert_eq!(status.phase, SlicePhase::Failed);
    assert!(status.failure_reason.as_deref().unwrap().contains("timed out"));
    // run phase truncated at neither task: rank0 runs the full 100 s
    let timeline = engine.timeline_of(&"j".into()).unwrap();
    assert_eq!(timeline.run_task.duration(), Millis::from_secs(100));
    // detach/destroy really ran and devices are home
    assert_eq!(timeline.detach_device.duration(), Millis::from_secs(5));
    assert_eq!(timeline.destroy_machine.duration(), Millis::from_secs(10));
    assert_eq!(engine.free_device_count(), 9);
    assert!(engine
        .events()
        .iter()
        .any(|e| e.kind == EventKind::Failed && e.job_id.as_str() == "j"));
}

#[test]
fn all_tasks_timing_out_truncate_the_run_phase() {
    let mut engine = engine_with(example_params());
    let mut job = gpu_job("j", 1, 1, "P100", 100.0);
    job.tasks[0].timeout_s = Some(Millis::from_secs(40));
    engine.submit(job).unwrap();
    engine.run_to_quiescence().unwrap();
    let timeline = engine.timeline_of(&"j".into()).unwrap();
    assert_eq!(timeline.run_task.duration(), Millis::from_secs(40));
    assert_eq!(
        engine.job_status(&"j".into()).unwrap().phase,
        SlicePhase::Failed
    );
}

#[test]
fn cancelling_a_queued_job_fails_it_immediately() {
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("a", 1, 4, "P100", 50.0)).unwrap();
    engine.submit(gpu_job("b", 1, 4, "P100", 50.0)).unwrap();
    engine.cancel(&"b".into()).unwrap();
    let status = engine.job_status(&"b".into()).unwrap();
    assert_eq!(status.phase, SlicePhase::Failed);
    assert_eq!(status.failure_reason.as_deref(), Some("cancelled"));
    // cancelling again reports the job as finished
    assert!(matches!(
        engine.cancel(&"b".into()),
        Err(EngineError::AlreadyFinished(_))
    ));
    engine.run_to_quiescence().unwrap();
    assert_eq!(engine.job_status(&"a".into()).unwrap().phase, SlicePhase::Done);
}

#[test]
fn cancelling_an_active_slice_tears_it_down_after_the_current_phase() {
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("j", 1, 2, "P100", 100.0)).unwrap();
    // cancel mid-attach (attach runs to 12 s)
    engine.advance(Millis::from_secs(3)).unwrap();
    engine.cancel(&"j".into()).unwrap();
    engine.run_to_quiescence().unwrap();
    let status = engine.job_status(&"j".into()).unwrap();
    assert_eq!(status.phase, SlicePhase::Failed);
    assert_eq!(status.failure_reason.as_deref(), Some("cancelled"));
    let timeline = engine.timeline_of(&"j".into()).unwrap();
    // attach completed, skipped phases are zero-width, teardown is real
    assert_eq!(timeline.attach_device.duration(), Millis::from_secs(12));
    assert_eq!(timeline.launch_machine.duration(), Millis::ZERO);
    assert_eq!(timeline.run_task.duration(), Millis::ZERO);
    assert_eq!(timeline.detach_device.duration(), Millis::from_secs(10));
    assert_eq!(timeline.destroy_machine.duration(), Millis::from_secs(10));
    assert_eq!(engine.free_device_count(), 9);
}

#[test]
fn command_tasks_are_rejected_in_simulated_mode() {
    let mut engine = engine_with(example_params());
    let mut job = gpu_job("j", 1, 1, "P100", 1.0);
    job.tasks[0].duration_s = None;
    job.tasks[0].command = Some("true".to_string());
    assert!(matches!(
        engine.submit(job),
        Err(SubmitError::Invalid(_))
    ));
}

#[test]
fn duplicate_job_ids_are_rejected() {
    let mut engine = engine_with(example_params());
    engine.submit(gpu_job("j", 1, 1, "P100", 1.0)).unwrap();
    assert!(matches!(
        engine.submit(gpu_job("j", 1, 1, "P100", 1.0)),
        Err(SubmitError::Duplicate(_))
    ));
}

#[test]
fn launch_machine_grows_with_node_count_and_attach_with_density() {
    // the qualitative trends: more nodes stretch launch-machine (shared
    // link), more devices per node stretch attach and launch-task
    let configs = [(4u32, 1u32), (2, 2), (1, 4)];
    let mut by_nodes = Vec::new();
    let mut by_density = Vec::new();
    for (nodes, gpus) in configs {
        let mut engine = engine_with(LatencyParams::default());
        engine
            .submit(gpu_job("j", nodes, gpus, "P100", 100.0))
            .unwrap();
        engine.run_to_quiescence().unwrap();
        let t = engine.timeline_of(&"j".into()).unwrap();
        by_nodes.push((nodes, t.launch_machine.duration()));
        by_density.push((
            gpus,
            t.attach_device.duration() + t.launch_task.duration(),
        ));
    }
    by_nodes.sort_by_key(|(n, _)| *n);
    assert!(by_nodes[0].1 < by_nodes[1].1 && by_nodes[1].1 < by_nodes[2].1);
    by_density.sort_by_key(|(g, _)| *g);
    assert!(by_density[0].1 < by_density[1].1 && by_density[1].1 < by_density[2].1);
}
