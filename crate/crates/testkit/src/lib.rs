//! Test-only machinery shared by the unit, property and acceptance suites:
//! random-but-bounded scenario generation and independent invariant
//! checkers that audit an engine run from the outside.
//!
//! Nothing here is used by production code. The checkers deliberately work
//! from public snapshots (cluster view, event log, job specs) and re-derive
//! expectations with their own arithmetic, so a bookkeeping bug inside the
//! engine cannot hide itself.

use std::collections::BTreeMap;

use proptest::prelude::*;

use slicer_core::engine::{DeviceState, Engine, EngineOptions, Event, EventKind, ExecMode};
use slicer_core::fabric::LatencyParams;
use slicer_core::model::{
    ClusterConfig, Device, DeviceClass, DeviceId, DeviceKind, DeviceRequest, JobId, JobKind,
    JobSpec, NodeId, NodeSpec, SliceSpec, TaskSpec,
};
use slicer_core::scenario::{Scenario, ScenarioJob};
use slicer_core::time::Millis;
use slicer_core::SlicePhase;

/// Generates a small cluster: 1-5 nodes and up to three device classes.
pub fn arb_cluster() -> impl Strategy<Value = ClusterConfig> {
    (
        1usize..=5,
        0usize..=4,
        0usize..=2,
        0usize..=3,
        prop_oneof![Just(0.5f64), Just(1.0), Just(10.0)],
        prop_oneof![Just(0.0f64), Just(0.5), Just(3.0)],
        arb_params(),
    )
        .prop_map(|(nodes, gpu_a, gpu_b, nvme, link_gbps, image_gb, fabric_params)| {
            let mut pool = Vec::new();
            for i in 0..gpu_a {
                pool.push(Device {
                    id: DeviceId::new(format!("ga{i}")),
                    class: DeviceClass::new(DeviceKind::Gpu, "A"),
                });
            }
            for i in 0..gpu_b {
                pool.push(Device {
                    id: DeviceId::new(format!("gb{i}")),
                    class: DeviceClass::new(DeviceKind::Gpu, "B"),
                });
            }
            for i in 0..nvme {
                pool.push(Device {
                    id: DeviceId::new(format!("nv{i}")),
                    class: DeviceClass::new(DeviceKind::Nvme, "C"),
                });
            }
            ClusterConfig {
                nodes: (0..nodes)
                    .map(|i| NodeSpec {
                        id: NodeId::new(format!("n{i}")),
                        cpu_cores: 8,
                        memory_gb: 64,
                    })
                    .collect(),
                pool,
                link_gbps,
                image_gb,
                fabric_params,
            }
        })
}

pub fn arb_params() -> impl Strategy<Value = LatencyParams> {
    (
        0u64..=8,
        0u64..=8,
        0u64..=30,
        0u64..=8,
        0u64..=8,
        0u64..=12,
    )
        .prop_map(|(attach, detach, boot, prepare, launch, destroy)| LatencyParams {
            attach_s: Millis::from_secs(attach),
            detach_s: Millis::from_secs(detach),
            machine_boot_s: Millis::from_secs(boot),
            prepare_s: Millis::from_secs(prepare),
            launch_per_device_s: Millis::from_secs(launch),
            destroy_s: Millis::from_secs(destroy),
            bandwidth_ratio: 0.2,
        })
}

fn arb_job(index: usize, cluster: ClusterConfig) -> impl Strategy<Value = JobSpec> {
    let max_nodes = cluster.nodes.len() as u32;
    let pool = cluster.pool_by_class();
    let gpu_a = pool
        .get(&DeviceClass::new(DeviceKind::Gpu, "A"))
        .copied()
        .unwrap_or(0);
    let nvme = pool
        .get(&DeviceClass::new(DeviceKind::Nvme, "C"))
        .copied()
        .unwrap_or(0);
    (
        1u32..=max_nodes,
        0u32..=2,
        0u32..=2,
        1u64..=120_000,
        proptest::option::weighted(0.15, 1u64..=90_000),
    )
        .prop_map(move |(node_count, gpus, extras, duration_ms, timeout_ms)| {
            // clamp the request so the job stays feasible on this cluster
            let gpus = gpus.min(gpu_a.checked_div(node_count).unwrap_or(0));
            let extras = extras.min(nvme);
            let mut devices_per_node = Vec::new();
            if gpus > 0 {
                devices_per_node.push(DeviceRequest {
                    class: DeviceClass::new(DeviceKind::Gpu, "A"),
                    count: gpus,
                });
            }
            let mut devices_per_slice = Vec::new();
            if extras > 0 {
                devices_per_slice.push(DeviceRequest {
                    class: DeviceClass::new(DeviceKind::Nvme, "C"),
                    count: extras,
                });
            }
            let kind = if node_count == 1 {
                JobKind::SingleNode
            } else {
                JobKind::MultiNode
            };
            let tasks = (0..node_count)
                .map(|t| TaskSpec {
                    name: format!("t{t}"),
                    duration_s: Some(Millis::from_ms(duration_ms)),
                    command: None,
                    timeout_s: timeout_ms.map(Millis::from_ms),
                    node_index: None,
                })
                .collect();
            JobSpec {
                id: JobId::new(format!("job{index}")),
                kind,
                slice: SliceSpec {
                    node_count,
                    devices_per_node,
                    devices_per_slice,
                },
                tasks,
            }
        })
}

/// Generates a whole scenario: cluster, up to six feasible jobs submitted at
/// nondecreasing times, and a FIFO strictness flag.
pub fn arb_scenario() -> impl Strategy<Value = Scenario> {
    (arb_cluster(), 0usize..=6, any::<bool>())
        .prop_flat_map(|(cluster, job_count, strict_fifo)| {
            let jobs = (0..job_count)
                .map(|i| arb_job(i, cluster.clone()))
                .collect::<Vec<_>>();
            let times = proptest::collection::vec(0u64..=60_000, job_count);
            (Just(cluster), jobs, times, Just(strict_fifo))
        })
        .prop_map(|(cluster, jobs, mut times, strict_fifo)| {
            times.sort_unstable();
            Scenario {
                cluster,
                jobs: jobs
                    .into_iter()
                    .zip(times)
                    .map(|(job, t)| ScenarioJob {
                        submit_time_s: Millis::from_ms(t),
                        job,
                    })
                    .collect(),
                latency_params: None,
                seed: 0,
                strict_fifo,
            }
        })
}

/// Audits one engine state snapshot. Panics with a description on any
/// violation.
pub fn check_invariants(engine: &Engine, scenario: &Scenario) {
    let view = engine.cluster_view();
    let pool_size = scenario.cluster.pool.len();

    // conservation: every device is in exactly one of free/reserved/attached,
    // and the engine's own free-set agrees with the snapshot
    let mut free = 0usize;
    let mut reserved = 0usize;
    let mut attached = 0usize;
    let mut attached_per_node: BTreeMap<NodeId, Vec<DeviceId>> = BTreeMap::new();
    for device in &view.devices {
        match &device.state {
            DeviceState::Free => free += 1,
            DeviceState::Reserved { .. } => reserved += 1,
            DeviceState::Attached { node, .. } => {
                attached += 1;
                attached_per_node
                    .entry(node.clone())
                    .or_default()
                    .push(device.id.clone());
            }
        }
    }
    assert_eq!(
        free + reserved + attached,
        pool_size,
        "conservation violated at t={}",
        view.time_s
    );
    assert_eq!(
        engine.free_device_count(),
        free,
        "engine free-set disagrees with cluster view at t={}",
        view.time_s
    );
    assert_eq!(
        engine.attached_device_count(),
        attached,
        "fabric attachment count disagrees with cluster view at t={}",
        view.time_s
    );

    // exclusivity: an attached device's node must be held by the same job
    for device in &view.devices {
        if let DeviceState::Attached { node, job } = &device.state {
            let holder = view
                .nodes
                .iter()
                .find(|n| &n.id == node)
                .and_then(|n| n.job.clone());
            assert_eq!(
                holder.as_ref(),
                Some(job),
                "device {} attached to node {} that job {} does not hold",
                device.id,
                node,
                job
            );
        }
    }

    // gang atomicity: active slices hold exactly their request, queued and
    // terminal slices hold nothing
    for id in engine.job_ids() {
        let status = engine.job_status(id).expect("known job");
        let spec = &engine.slice(id).unwrap().job.slice;
        match status.phase {
            SlicePhase::Queued => {
                assert!(
                    status.assigned_nodes.is_empty(),
                    "queued job {id} holds nodes"
                );
            }
            SlicePhase::Done | SlicePhase::Failed => {}
            _ => {
                assert_eq!(
                    status.assigned_nodes.len(),
                    spec.node_count as usize,
                    "active job {id} holds a partial gang of nodes"
                );
                let mut held: BTreeMap<DeviceClass, u32> = BTreeMap::new();
                for devices in status.assigned_devices.values() {
                    for device in devices {
                        let class = scenario
                            .cluster
                            .pool
                            .iter()
                            .find(|d| &d.id == device)
                            .expect("assigned device exists in pool")
                            .class
                            .clone();
                        *held.entry(class).or_insert(0) += 1;
                    }
                }
                for (class, demand) in spec.class_demand() {
                    assert_eq!(
                        held.get(&class).copied().unwrap_or(0),
                        demand,
                        "active job {id} holds wrong count of {class}"
                    );
                }
            }
        }
    }

    // liveness side of FIFO-with-skip: after the passes that ran, no queued
    // job may still fit in the free pool (in strict mode only the head is
    // guaranteed to be blocked)
    let mut free_by_class: BTreeMap<DeviceClass, usize> = BTreeMap::new();
    for device in &view.devices {
        if matches!(device.state, DeviceState::Free) {
            *free_by_class.entry(device.class.clone()).or_insert(0) += 1;
        }
    }
    let free_nodes = view.nodes.iter().filter(|n| n.job.is_none()).count();
    let queued: Vec<&JobId> = engine.queued_ids().collect();
    let check_ids: &[&JobId] = if scenario.strict_fifo {
        &queued[..queued.len().min(1)]
    } else {
        &queued[..]
    };
    for id in check_ids {
        let spec = &engine.slice(id).unwrap().job.slice;
        let fits = free_nodes >= spec.node_count as usize
            && spec.class_demand().iter().all(|(class, demand)| {
                free_by_class.get(class).copied().unwrap_or(0) >= *demand as usize
            });
        assert!(
            !fits,
            "job {id} is satisfiable but left queued at t={}",
            view.time_s
        );
    }
}

/// Replays the event log against an independent FIFO-with-skip allocator
/// that only tracks node and per-class device counts, and asserts the
/// engine allocated exactly the jobs the policy demands, in the same order.
pub fn check_fifo_replay(scenario: &Scenario, events: &[Event]) {
    let specs: BTreeMap<JobId, &JobSpec> = scenario
        .jobs
        .iter()
        .map(|j| (j.job.id.clone(), &j.job))
        .collect();

    let mut free_nodes = scenario.cluster.nodes.len() as i64;
    let mut free: BTreeMap<DeviceClass, i64> = BTreeMap::new();
    for device in &scenario.cluster.pool {
        *free.entry(device.class.clone()).or_insert(0) += 1;
    }
    let mut queue: Vec<JobId> = Vec::new();
    let mut allocated: Vec<JobId> = Vec::new();
    let mut expected_allocations: Vec<JobId> = Vec::new();

    let run_pass = |queue: &mut Vec<JobId>,
                        free_nodes: &mut i64,
                        free: &mut BTreeMap<DeviceClass, i64>,
                        expected: &mut Vec<JobId>| {
        let mut remaining = Vec::new();
        let mut blocked = false;
        for id in queue.drain(..) {
            if blocked {
                remaining.push(id);
                continue;
            }
            let spec = &specs[&id].slice;
            let fits = *free_nodes >= spec.node_count as i64
                && spec
                    .class_demand()
                    .iter()
                    .all(|(class, demand)| free.get(class).copied().unwrap_or(0) >= *demand as i64);
            if fits {
                *free_nodes -= spec.node_count as i64;
                for (class, demand) in spec.class_demand() {
                    *free.get_mut(&class).unwrap() -= demand as i64;
                }
                expected.push(id);
            } else {
                if scenario.strict_fifo {
                    blocked = true;
                }
                remaining.push(id);
            }
        }
        *queue = remaining;
    };

    for event in events {
        match event.kind {
            EventKind::Submitted => {
                queue.push(event.job_id.clone());
                run_pass(&mut queue, &mut free_nodes, &mut free, &mut expected_allocations);
            }
            EventKind::Allocated => {
                allocated.push(event.job_id.clone());
            }
            EventKind::Completed | EventKind::Failed => {
                // queue-cancelled jobs fail without ever holding resources
                if allocated.contains(&event.job_id) {
                    let spec = &specs[&event.job_id].slice;
                    free_nodes += spec.node_count as i64;
                    for (class, demand) in spec.class_demand() {
                        *free.get_mut(&class).unwrap() += demand as i64;
                    }
                } else {
                    queue.retain(|q| q != &event.job_id);
                }
                run_pass(&mut queue, &mut free_nodes, &mut free, &mut expected_allocations);
            }
            _ => {}
        }
    }

    assert_eq!(
        allocated, expected_allocations,
        "engine allocations diverge from the FIFO-with-skip oracle"
    );
}

/// Runs a scenario stepping one event boundary at a time, auditing the
/// engine at every step, then replays the log against the FIFO oracle and
/// verifies every finished timeline decomposes exactly.
pub fn run_with_checks(scenario: &Scenario) -> Vec<Event> {
    let mut engine = Engine::new(
        scenario.cluster.clone(),
        EngineOptions {
            params: scenario.latency_params.clone(),
            seed: scenario.seed,
            strict_fifo: scenario.strict_fifo,
            mode: ExecMode::Simulated,
        },
    )
    .expect("generated scenarios are valid");

    let mut last_phase: BTreeMap<JobId, SlicePhase> = BTreeMap::new();
    let mut step = |engine: &mut Engine, to: Millis| {
        engine.advance(to).expect("monotone advance");
        check_invariants(engine, scenario);
        for id in engine.job_ids() {
            let phase = engine.job_status(id).unwrap().phase;
            if let Some(prev) = last_phase.get(id) {
                assert!(
                    phase >= *prev,
                    "job {id} moved backwards: {prev:?} -> {phase:?}"
                );
            }
            last_phase.insert(id.clone(), phase);
        }
    };

    for entry in &scenario.jobs {
        while let Some(due) = engine.next_due() {
            if due >= entry.submit_time_s {
                break;
            }
            step(&mut engine, due);
        }
        step(&mut engine, entry.submit_time_s);
        engine
            .submit(entry.job.clone())
            .expect("generated jobs are feasible");
        check_invariants(&engine, scenario);
    }
    while let Some(due) = engine.next_due() {
        step(&mut engine, due);
    }
    assert!(engine.is_quiescent(), "engine did not quiesce");

    // every submitted job must have finished (feasible + FIFO liveness)
    for entry in &scenario.jobs {
        let status = engine.job_status(&entry.job.id).expect("known job");
        assert!(
            status.phase.is_terminal(),
            "job {} ended in {:?}",
            entry.job.id,
            status.phase
        );
        let timeline = engine.timeline_of(&entry.job.id).expect("terminal");
        timeline.validate().expect("contiguous ordered timeline");
        let phase_sum: u64 = timeline
            .intervals()
            .iter()
            .map(|(_, iv)| iv.duration().as_ms())
            .sum();
        assert_eq!(
            phase_sum,
            timeline.makespan().as_ms(),
            "phases of {} do not sum to its makespan",
            entry.job.id
        );
    }

    check_fifo_replay(scenario, engine.events());
    check_event_log_shape(engine.events());
    engine.events().to_vec()
}

/// Log-level invariants: timestamps never decrease, and every phase-start
/// has a matching later phase-end for each job.
pub fn check_event_log_shape(events: &[Event]) {
    for pair in events.windows(2) {
        assert!(
            pair[0].time_s <= pair[1].time_s,
            "event log timestamps regress: {pair:?}"
        );
    }
    use slicer_core::engine::EventKind::*;
    let pairs = [
        (AttachDeviceStart, AttachDeviceEnd),
        (LaunchMachineStart, LaunchMachineEnd),
        (PrepareTaskStart, PrepareTaskEnd),
        (LaunchTaskStart, LaunchTaskEnd),
        (RunTaskStart, RunTaskEnd),
        (DetachDeviceStart, DetachDeviceEnd),
        (DestroyMachineStart, DestroyMachineEnd),
    ];
    let mut jobs: Vec<JobId> = events.iter().map(|e| e.job_id.clone()).collect();
    jobs.sort();
    jobs.dedup();
    for job in &jobs {
        for (start, end) in pairs {
            let starts: Vec<usize> = events
                .iter()
                .enumerate()
                .filter(|(_, e)| &e.job_id == job && e.kind == start)
                .map(|(i, _)| i)
                .collect();
            let ends: Vec<usize> = events
                .iter()
                .enumerate()
                .filter(|(_, e)| &e.job_id == job && e.kind == end)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(
                starts.len(),
                ends.len(),
                "{job}: {start:?} and {end:?} counts differ"
            );
            for (s, e) in starts.iter().zip(&ends) {
                assert!(s < e, "{job}: {end:?} precedes its {start:?}");
            }
        }
    }
}

/// Runs the scenario twice and asserts the serialized logs are identical.
pub fn check_determinism(scenario: &Scenario) {
    let first = slicer_core::scenario::run(scenario).expect("first run");
    let second = slicer_core::scenario::run(scenario).expect("second run");
    let a = slicer_core::engine::events_to_jsonl(&first.events);
    let b = slicer_core::engine::events_to_jsonl(&second.events);
    assert_eq!(a, b, "two runs of the same scenario diverged");
}
