//! Property suites over randomized scenarios and fabric histories.

use proptest::prelude::*;

use slicer_core::fabric::{FabricState, LatencyParams};
use slicer_core::model::{parse_cluster_config, parse_job_spec, ClusterConfig, DeviceId};
use slicer_core::scenario::parse_scenario;
use slicer_core::time::Millis;
use slicer_testkit::{arb_cluster, arb_scenario, check_determinism, run_with_checks};

proptest! {
    /// Exclusivity, conservation, gang atomicity, FIFO-with-skip dominance
    /// and timeline decomposition, audited at every event boundary.
    #[test]
    fn engine_invariants_hold_across_random_scenarios(scenario in arb_scenario()) {
        run_with_checks(&scenario);
    }

    /// Two runs of any scenario produce byte-identical logs.
    #[test]
    fn runs_are_deterministic(scenario in arb_scenario()) {
        check_determinism(&scenario);
    }

    /// Shrinking a slice request never turns a feasible slice infeasible.
    #[test]
    fn feasibility_is_monotone(scenario in arb_scenario(), job in 0usize..6, drop in 0u32..3) {
        prop_assume!(!scenario.jobs.is_empty());
        let job = &scenario.jobs[job % scenario.jobs.len()].job;
        let mut reduced = job.slice.clone();
        for req in reduced
            .devices_per_node
            .iter_mut()
            .chain(reduced.devices_per_slice.iter_mut())
        {
            req.count = req.count.saturating_sub(drop);
        }
        let before = slicer_core::check_feasible(&job.slice, &scenario.cluster);
        let after = slicer_core::check_feasible(&reduced, &scenario.cluster);
        if before.is_feasible() {
            prop_assert!(after.is_feasible());
        }
    }

    /// Documents survive a render/parse round trip unchanged.
    #[test]
    fn documents_round_trip(scenario in arb_scenario()) {
        let cluster_text = serde_json::to_string(&scenario.cluster).unwrap();
        prop_assert_eq!(parse_cluster_config(&cluster_text).unwrap(), scenario.cluster.clone());
        for entry in &scenario.jobs {
            let job_text = serde_json::to_string(&entry.job).unwrap();
            prop_assert_eq!(&parse_job_spec(&job_text).unwrap(), &entry.job);
        }
        let scenario_text = serde_json::to_string(&scenario).unwrap();
        prop_assert_eq!(&parse_scenario(&scenario_text).unwrap(), &scenario);
    }

    /// Any interleaved sequence of attach/detach pairs leaves the fabric
    /// empty, with completions serialized per node.
    #[test]
    fn fabric_attach_detach_histories_conserve_devices(
        cluster in arb_cluster(),
        ops in proptest::collection::vec((0usize..8, 0usize..5, any::<bool>()), 0..40),
    ) {
        let pool: Vec<DeviceId> = cluster.pool.iter().map(|d| d.id.clone()).collect();
        prop_assume!(!pool.is_empty());
        let params = LatencyParams {
            attach_s: Millis::from_secs(6),
            detach_s: Millis::from_secs(5),
            ..LatencyParams::default()
        };
        let mut fabric = FabricState::new(&cluster, params);
        let mut now = Millis::ZERO;
        let mut attached: Vec<(DeviceId, slicer_core::NodeId)> = Vec::new();
        for (device_pick, node_pick, do_attach) in ops {
            now += Millis::from_ms(250);
            if do_attach {
                let device = pool[device_pick % pool.len()].clone();
                let node = cluster.nodes[node_pick % cluster.nodes.len()].id.clone();
                match fabric.attach(&device, &node, now) {
                    Ok(done) => {
                        prop_assert!(done >= now + Millis::from_secs(6));
                        attached.push((device, node));
                    }
                    Err(_) => prop_assert!(attached.iter().any(|(d, _)| *d == device)),
                }
            } else if let Some((device, node)) = attached.pop() {
                fabric.detach(&device, &node, now).unwrap();
            }
            prop_assert_eq!(fabric.attached_count() + fabric.free_count(), pool.len());
            prop_assert_eq!(fabric.attached_count(), attached.len());
        }
        // drain whatever is still attached: the fabric must come back empty
        while let Some((device, node)) = attached.pop() {
            now += Millis::from_ms(250);
            fabric.detach(&device, &node, now).unwrap();
        }
        prop_assert_eq!(fabric.attached_count(), 0);
        prop_assert_eq!(fabric.free_count(), pool.len());
    }

    /// n attaches issued to one node at the same instant complete at
    /// t + k * attach_s for k = 1..n.
    #[test]
    fn per_node_attach_completions_are_arithmetic(n in 1usize..6, start_s in 0u64..100) {
        let cluster: ClusterConfig = parse_cluster_config(&format!(
            r#"{{
                "nodes": [{{"id": "n0", "cpu_cores": 1, "memory_gb": 1}}],
                "pool": [{}],
                "link_gbps": 1.0,
                "image_gb": 0.0
            }}"#,
            (0..n)
                .map(|i| format!(r#"{{"id": "d{i}", "kind": "gpu", "model": "A"}}"#))
                .collect::<Vec<_>>()
                .join(",")
        ))
        .unwrap();
        let params = LatencyParams {
            attach_s: Millis::from_secs(6),
            ..LatencyParams::default()
        };
        let mut fabric = FabricState::new(&cluster, params);
        let start = Millis::from_secs(start_s);
        for k in 1..=n {
            let done = fabric
                .attach(&DeviceId::new(format!("d{}", k - 1)), &"n0".into(), start)
                .unwrap();
            prop_assert_eq!(done, start + Millis::from_secs(6 * k as u64));
        }
    }
}
