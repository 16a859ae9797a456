//! Benchmark-only crate; see `benches/engine.rs`.

use slicer_core::engine::{Engine, EngineOptions};
use slicer_core::fabric::LatencyParams;
use slicer_core::model::{
    ClusterConfig, Device, DeviceClass, DeviceId, DeviceKind, DeviceRequest, JobId, JobKind,
    JobSpec, NodeId, NodeSpec, SliceSpec, TaskSpec,
};
use slicer_core::time::Millis;

/// A square cluster: `nodes` nodes and two GPUs per node in the pool.
pub fn big_cluster(nodes: usize) -> ClusterConfig {
    ClusterConfig {
        nodes: (0..nodes)
            .map(|i| NodeSpec {
                id: NodeId::new(format!("n{i:03}")),
                cpu_cores: 16,
                memory_gb: 256,
            })
            .collect(),
        pool: (0..nodes * 2)
            .map(|i| Device {
                id: DeviceId::new(format!("g{i:03}")),
                class: DeviceClass::new(DeviceKind::Gpu, "A"),
            })
            .collect(),
        link_gbps: 10.0,
        image_gb: 3.0,
        fabric_params: LatencyParams::default(),
    }
}

pub fn small_job(index: usize) -> JobSpec {
    JobSpec {
        id: JobId::new(format!("job{index:04}")),
        kind: JobKind::SingleNode,
        slice: SliceSpec {
            node_count: 1,
            devices_per_node: vec![DeviceRequest {
                class: DeviceClass::new(DeviceKind::Gpu, "A"),
                count: 2,
            }],
            devices_per_slice: Vec::new(),
        },
        tasks: vec![TaskSpec {
            name: "t".to_string(),
            duration_s: Some(Millis::from_secs(60)),
            command: None,
            timeout_s: None,
            node_index: None,
        }],
    }
}

/// Saturates a cluster with `jobs` one-node jobs and runs to quiescence.
pub fn churn(nodes: usize, jobs: usize) -> usize {
    let mut engine = Engine::new(big_cluster(nodes), EngineOptions::default()).unwrap();
    for i in 0..jobs {
        engine.submit(small_job(i)).unwrap();
    }
    engine.run_to_quiescence().unwrap();
    engine.events().len()
}
