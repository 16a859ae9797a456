//! Scenario documents and the offline simulation driver, plus the bundled
//! reference scenarios used by the acceptance suite.
//!
//! A scenario is a cluster, a list of timed job submissions, an optional
//! latency-parameter override and a seed. Running one is fully
//! deterministic: the same document always yields byte-identical outputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineOptions, Event, ExecMode, SubmitError};
use crate::fabric::LatencyParams;
use crate::model::{
    ClusterConfig, Device, DeviceClass, DeviceId, DeviceKind, DeviceRequest, JobId, JobKind,
    JobSpec, ModelError, NodeId, NodeSpec, SliceSpec, TaskSpec, Timeline,
};
use crate::time::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioJob {
    pub submit_time_s: Millis,
    pub job: JobSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub cluster: ClusterConfig,
    pub jobs: Vec<ScenarioJob>,
    /// Overrides `cluster.fabric_params` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_params: Option<LatencyParams>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict_fifo: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.cluster.validate()?;
        let mut last = Millis::ZERO;
        for entry in &self.jobs {
            if entry.submit_time_s < last {
                return Err(ModelError::Invalid {
                    what: "scenario",
                    detail: format!(
                        "submit times must be nondecreasing; {} comes after {}",
                        entry.submit_time_s, last
                    ),
                });
            }
            last = entry.submit_time_s;
            entry.job.validate()?;
        }
        if let Some(params) = &self.latency_params {
            params.validate().map_err(|e| ModelError::Invalid {
                what: "scenario",
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ModelError> {
    let scenario: Scenario = serde_json::from_str(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Everything an offline run produces.
#[derive(Debug)]
pub struct RunOutput {
    /// Jobs in submission order with their final timelines.
    pub timelines: Vec<(JobId, Timeline)>,
    pub events: Vec<Event>,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("job {id}: {source}")]
    Submit { id: JobId, source: SubmitError },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

/// Runs a scenario to quiescence on the virtual clock.
pub fn run(scenario: &Scenario) -> Result<RunOutput, RunError> {
    scenario.validate()?;
    let mut engine = Engine::new(
        scenario.cluster.clone(),
        EngineOptions {
            params: scenario.latency_params.clone(),
            seed: scenario.seed,
            strict_fifo: scenario.strict_fifo,
            mode: ExecMode::Simulated,
        },
    )?;
    let order: Vec<JobId> = scenario.jobs.iter().map(|j| j.job.id.clone()).collect();
    for entry in &scenario.jobs {
        engine.advance(entry.submit_time_s)?;
        engine
            .submit(entry.job.clone())
            .map_err(|source| RunError::Submit {
                id: entry.job.id.clone(),
                source,
            })?;
    }
    engine.run_to_quiescence()?;
    let mut timelines = Vec::new();
    for id in order {
        timelines.push((id.clone(), engine.timeline_of(&id)?));
    }
    Ok(RunOutput {
        timelines,
        events: engine.events().to_vec(),
        seed: engine.seed(),
    })
}

pub const BUNDLED_NAMES: [&str; 3] = ["mnist-3configs", "imagenet-2configs", "sharing-4slices"];

/// The bundled scenario with the given name, if any.
pub fn bundled(name: &str) -> Option<Scenario> {
    match name {
        "mnist-3configs" => Some(mnist_3configs()),
        "imagenet-2configs" => Some(imagenet_2configs()),
        "sharing-4slices" => Some(sharing_4slices()),
        _ => None,
    }
}

fn gpu(model: &str) -> DeviceClass {
    DeviceClass::new(DeviceKind::Gpu, model)
}

fn nvme(model: &str) -> DeviceClass {
    DeviceClass::new(DeviceKind::Nvme, model)
}

/// The four-node reference cluster: 4x P100 + 1x P40 GPUs and 4 NVMe drives
/// in the pool, a 1 Gbps management link and a 3 GB container image.
pub fn reference_cluster() -> ClusterConfig {
    let node = |i: usize| NodeSpec {
        id: NodeId::new(format!("n{i}")),
        cpu_cores: 10,
        memory_gb: 128,
    };
    let device = |id: &str, class: DeviceClass| Device {
        id: DeviceId::new(id),
        class,
    };
    ClusterConfig {
        nodes: (0..4).map(node).collect(),
        pool: vec![
            device("gpu0", gpu("P100")),
            device("gpu1", gpu("P100")),
            device("gpu2", gpu("P100")),
            device("gpu3", gpu("P100")),
            device("gpu4", gpu("P40")),
            device("ssd0", nvme("SSD750")),
            device("ssd1", nvme("SSD750")),
            device("ssd2", nvme("SSD750")),
            device("ssd3", nvme("SSD750")),
        ],
        link_gbps: 1.0,
        image_gb: 3.0,
        fabric_params: LatencyParams::default(),
    }
}

fn slice(node_count: u32, per_node: Vec<DeviceRequest>, per_slice: Vec<DeviceRequest>) -> SliceSpec {
    SliceSpec {
        node_count,
        devices_per_node: per_node,
        devices_per_slice: per_slice,
    }
}

fn request(class: DeviceClass, count: u32) -> DeviceRequest {
    DeviceRequest { class, count }
}

fn sim_tasks(prefix: &str, count: u32, duration: Millis) -> Vec<TaskSpec> {
    (0..count)
        .map(|i| TaskSpec {
            name: format!("{prefix}-rank{i}"),
            duration_s: Some(duration),
            command: None,
            timeout_s: None,
            node_index: None,
        })
        .collect()
}

fn gang_job(id: &str, nodes: u32, gpus_per_node: u32, model: &str, duration: Millis) -> JobSpec {
    gang_job_with_extras(id, nodes, gpus_per_node, model, duration, Vec::new())
}

fn gang_job_with_extras(
    id: &str,
    nodes: u32,
    gpus_per_node: u32,
    model: &str,
    duration: Millis,
    per_slice: Vec<DeviceRequest>,
) -> JobSpec {
    JobSpec {
        id: JobId::new(id),
        kind: if nodes == 1 {
            JobKind::SingleNode
        } else {
            JobKind::MultiNode
        },
        slice: slice(nodes, vec![request(gpu(model), gpus_per_node)], per_slice),
        tasks: sim_tasks(id, nodes, duration),
    }
}

/// MNIST run-task durations for the 4node-1gpu, 2node-2gpu and 1node-4gpu
/// slices, in seconds.
pub const MNIST_RUN_S: [f64; 3] = [366.36, 237.31, 104.57];

/// The three MNIST slice shapes: same total GPU count, different shapes.
/// All three need the full P100 pool, so they execute one after another no
/// matter how they are submitted.
pub fn mnist_3configs() -> Scenario {
    let runs: Vec<Millis> = MNIST_RUN_S
        .iter()
        .map(|&s| Millis::from_secs_f64(s).unwrap())
        .collect();
    Scenario {
        cluster: reference_cluster(),
        jobs: vec![
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job("mnist-4node-1gpu", 4, 1, "P100", runs[0]),
            },
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job("mnist-2node-2gpu", 2, 2, "P100", runs[1]),
            },
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job("mnist-1node-4gpu", 1, 4, "P100", runs[2]),
            },
        ],
        latency_params: None,
        seed: 0,
        strict_fifo: false,
    }
}

/// ImageNet run-task durations (seconds) for the 4node-1gpu and 2node-2gpu
/// slices. The source experiment does not publish absolute times, only that
/// construction overhead amounts to 0.15-0.17% of execution; these stand-in
/// durations land both slices inside that window under the default latency
/// parameters (frozen from `slicer calibrate`).
pub const IMAGENET_RUN_S: [f64; 2] = [146_000.0, 117_000.0];

/// Two long-running slices, each with two NVMe drives for the dataset
/// spread one per node.
pub fn imagenet_2configs() -> Scenario {
    let runs: Vec<Millis> = IMAGENET_RUN_S
        .iter()
        .map(|&s| Millis::from_secs_f64(s).unwrap())
        .collect();
    let ssd_pair = vec![request(nvme("SSD750"), 2)];
    Scenario {
        cluster: reference_cluster(),
        jobs: vec![
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job_with_extras(
                    "imagenet-4node-1gpu",
                    4,
                    1,
                    "P100",
                    runs[0],
                    ssd_pair.clone(),
                ),
            },
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job_with_extras("imagenet-2node-2gpu", 2, 2, "P100", runs[1], ssd_pair),
            },
        ],
        latency_params: None,
        seed: 0,
        strict_fifo: false,
    }
}

/// Four jobs submitted together to share the pool FIFO-style: two 2node-2gpu
/// P100 slices, one 1node-1gpu P40 slice and one 4node-1gpu P100 slice.
/// Slice1 and Slice3 run immediately (disjoint resources); Slice2 waits for
/// Slice1's P100s; Slice4 needs all four nodes and all four P100s free.
pub fn sharing_4slices() -> Scenario {
    Scenario {
        cluster: reference_cluster(),
        jobs: vec![
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job("slice1", 2, 2, "P100", Millis::from_ms(237_310)),
            },
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job("slice2", 2, 2, "P100", Millis::from_ms(237_310)),
            },
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job("slice3", 1, 1, "P40", Millis::from_ms(300_000)),
            },
            ScenarioJob {
                submit_time_s: Millis::ZERO,
                job: gang_job("slice4", 4, 1, "P100", Millis::from_ms(366_360)),
            },
        ],
        latency_params: None,
        seed: 0,
        strict_fifo: false,
    }
}

/// Timelines keyed by job id, for JSON export.
pub fn timelines_to_json(timelines: &[(JobId, Timeline)]) -> String {
    #[derive(Serialize)]
    struct Entry<'a> {
        job_id: &'a JobId,
        timeline: &'a Timeline,
    }
    let entries: Vec<Entry> = timelines
        .iter()
        .map(|(job_id, timeline)| Entry { job_id, timeline })
        .collect();
    let mut text = serde_json::to_string_pretty(&entries).expect("timelines serialize");
    text.push('\n');
    text
}

/// Parses the `timelines.json` format back into ordered pairs.
pub fn timelines_from_json(text: &str) -> Result<Vec<(JobId, Timeline)>, ModelError> {
    #[derive(Deserialize)]
    struct Entry {
        job_id: JobId,
        timeline: Timeline,
    }
    let entries: Vec<Entry> = serde_json::from_str(text)?;
    Ok(entries.into_iter().map(|e| (e.job_id, e.timeline)).collect())
}

/// Groups timelines per job for map-style access.
pub fn timeline_map(timelines: &[(JobId, Timeline)]) -> BTreeMap<JobId, Timeline> {
    timelines.iter().cloned().collect()
}
