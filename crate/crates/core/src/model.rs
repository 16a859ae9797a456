//! Domain types shared by the whole workspace: cluster inventory, slice and
//! job requests, execution timelines, and the arithmetic over them.
//!
//! Documents are UTF-8 JSON with snake_case field names. Parsing always
//! validates; a value obtained from [`parse_cluster_config`] or
//! [`parse_job_spec`] satisfies its invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::LatencyParams;
use crate::time::Millis;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed document: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
    #[error("malformed timeline: {0}")]
    MalformedTimeline(String),
    #[error("timeline has zero makespan, overhead fraction undefined")]
    ZeroMakespan,
}

impl ModelError {
    fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        ModelError::Invalid {
            what,
            detail: detail.into(),
        }
    }
}

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(
    /// Identifier of a pool device.
    DeviceId
);
id_type!(
    /// Identifier of a compute node.
    NodeId
);
id_type!(
    /// Identifier of a submitted job (and of the slice built for it).
    JobId
);

/// Broad hardware category of a pool device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Gpu,
    Nvme,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceKind::Gpu => f.write_str("gpu"),
            DeviceKind::Nvme => f.write_str("nvme"),
        }
    }
}

/// A device class: kind plus model label. Requests match on the full class,
/// never on kind alone — a request for `gpu/P100` is not satisfied by a P40.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceClass {
    pub kind: DeviceKind,
    pub model: String,
}

impl DeviceClass {
    pub fn new(kind: DeviceKind, model: impl Into<String>) -> Self {
        DeviceClass {
            kind,
            model: model.into(),
        }
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.model)
    }
}

/// One physical device in the disaggregated pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: DeviceId,
    #[serde(flatten)]
    pub class: DeviceClass,
}

/// One compute node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub cpu_cores: u32,
    pub memory_gb: u32,
}

/// Inventory of the physical world: compute nodes, the device pool, the
/// shared management link used for image downloads, and fabric latencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub nodes: Vec<NodeSpec>,
    pub pool: Vec<Device>,
    /// Shared management-network bandwidth in gigabits per second.
    pub link_gbps: f64,
    /// Container image size in gigabytes, downloaded by every booting node.
    pub image_gb: f64,
    #[serde(default)]
    pub fabric_params: LatencyParams,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.nodes.is_empty() {
            return Err(ModelError::invalid("cluster", "node list is empty"));
        }
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        for node in &self.nodes {
            if node.id.as_str().is_empty() {
                return Err(ModelError::invalid("cluster", "empty node id"));
            }
            if node.cpu_cores < 1 || node.memory_gb < 1 {
                return Err(ModelError::invalid(
                    "cluster",
                    format!("node {} must have at least 1 core and 1 GB", node.id),
                ));
            }
            if !ids.insert(node.id.as_str()) {
                return Err(ModelError::invalid(
                    "cluster",
                    format!("duplicate id {}", node.id),
                ));
            }
        }
        for device in &self.pool {
            if device.id.as_str().is_empty() {
                return Err(ModelError::invalid("cluster", "empty device id"));
            }
            if device.class.model.is_empty() {
                return Err(ModelError::invalid(
                    "cluster",
                    format!("device {} has an empty model label", device.id),
                ));
            }
            if !ids.insert(device.id.as_str()) {
                return Err(ModelError::invalid(
                    "cluster",
                    format!("duplicate id {}", device.id),
                ));
            }
        }
        if self.link_gbps <= 0.0 || !self.link_gbps.is_finite() {
            return Err(ModelError::invalid(
                "cluster",
                format!("link_gbps must be positive, got {}", self.link_gbps),
            ));
        }
        if self.image_gb < 0.0 || !self.image_gb.is_finite() {
            return Err(ModelError::invalid(
                "cluster",
                format!("image_gb must be nonnegative, got {}", self.image_gb),
            ));
        }
        self.fabric_params
            .validate()
            .map_err(|e| ModelError::invalid("cluster", e.to_string()))?;
        Ok(())
    }

    /// Pool inventory grouped by device class.
    pub fn pool_by_class(&self) -> BTreeMap<DeviceClass, u32> {
        let mut counts = BTreeMap::new();
        for device in &self.pool {
            *counts.entry(device.class.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// A number of devices of one class, requested per node or per slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRequest {
    #[serde(flatten)]
    pub class: DeviceClass,
    pub count: u32,
}

/// What a job asks for: `node_count` identical nodes, each with the same
/// device set, plus optional slice-level devices spread round-robin across
/// the nodes (one per node while they last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub node_count: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices_per_node: Vec<DeviceRequest>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices_per_slice: Vec<DeviceRequest>,
}

impl SliceSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.node_count < 1 {
            return Err(ModelError::invalid("slice", "node_count must be >= 1"));
        }
        for req in self.devices_per_node.iter().chain(&self.devices_per_slice) {
            if req.class.model.is_empty() {
                return Err(ModelError::invalid("slice", "empty device model label"));
            }
        }
        Ok(())
    }

    /// Total demand per device class: node_count x per-node count, plus
    /// slice-level extras. Iteration order is the order classes first appear
    /// in the request, which fixes which constraint a feasibility check
    /// reports first.
    pub fn class_demand(&self) -> Vec<(DeviceClass, u32)> {
        let mut order: Vec<DeviceClass> = Vec::new();
        let mut totals: BTreeMap<DeviceClass, u32> = BTreeMap::new();
        for req in &self.devices_per_node {
            if !totals.contains_key(&req.class) {
                order.push(req.class.clone());
            }
            *totals.entry(req.class.clone()).or_insert(0) += self.node_count * req.count;
        }
        for req in &self.devices_per_slice {
            if !totals.contains_key(&req.class) {
                order.push(req.class.clone());
            }
            *totals.entry(req.class.clone()).or_insert(0) += req.count;
        }
        order
            .into_iter()
            .map(|class| {
                let total = totals[&class];
                (class, total)
            })
            .collect()
    }

    /// Devices each node of the slice will receive, as (class, count) in
    /// attach order, for node index `node_idx`. Slice-level devices go one
    /// per node round-robin starting at node 0.
    pub fn devices_for_node(&self, node_idx: u32) -> Vec<DeviceClass> {
        let mut out = Vec::new();
        for req in &self.devices_per_node {
            for _ in 0..req.count {
                out.push(req.class.clone());
            }
        }
        for req in &self.devices_per_slice {
            for unit in 0..req.count {
                if unit % self.node_count == node_idx {
                    out.push(req.class.clone());
                }
            }
        }
        out
    }

    /// Largest per-node device count across the slice.
    pub fn max_devices_per_node(&self) -> u32 {
        (0..self.node_count)
            .map(|i| self.devices_for_node(i).len() as u32)
            .max()
            .unwrap_or(0)
    }
}

/// Single-node jobs run all tasks on one node; multi-node (gang) jobs run
/// exactly one task on each node of the slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    SingleNode,
    MultiNode,
}

/// One task of a job. Exactly one of `duration_s` (simulated mode) and
/// `command` (subprocess mode) must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<Millis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// Optional per-task timeout; a task still running at expiry fails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<Millis>,
    /// Index of the slice node this task runs on. Defaults to the task's
    /// position for multi-node jobs and 0 for single-node jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_index: Option<u32>,
}

/// A user job: the slice to build and the tasks to run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: JobId,
    pub kind: JobKind,
    pub slice: SliceSpec,
    pub tasks: Vec<TaskSpec>,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.as_str().is_empty() {
            return Err(ModelError::invalid("job", "empty job id"));
        }
        self.slice.validate()?;
        if self.tasks.is_empty() {
            return Err(ModelError::invalid("job", "job has no tasks"));
        }
        for task in &self.tasks {
            match (&task.duration_s, &task.command) {
                (Some(_), None) | (None, Some(_)) => {}
                (Some(_), Some(_)) => {
                    return Err(ModelError::invalid(
                        "job",
                        format!("task {} has both duration_s and command", task.name),
                    ));
                }
                (None, None) => {
                    return Err(ModelError::invalid(
                        "job",
                        format!("task {} has neither duration_s nor command", task.name),
                    ));
                }
            }
        }
        match self.kind {
            JobKind::SingleNode => {
                if self.slice.node_count != 1 {
                    return Err(ModelError::invalid(
                        "job",
                        format!(
                            "single_node job must request exactly 1 node, got {}",
                            self.slice.node_count
                        ),
                    ));
                }
                if self.tasks.iter().any(|t| t.node_index.unwrap_or(0) != 0) {
                    return Err(ModelError::invalid(
                        "job",
                        "single_node job tasks must target node 0",
                    ));
                }
            }
            JobKind::MultiNode => {
                let n = self.slice.node_count as usize;
                if self.tasks.len() != n {
                    return Err(ModelError::invalid(
                        "job",
                        format!(
                            "multi_node job needs one task per node: {} nodes, {} tasks",
                            n,
                            self.tasks.len()
                        ),
                    ));
                }
                let mut seen = vec![false; n];
                for (pos, task) in self.tasks.iter().enumerate() {
                    let idx = self.placement(pos) as usize;
                    if idx >= n || seen[idx] {
                        return Err(ModelError::invalid(
                            "job",
                            format!("task {} placement does not cover each node once", task.name),
                        ));
                    }
                    seen[idx] = true;
                }
            }
        }
        Ok(())
    }

    /// Node index the task at `pos` runs on.
    pub fn placement(&self, pos: usize) -> u32 {
        match self.tasks[pos].node_index {
            Some(idx) => idx,
            None => match self.kind {
                JobKind::SingleNode => 0,
                JobKind::MultiNode => pos as u32,
            },
        }
    }
}

pub fn parse_cluster_config(text: &str) -> Result<ClusterConfig, ModelError> {
    let config: ClusterConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

pub fn parse_job_spec(text: &str) -> Result<JobSpec, ModelError> {
    let job: JobSpec = serde_json::from_str(text)?;
    job.validate()?;
    Ok(job)
}

/// Verdict of matching a slice request against a cluster's inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible { constraint: String },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible)
    }
}

/// A slice can ever run iff the cluster has enough nodes and enough pool
/// devices of every requested class. Returns the first violated constraint.
pub fn check_feasible(spec: &SliceSpec, cluster: &ClusterConfig) -> Feasibility {
    if spec.node_count as usize > cluster.nodes.len() {
        return Feasibility::Infeasible {
            constraint: format!(
                "node_count exceeds cluster: requires {} nodes, cluster has {}",
                spec.node_count,
                cluster.nodes.len()
            ),
        };
    }
    let pool = cluster.pool_by_class();
    for (class, demand) in spec.class_demand() {
        let have = pool.get(&class).copied().unwrap_or(0);
        if demand > have {
            return Feasibility::Infeasible {
                constraint: format!("requires {demand} of {class}, pool has {have}"),
            };
        }
    }
    Feasibility::Feasible
}

/// A half-open-in-spirit `[start, end]` interval in simulation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: Millis,
    pub end_s: Millis,
}

impl Interval {
    pub fn new(start: Millis, end: Millis) -> Self {
        Interval {
            start_s: start,
            end_s: end,
        }
    }

    pub fn instant(at: Millis) -> Self {
        Interval {
            start_s: at,
            end_s: at,
        }
    }

    pub fn duration(&self) -> Millis {
        self.end_s - self.start_s
    }
}

/// The seven lifecycle phases, in execution order.
pub const PHASE_NAMES: [&str; 7] = [
    "attach_device",
    "launch_machine",
    "prepare_task",
    "launch_task",
    "run_task",
    "detach_device",
    "destroy_machine",
];

/// Per-phase intervals of one completed slice. Phases are contiguous and
/// ordered; the makespan is `destroy_machine.end - attach_device.start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub attach_device: Interval,
    pub launch_machine: Interval,
    pub prepare_task: Interval,
    pub launch_task: Interval,
    pub run_task: Interval,
    pub detach_device: Interval,
    pub destroy_machine: Interval,
}

impl Timeline {
    pub fn intervals(&self) -> [(&'static str, Interval); 7] {
        [
            ("attach_device", self.attach_device),
            ("launch_machine", self.launch_machine),
            ("prepare_task", self.prepare_task),
            ("launch_task", self.launch_task),
            ("run_task", self.run_task),
            ("detach_device", self.detach_device),
            ("destroy_machine", self.destroy_machine),
        ]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let intervals = self.intervals();
        for (name, iv) in &intervals {
            if iv.end_s < iv.start_s {
                return Err(ModelError::MalformedTimeline(format!(
                    "{name} ends before it starts"
                )));
            }
        }
        for pair in intervals.windows(2) {
            let (prev_name, prev) = &pair[0];
            let (next_name, next) = &pair[1];
            if prev.end_s != next.start_s {
                return Err(ModelError::MalformedTimeline(format!(
                    "gap between {prev_name} and {next_name}"
                )));
            }
        }
        Ok(())
    }

    pub fn makespan(&self) -> Millis {
        self.destroy_machine.end_s - self.attach_device.start_s
    }
}

/// Phase durations of a timeline plus the construction/destruction overhead
/// fraction: (attach + launch_machine + detach + destroy) / makespan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breakdown {
    pub attach_device: Millis,
    pub launch_machine: Millis,
    pub prepare_task: Millis,
    pub launch_task: Millis,
    pub run_task: Millis,
    pub detach_device: Millis,
    pub destroy_machine: Millis,
    pub makespan: Millis,
    pub construction_destruction: Millis,
    pub overhead_fraction: f64,
}

pub fn breakdown(timeline: &Timeline) -> Result<Breakdown, ModelError> {
    timeline.validate()?;
    let makespan = timeline.makespan();
    if makespan.is_zero() {
        return Err(ModelError::ZeroMakespan);
    }
    let construction_destruction = timeline.attach_device.duration()
        + timeline.launch_machine.duration()
        + timeline.detach_device.duration()
        + timeline.destroy_machine.duration();
    Ok(Breakdown {
        attach_device: timeline.attach_device.duration(),
        launch_machine: timeline.launch_machine.duration(),
        prepare_task: timeline.prepare_task.duration(),
        launch_task: timeline.launch_task.duration(),
        run_task: timeline.run_task.duration(),
        detach_device: timeline.detach_device.duration(),
        destroy_machine: timeline.destroy_machine.duration(),
        makespan,
        construction_destruction,
        overhead_fraction: construction_destruction.as_ms() as f64 / makespan.as_ms() as f64,
    })
}
