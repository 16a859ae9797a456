//! Deterministic discrete-event engine: FIFO gang scheduler plus the
//! six-operation slice lifecycle.
//!
//! One logical event loop owns all mutation. Time is integer milliseconds
//! and every tie is broken by scheduling sequence number, so a given input
//! set always produces the same event log. In external (wall-clock) mode
//! the engine never schedules RUNNING completions itself; it emits
//! [`SideEffect`]s and is fed task results back through
//! [`Engine::external_task_done`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::executor::{self, TaskResult, TaskStatus};
use crate::fabric::{FabricState, LatencyParams};
use crate::link::SharedLink;
use crate::model::{
    check_feasible, ClusterConfig, DeviceClass, DeviceId, Feasibility, Interval, JobId, JobSpec,
    ModelError, NodeId, Timeline,
};
use crate::time::Millis;

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("invalid job: {0}")]
    Invalid(String),
    #[error("duplicate job id {0}")]
    Duplicate(JobId),
    #[error("infeasible job: {0}")]
    Infeasible(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} is still active")]
    StillActive(JobId),
    #[error("job {0} already finished")]
    AlreadyFinished(JobId),
    #[error("time regression: clock is at {clock}s, advance to {requested}s requested")]
    TimeRegression { clock: Millis, requested: Millis },
    #[error("job {job} is not running (task result for {task} dropped)")]
    NotRunning { job: JobId, task: String },
}

/// Lifecycle phase of a slice. Transitions only move down the list;
/// `Failed` is reachable from any active phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlicePhase {
    Queued,
    Attaching,
    LaunchingMachines,
    Preparing,
    LaunchingTasks,
    Running,
    Detaching,
    Destroying,
    Done,
    Failed,
}

impl SlicePhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, SlicePhase::Done | SlicePhase::Failed)
    }
}

/// Everything recorded in the event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Submitted,
    Allocated,
    AttachDeviceStart,
    AttachDeviceEnd,
    LaunchMachineStart,
    LaunchMachineEnd,
    PrepareTaskStart,
    PrepareTaskEnd,
    LaunchTaskStart,
    LaunchTaskEnd,
    RunTaskStart,
    RunTaskEnd,
    DetachDeviceStart,
    DetachDeviceEnd,
    DestroyMachineStart,
    DestroyMachineEnd,
    Completed,
    Failed,
}

/// One event-log entry. The log is append-only and ordered by time, then by
/// append sequence.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Event {
    pub time_s: Millis,
    pub job_id: JobId,
    pub kind: EventKind,
    pub detail: String,
}

/// Per-phase intervals recorded so far for one slice.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseTimestamps {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attach_device: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub launch_machine: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prepare_task: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub launch_task: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_task: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detach_device: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub destroy_machine: Option<Interval>,
}

impl PhaseTimestamps {
    fn timeline(&self) -> Option<Timeline> {
        Some(Timeline {
            attach_device: self.attach_device?,
            launch_machine: self.launch_machine?,
            prepare_task: self.prepare_task?,
            launch_task: self.launch_task?,
            run_task: self.run_task?,
            detach_device: self.detach_device?,
            destroy_machine: self.destroy_machine?,
        })
    }
}

/// Live state of one slice.
#[derive(Debug, Clone)]
pub struct SliceRuntime {
    pub job: JobSpec,
    pub phase: SlicePhase,
    pub assigned_nodes: Vec<NodeId>,
    pub assigned_devices: BTreeMap<NodeId, Vec<DeviceId>>,
    pub timestamps: PhaseTimestamps,
    pub failure_reason: Option<String>,
    pub submitted_s: Millis,
    // phase bookkeeping
    phase_started: Millis,
    pending_nodes: BTreeSet<NodeId>,
    pending_tasks: usize,
    task_results: Vec<TaskResult>,
    cancel_requested: bool,
}

impl SliceRuntime {
    fn new(job: JobSpec, now: Millis) -> Self {
        SliceRuntime {
            job,
            phase: SlicePhase::Queued,
            assigned_nodes: Vec::new(),
            assigned_devices: BTreeMap::new(),
            timestamps: PhaseTimestamps::default(),
            failure_reason: None,
            submitted_s: now,
            phase_started: now,
            pending_nodes: BTreeSet::new(),
            pending_tasks: 0,
            task_results: Vec::new(),
            cancel_requested: false,
        }
    }

    pub fn task_results(&self) -> &[TaskResult] {
        &self.task_results
    }

    fn device_count(&self) -> usize {
        self.assigned_devices.values().map(Vec::len).sum()
    }

    fn max_devices_on_a_node(&self) -> usize {
        self.assigned_devices
            .values()
            .map(Vec::len)
            .max()
            .unwrap_or(0)
    }
}

/// Status snapshot served over the API.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobStatus {
    pub job_id: JobId,
    pub phase: SlicePhase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_position: Option<usize>,
    pub assigned_nodes: Vec<NodeId>,
    pub assigned_devices: BTreeMap<NodeId, Vec<DeviceId>>,
    pub timestamps: PhaseTimestamps,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    pub submitted_s: Millis,
}

/// Where a device currently is.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum DeviceState {
    Free,
    Reserved { job: JobId },
    Attached { node: NodeId, job: JobId },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceView {
    pub id: DeviceId,
    #[serde(flatten)]
    pub class: DeviceClass,
    #[serde(flatten)]
    pub state: DeviceState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeView {
    pub id: NodeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job: Option<JobId>,
}

/// Inventory plus attachment map, as served by the control plane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterView {
    pub time_s: Millis,
    pub nodes: Vec<NodeView>,
    pub devices: Vec<DeviceView>,
    pub link_gbps: f64,
    pub image_gb: f64,
    pub bandwidth_ratio: f64,
}

/// Work the caller must perform on the engine's behalf (wall-clock mode).
#[derive(Debug, Clone, PartialEq)]
pub enum SideEffect {
    SpawnTask {
        job: JobId,
        node: NodeId,
        task_index: usize,
    },
}

/// How RUNNING-phase durations are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Completions scheduled on the virtual clock from `duration_s`.
    #[default]
    Simulated,
    /// Completions fed back by the caller from real subprocess runs.
    External,
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// Overrides the cluster's fabric parameters when set.
    pub params: Option<LatencyParams>,
    pub seed: u64,
    /// Strict FIFO blocks on the first unsatisfiable job instead of
    /// skipping it.
    pub strict_fifo: bool,
    pub mode: ExecMode,
}

#[derive(Debug)]
enum Action {
    PhaseDone { job: JobId, phase: SlicePhase },
    BootDone { job: JobId, node: NodeId },
    TaskDone {
        job: JobId,
        task_index: usize,
        status: TaskStatus,
        detail: String,
    },
}

struct Scheduled {
    at: Millis,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap, we want the earliest first
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// The resource manager: queue, active slices, fabric, shared link, clock
/// and event log.
pub struct Engine {
    cluster: ClusterConfig,
    params: LatencyParams,
    mode: ExecMode,
    strict_fifo: bool,
    seed: u64,
    clock: Millis,
    queue: VecDeque<JobId>,
    slices: BTreeMap<JobId, SliceRuntime>,
    events: Vec<Event>,
    fabric: FabricState,
    link: SharedLink,
    downloading: BTreeMap<NodeId, JobId>,
    free_nodes: BTreeSet<NodeId>,
    free_devices: BTreeMap<DeviceClass, BTreeSet<DeviceId>>,
    device_class: BTreeMap<DeviceId, DeviceClass>,
    node_holder: BTreeMap<NodeId, JobId>,
    heap: BinaryHeap<Scheduled>,
    next_seq: u64,
    effects: Vec<SideEffect>,
}

impl Engine {
    pub fn new(cluster: ClusterConfig, options: EngineOptions) -> Result<Self, ModelError> {
        cluster.validate()?;
        let params = options.params.unwrap_or_else(|| cluster.fabric_params.clone());
        params
            .validate()
            .map_err(|e| ModelError::Invalid {
                what: "latency params",
                detail: e.to_string(),
            })?;
        let fabric = FabricState::new(&cluster, params.clone());
        let link = SharedLink::new(cluster.link_gbps);
        let free_nodes = cluster.nodes.iter().map(|n| n.id.clone()).collect();
        let mut free_devices: BTreeMap<DeviceClass, BTreeSet<DeviceId>> = BTreeMap::new();
        let mut device_class = BTreeMap::new();
        for device in &cluster.pool {
            free_devices
                .entry(device.class.clone())
                .or_default()
                .insert(device.id.clone());
            device_class.insert(device.id.clone(), device.class.clone());
        }
        Ok(Engine {
            cluster,
            params,
            mode: options.mode,
            strict_fifo: options.strict_fifo,
            seed: options.seed,
            clock: Millis::ZERO,
            queue: VecDeque::new(),
            slices: BTreeMap::new(),
            events: Vec::new(),
            fabric,
            link,
            downloading: BTreeMap::new(),
            free_nodes,
            free_devices,
            device_class,
            node_holder: BTreeMap::new(),
            heap: BinaryHeap::new(),
            next_seq: 0,
            effects: Vec::new(),
        })
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cluster(&self) -> &ClusterConfig {
        &self.cluster
    }

    pub fn params(&self) -> &LatencyParams {
        &self.params
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events with log sequence >= `since`, capped at `limit`.
    pub fn events_page(&self, since: usize, limit: usize) -> &[Event] {
        if since >= self.events.len() {
            return &[];
        }
        let end = (since + limit).min(self.events.len());
        &self.events[since..end]
    }

    fn log(&mut self, job: &JobId, kind: EventKind, detail: impl Into<String>) {
        self.events.push(Event {
            time_s: self.clock,
            job_id: job.clone(),
            kind,
            detail: detail.into(),
        });
    }

    fn schedule(&mut self, at: Millis, action: Action) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { at, seq, action });
    }

    /// Validates and enqueues a job at the current clock. Jobs that can
    /// never run on this cluster are rejected outright.
    pub fn submit(&mut self, job: JobSpec) -> Result<(), SubmitError> {
        job.validate().map_err(|e| SubmitError::Invalid(e.to_string()))?;
        for task in &job.tasks {
            match self.mode {
                ExecMode::Simulated if task.duration_s.is_none() => {
                    return Err(SubmitError::Invalid(format!(
                        "task {} has no duration_s; simulated mode needs one",
                        task.name
                    )));
                }
                ExecMode::External if task.command.is_none() => {
                    return Err(SubmitError::Invalid(format!(
                        "task {} has no command; wall-clock mode needs one",
                        task.name
                    )));
                }
                _ => {}
            }
        }
        if self.slices.contains_key(&job.id) {
            return Err(SubmitError::Duplicate(job.id.clone()));
        }
        match check_feasible(&job.slice, &self.cluster) {
            Feasibility::Feasible => {}
            Feasibility::Infeasible { constraint } => {
                return Err(SubmitError::Infeasible(constraint));
            }
        }
        let id = job.id.clone();
        let detail = format!(
            "{} nodes, {} tasks",
            job.slice.node_count,
            job.tasks.len()
        );
        self.slices.insert(id.clone(), SliceRuntime::new(job, self.clock));
        self.queue.push_back(id.clone());
        self.log(&id, EventKind::Submitted, detail);
        self.schedule_pass();
        Ok(())
    }

    /// Walks the queue in submission order and atomically allocates every
    /// job whose full gang requirement is currently satisfiable. Jobs that
    /// do not fit are skipped (or, in strict mode, block the scan).
    fn schedule_pass(&mut self) {
        let mut remaining = VecDeque::new();
        let mut blocked = false;
        while let Some(id) = self.queue.pop_front() {
            if blocked {
                remaining.push_back(id);
                continue;
            }
            let satisfiable = {
                let slice = &self.slices[&id].job.slice;
                self.free_nodes.len() >= slice.node_count as usize
                    && slice.class_demand().iter().all(|(class, demand)| {
                        self.free_devices
                            .get(class)
                            .map(|set| set.len() >= *demand as usize)
                            .unwrap_or(*demand == 0)
                    })
            };
            if satisfiable {
                self.allocate(&id);
            } else {
                if self.strict_fifo {
                    blocked = true;
                }
                remaining.push_back(id);
            }
        }
        self.queue = remaining;
    }

    /// Reserves nodes and devices for the job (lowest ids first) and starts
    /// the attach phase. The gang is taken whole or not at all; callers
    /// check satisfiability first.
    fn allocate(&mut self, id: &JobId) {
        let spec = self.slices[id].job.slice.clone();
        let nodes: Vec<NodeId> = self
            .free_nodes
            .iter()
            .take(spec.node_count as usize)
            .cloned()
            .collect();
        for node in &nodes {
            self.free_nodes.remove(node);
            self.node_holder.insert(node.clone(), id.clone());
        }
        let mut assigned: BTreeMap<NodeId, Vec<DeviceId>> = BTreeMap::new();
        for (idx, node) in nodes.iter().enumerate() {
            let mut list = Vec::new();
            for class in spec.devices_for_node(idx as u32) {
                let set = self
                    .free_devices
                    .get_mut(&class)
                    .expect("satisfiability checked");
                let device = set.iter().next().expect("satisfiability checked").clone();
                set.remove(&device);
                list.push(device);
            }
            assigned.insert(node.clone(), list);
        }
        let detail = format!(
            "nodes=[{}] devices=[{}]",
            join_ids(nodes.iter().map(NodeId::as_str)),
            join_ids(
                nodes
                    .iter()
                    .flat_map(|n| assigned[n].iter().map(DeviceId::as_str))
            ),
        );
        {
            let slice = self.slices.get_mut(id).unwrap();
            slice.assigned_nodes = nodes;
            slice.assigned_devices = assigned;
        }
        self.log(id, EventKind::Allocated, detail);
        self.start_attaching(id);
    }

    fn start_attaching(&mut self, id: &JobId) {
        let now = self.clock;
        let (device_count, max_done) = {
            let slice = self.slices.get_mut(id).unwrap();
            slice.phase = SlicePhase::Attaching;
            slice.phase_started = now;
            let nodes = slice.assigned_nodes.clone();
            let assigned = slice.assigned_devices.clone();
            let mut max_done = now;
            let mut count = 0usize;
            for node in &nodes {
                for device in &assigned[node] {
                    let done = self
                        .fabric
                        .attach(device, node, now)
                        .expect("allocation reserved a free device");
                    max_done = max_done.max(done);
                    count += 1;
                }
            }
            (count, max_done)
        };
        self.log(id, EventKind::AttachDeviceStart, format!("{device_count} devices"));
        self.schedule(
            max_done,
            Action::PhaseDone {
                job: id.clone(),
                phase: SlicePhase::Attaching,
            },
        );
    }

    /// Processes every event due at or before `until`, then moves the clock
    /// to `until`. Returns side effects for the caller to run (wall-clock
    /// mode only; simulated runs never produce any).
    pub fn advance(&mut self, until: Millis) -> Result<Vec<SideEffect>, EngineError> {
        if until < self.clock {
            return Err(EngineError::TimeRegression {
                clock: self.clock,
                requested: until,
            });
        }
        loop {
            let heap_next = self.heap.peek().map(|s| s.at);
            let link_next = self.link.next_completion();
            let next = match (heap_next, link_next) {
                (None, None) => break,
                (Some(h), None) => h,
                (None, Some(l)) => l,
                (Some(h), Some(l)) => h.min(l),
            };
            if next > until {
                break;
            }
            self.clock = next;
            // heap events win ties so that a download completing at the same
            // instant a new transfer starts sees a settled active set
            if heap_next == Some(next) {
                let scheduled = self.heap.pop().unwrap();
                self.dispatch(scheduled.action);
            } else {
                for node in self.link.complete_due(next) {
                    let owner = self
                        .downloading
                        .remove(&node)
                        .expect("every download has an owner");
                    self.node_launched(&owner, &node);
                }
            }
        }
        self.clock = until;
        Ok(std::mem::take(&mut self.effects))
    }

    /// Earliest pending event, if any.
    pub fn next_due(&self) -> Option<Millis> {
        match (self.heap.peek().map(|s| s.at), self.link.next_completion()) {
            (None, None) => None,
            (Some(h), None) => Some(h),
            (None, Some(l)) => Some(l),
            (Some(h), Some(l)) => Some(h.min(l)),
        }
    }

    /// True when nothing is scheduled and no slice is between submission
    /// and teardown completion.
    pub fn is_quiescent(&self) -> bool {
        self.next_due().is_none()
            && self
                .slices
                .values()
                .all(|s| s.phase.is_terminal() || s.phase == SlicePhase::Queued)
    }

    /// Simulated mode: drives the engine until no event remains. Queued
    /// jobs whose requirements never free up would spin, but submission
    /// guarantees feasibility, so every queued job eventually runs.
    pub fn run_to_quiescence(&mut self) -> Result<(), EngineError> {
        while let Some(t) = self.next_due() {
            self.advance(t)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, action: Action) {
        match action {
            Action::PhaseDone { job, phase } => self.phase_done(&job, phase),
            Action::BootDone { job, node } => self.boot_done(&job, &node),
            Action::TaskDone {
                job,
                task_index,
                status,
                detail,
            } => self.task_done(&job, task_index, status, detail),
        }
    }

    fn phase_done(&mut self, id: &JobId, phase: SlicePhase) {
        match phase {
            SlicePhase::Attaching => {
                let now = self.clock;
                let cancelled = {
                    let slice = self.slices.get_mut(id).unwrap();
                    slice.timestamps.attach_device =
                        Some(Interval::new(slice.phase_started, now));
                    slice.cancel_requested
                };
                self.log(id, EventKind::AttachDeviceEnd, "");
                if cancelled {
                    self.begin_teardown(id);
                } else {
                    self.start_launch_machines(id);
                }
            }
            SlicePhase::Preparing => {
                let now = self.clock;
                let cancelled = {
                    let slice = self.slices.get_mut(id).unwrap();
                    slice.timestamps.prepare_task =
                        Some(Interval::new(slice.phase_started, now));
                    slice.cancel_requested
                };
                self.log(id, EventKind::PrepareTaskEnd, "");
                if cancelled {
                    self.begin_teardown(id);
                } else {
                    self.start_launch_tasks(id);
                }
            }
            SlicePhase::LaunchingTasks => {
                let now = self.clock;
                let cancelled = {
                    let slice = self.slices.get_mut(id).unwrap();
                    slice.timestamps.launch_task =
                        Some(Interval::new(slice.phase_started, now));
                    slice.cancel_requested
                };
                self.log(id, EventKind::LaunchTaskEnd, "");
                if cancelled {
                    self.begin_teardown(id);
                } else {
                    self.start_running(id);
                }
            }
            SlicePhase::Detaching => {
                let now = self.clock;
                {
                    let slice = self.slices.get_mut(id).unwrap();
                    slice.timestamps.detach_device =
                        Some(Interval::new(slice.phase_started, now));
                }
                self.log(id, EventKind::DetachDeviceEnd, "");
                self.start_destroying(id);
            }
            SlicePhase::Destroying => {
                let now = self.clock;
                {
                    let slice = self.slices.get_mut(id).unwrap();
                    slice.timestamps.destroy_machine =
                        Some(Interval::new(slice.phase_started, now));
                }
                self.log(id, EventKind::DestroyMachineEnd, "");
                self.finish_slice(id);
            }
            _ => unreachable!("no timer is scheduled for {phase:?}"),
        }
    }

    fn start_launch_machines(&mut self, id: &JobId) {
        let now = self.clock;
        let nodes = {
            let slice = self.slices.get_mut(id).unwrap();
            slice.phase = SlicePhase::LaunchingMachines;
            slice.phase_started = now;
            slice.pending_nodes = slice.assigned_nodes.iter().cloned().collect();
            slice.assigned_nodes.clone()
        };
        self.log(
            id,
            EventKind::LaunchMachineStart,
            format!("{} nodes, image {} GB", nodes.len(), self.cluster.image_gb),
        );
        for node in nodes {
            self.schedule(
                now + self.params.machine_boot_s,
                Action::BootDone {
                    job: id.clone(),
                    node,
                },
            );
        }
    }

    fn boot_done(&mut self, id: &JobId, node: &NodeId) {
        if self.cluster.image_gb > 0.0 {
            let gigabits = self.cluster.image_gb * 8.0;
            self.link.start(node.clone(), gigabits, self.clock);
            self.downloading.insert(node.clone(), id.clone());
        } else {
            self.node_launched(id, node);
        }
    }

    fn node_launched(&mut self, id: &JobId, node: &NodeId) {
        let now = self.clock;
        let (all_done, cancelled) = {
            let slice = self.slices.get_mut(id).unwrap();
            slice.pending_nodes.remove(node);
            (slice.pending_nodes.is_empty(), slice.cancel_requested)
        };
        if !all_done {
            return;
        }
        {
            let slice = self.slices.get_mut(id).unwrap();
            slice.timestamps.launch_machine = Some(Interval::new(slice.phase_started, now));
        }
        self.log(id, EventKind::LaunchMachineEnd, "");
        if cancelled {
            self.begin_teardown(id);
        } else {
            self.start_preparing(id);
        }
    }

    fn start_preparing(&mut self, id: &JobId) {
        let now = self.clock;
        {
            let slice = self.slices.get_mut(id).unwrap();
            slice.phase = SlicePhase::Preparing;
            slice.phase_started = now;
        }
        self.log(id, EventKind::PrepareTaskStart, "");
        self.schedule(
            now + self.params.prepare_s,
            Action::PhaseDone {
                job: id.clone(),
                phase: SlicePhase::Preparing,
            },
        );
    }

    fn start_launch_tasks(&mut self, id: &JobId) {
        let now = self.clock;
        let max_devices = {
            let slice = self.slices.get_mut(id).unwrap();
            slice.phase = SlicePhase::LaunchingTasks;
            slice.phase_started = now;
            slice.max_devices_on_a_node() as u64
        };
        self.log(id, EventKind::LaunchTaskStart, "");
        // per-node launches serialize over that node's devices; nodes
        // proceed in parallel, so the slowest node ends the phase
        self.schedule(
            now + self.params.launch_per_device_s.times(max_devices),
            Action::PhaseDone {
                job: id.clone(),
                phase: SlicePhase::LaunchingTasks,
            },
        );
    }

    fn start_running(&mut self, id: &JobId) {
        let now = self.clock;
        let (tasks, nodes) = {
            let slice = self.slices.get_mut(id).unwrap();
            slice.phase = SlicePhase::Running;
            slice.phase_started = now;
            slice.pending_tasks = slice.job.tasks.len();
            slice.task_results.clear();
            (slice.job.tasks.clone(), slice.assigned_nodes.clone())
        };
        self.log(id, EventKind::RunTaskStart, format!("{} tasks", tasks.len()));
        for (index, task) in tasks.iter().enumerate() {
            match self.mode {
                ExecMode::Simulated => {
                    let (end, status, detail) = executor::execute_simulated(task, now)
                        .expect("simulated jobs are validated to carry durations");
                    self.schedule(
                        end,
                        Action::TaskDone {
                            job: id.clone(),
                            task_index: index,
                            status,
                            detail,
                        },
                    );
                }
                ExecMode::External => {
                    let placement = self.slices[id].job.placement(index) as usize;
                    self.effects.push(SideEffect::SpawnTask {
                        job: id.clone(),
                        node: nodes[placement].clone(),
                        task_index: index,
                    });
                }
            }
        }
    }

    fn task_done(&mut self, id: &JobId, task_index: usize, status: TaskStatus, detail: String) {
        let now = self.clock;
        let all_done = {
            let slice = self.slices.get_mut(id).unwrap();
            if slice.phase != SlicePhase::Running {
                return;
            }
            let placement = slice.job.placement(task_index) as usize;
            let result = TaskResult {
                task: slice.job.tasks[task_index].name.clone(),
                node: slice.assigned_nodes[placement].clone(),
                started_s: slice.phase_started,
                ended_s: now,
                status,
                exit_detail: detail,
            };
            if status == TaskStatus::Failed && slice.failure_reason.is_none() {
                slice.failure_reason =
                    Some(format!("task {} failed: {}", result.task, result.exit_detail));
            }
            slice.task_results.push(result);
            slice.pending_tasks -= 1;
            slice.pending_tasks == 0
        };
        if all_done {
            self.finish_running(id);
        }
    }

    /// Feeds one wall-clock task result back into the engine at the current
    /// clock. Only meaningful in external mode.
    pub fn external_task_done(
        &mut self,
        id: &JobId,
        task_index: usize,
        status: TaskStatus,
        detail: String,
    ) -> Result<(), EngineError> {
        let slice = self
            .slices
            .get(id)
            .ok_or_else(|| EngineError::UnknownJob(id.clone()))?;
        if slice.phase != SlicePhase::Running {
            return Err(EngineError::NotRunning {
                job: id.clone(),
                task: slice
                    .job
                    .tasks
                    .get(task_index)
                    .map(|t| t.name.clone())
                    .unwrap_or_else(|| format!("#{task_index}")),
            });
        }
        self.task_done(id, task_index, status, detail);
        Ok(())
    }

    fn finish_running(&mut self, id: &JobId) {
        let now = self.clock;
        let cancelled = {
            let slice = self.slices.get_mut(id).unwrap();
            slice.timestamps.run_task = Some(Interval::new(slice.phase_started, now));
            slice.cancel_requested
        };
        let detail = {
            let slice = &self.slices[id];
            let failures = slice
                .task_results
                .iter()
                .filter(|r| r.status == TaskStatus::Failed)
                .count();
            if failures > 0 {
                format!("{failures} of {} tasks failed", slice.task_results.len())
            } else {
                String::new()
            }
        };
        self.log(id, EventKind::RunTaskEnd, detail);
        if cancelled {
            let slice = self.slices.get_mut(id).unwrap();
            if slice.failure_reason.is_none() {
                slice.failure_reason = Some("cancelled".to_string());
            }
        }
        // a failed gang still detaches and destroys; devices must come home
        self.start_detaching(id);
    }

    /// Jumps a cancelled slice straight to detach, zero-filling the phases
    /// it skipped so the timeline stays contiguous.
    fn begin_teardown(&mut self, id: &JobId) {
        let now = self.clock;
        {
            let slice = self.slices.get_mut(id).unwrap();
            if slice.failure_reason.is_none() {
                slice.failure_reason = Some("cancelled".to_string());
            }
            let zero = Interval::instant(now);
            slice.timestamps.launch_machine.get_or_insert(zero);
            slice.timestamps.prepare_task.get_or_insert(zero);
            slice.timestamps.launch_task.get_or_insert(zero);
            slice.timestamps.run_task.get_or_insert(zero);
        }
        self.start_detaching(id);
    }

    fn start_detaching(&mut self, id: &JobId) {
        let now = self.clock;
        let (count, max_done) = {
            let slice = self.slices.get_mut(id).unwrap();
            slice.phase = SlicePhase::Detaching;
            slice.phase_started = now;
            let nodes = slice.assigned_nodes.clone();
            let mut max_done = now;
            let mut count = 0usize;
            for node in &nodes {
                let attached: Vec<DeviceId> = self
                    .fabric
                    .attachments_of(node)
                    .expect("assigned nodes exist")
                    .to_vec();
                for device in attached {
                    let done = self
                        .fabric
                        .detach(&device, node, now)
                        .expect("device was attached by this slice");
                    max_done = max_done.max(done);
                    count += 1;
                }
            }
            (count, max_done)
        };
        self.log(id, EventKind::DetachDeviceStart, format!("{count} devices"));
        self.schedule(
            max_done,
            Action::PhaseDone {
                job: id.clone(),
                phase: SlicePhase::Detaching,
            },
        );
    }

    fn start_destroying(&mut self, id: &JobId) {
        let now = self.clock;
        {
            let slice = self.slices.get_mut(id).unwrap();
            slice.phase = SlicePhase::Destroying;
            slice.phase_started = now;
        }
        self.log(id, EventKind::DestroyMachineStart, "");
        self.schedule(
            now + self.params.destroy_s,
            Action::PhaseDone {
                job: id.clone(),
                phase: SlicePhase::Destroying,
            },
        );
    }

    /// Returns every reserved node and device to the pool, records the final
    /// state and lets the scheduler fill the freed space.
    fn finish_slice(&mut self, id: &JobId) {
        let (nodes, devices, failure) = {
            let slice = self.slices.get_mut(id).unwrap();
            let nodes = slice.assigned_nodes.clone();
            let devices: Vec<DeviceId> = slice
                .assigned_devices
                .values()
                .flat_map(|v| v.iter().cloned())
                .collect();
            let failure = slice.failure_reason.clone();
            slice.phase = if failure.is_some() {
                SlicePhase::Failed
            } else {
                SlicePhase::Done
            };
            (nodes, devices, failure)
        };
        for node in nodes {
            self.node_holder.remove(&node);
            self.free_nodes.insert(node);
        }
        for device in devices {
            let class = self.device_class[&device].clone();
            self.free_devices.entry(class).or_default().insert(device);
        }
        match failure {
            Some(reason) => self.log(id, EventKind::Failed, reason),
            None => self.log(id, EventKind::Completed, ""),
        }
        self.schedule_pass();
    }

    /// Cancels a job: queued jobs fail immediately; active slices tear down
    /// once their current phase completes.
    pub fn cancel(&mut self, id: &JobId) -> Result<(), EngineError> {
        let phase = self
            .slices
            .get(id)
            .map(|s| s.phase)
            .ok_or_else(|| EngineError::UnknownJob(id.clone()))?;
        match phase {
            SlicePhase::Queued => {
                self.queue.retain(|q| q != id);
                let now = self.clock;
                {
                    let slice = self.slices.get_mut(id).unwrap();
                    slice.phase = SlicePhase::Failed;
                    slice.failure_reason = Some("cancelled".to_string());
                    let zero = Interval::instant(now);
                    slice.timestamps = PhaseTimestamps {
                        attach_device: Some(zero),
                        launch_machine: Some(zero),
                        prepare_task: Some(zero),
                        launch_task: Some(zero),
                        run_task: Some(zero),
                        detach_device: Some(zero),
                        destroy_machine: Some(zero),
                    };
                }
                self.log(id, EventKind::Failed, "cancelled");
                // in strict mode the cancelled job may have been blocking
                // the whole queue
                self.schedule_pass();
                Ok(())
            }
            SlicePhase::Done | SlicePhase::Failed => {
                Err(EngineError::AlreadyFinished(id.clone()))
            }
            _ => {
                self.slices.get_mut(id).unwrap().cancel_requested = true;
                Ok(())
            }
        }
    }

    pub fn job_status(&self, id: &JobId) -> Option<JobStatus> {
        let slice = self.slices.get(id)?;
        let queue_position = if slice.phase == SlicePhase::Queued {
            self.queue.iter().position(|q| q == id)
        } else {
            None
        };
        Some(JobStatus {
            job_id: id.clone(),
            phase: slice.phase,
            queue_position,
            assigned_nodes: slice.assigned_nodes.clone(),
            assigned_devices: slice.assigned_devices.clone(),
            timestamps: slice.timestamps.clone(),
            failure_reason: slice.failure_reason.clone(),
            submitted_s: slice.submitted_s,
        })
    }

    /// Complete timeline of a finished slice.
    pub fn timeline_of(&self, id: &JobId) -> Result<Timeline, EngineError> {
        let slice = self
            .slices
            .get(id)
            .ok_or_else(|| EngineError::UnknownJob(id.clone()))?;
        if !slice.phase.is_terminal() {
            return Err(EngineError::StillActive(id.clone()));
        }
        Ok(slice
            .timestamps
            .timeline()
            .expect("terminal slices have complete timelines"))
    }

    pub fn slice(&self, id: &JobId) -> Option<&SliceRuntime> {
        self.slices.get(id)
    }

    pub fn job_ids(&self) -> impl Iterator<Item = &JobId> {
        self.slices.keys()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn queued_ids(&self) -> impl Iterator<Item = &JobId> {
        self.queue.iter()
    }

    pub fn free_node_count(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn free_device_count(&self) -> usize {
        self.free_devices.values().map(BTreeSet::len).sum()
    }

    pub fn attached_device_count(&self) -> usize {
        self.fabric.attached_count()
    }

    /// Reserved = assigned to an active slice but not currently attached.
    pub fn reserved_device_count(&self) -> usize {
        self.slices
            .values()
            .filter(|s| !s.phase.is_terminal() && s.phase != SlicePhase::Queued)
            .map(|s| s.device_count())
            .sum::<usize>()
            .saturating_sub(self.fabric.attached_count())
    }

    pub fn cluster_view(&self) -> ClusterView {
        let nodes = self
            .cluster
            .nodes
            .iter()
            .map(|n| NodeView {
                id: n.id.clone(),
                job: self.node_holder.get(&n.id).cloned(),
            })
            .collect();
        let mut holder_of_device: BTreeMap<&DeviceId, &JobId> = BTreeMap::new();
        for (id, slice) in &self.slices {
            if slice.phase.is_terminal() || slice.phase == SlicePhase::Queued {
                continue;
            }
            for devices in slice.assigned_devices.values() {
                for device in devices {
                    holder_of_device.insert(device, id);
                }
            }
        }
        let devices = self
            .cluster
            .pool
            .iter()
            .map(|d| {
                let state = match self.fabric.node_of(&d.id) {
                    Some(node) => DeviceState::Attached {
                        node: node.clone(),
                        job: (*holder_of_device
                            .get(&d.id)
                            .expect("attached devices belong to a slice"))
                        .clone(),
                    },
                    None => match holder_of_device.get(&d.id) {
                        Some(job) => DeviceState::Reserved { job: (*job).clone() },
                        None => DeviceState::Free,
                    },
                };
                DeviceView {
                    id: d.id.clone(),
                    class: d.class.clone(),
                    state,
                }
            })
            .collect();
        ClusterView {
            time_s: self.clock,
            nodes,
            devices,
            link_gbps: self.cluster.link_gbps,
            image_gb: self.cluster.image_gb,
            bandwidth_ratio: self.params.bandwidth_ratio,
        }
    }
}

fn join_ids<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for (i, id) in ids.enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(id);
    }
    out
}

/// Serializes the event log as JSON Lines, one event per line, ordered by
/// time then sequence.
pub fn events_to_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&serde_json::to_string(event).expect("events serialize"));
        out.push('\n');
    }
    out
}
