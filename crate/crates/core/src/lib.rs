//! Slice lifecycle management for a disaggregated cluster.
//!
//! A *slice* is compute nodes plus pool devices (GPUs, NVMe drives)
//! dynamically attached to them over a simulated disaggregation fabric.
//! Jobs request a slice shape, run one task per node (or several on one
//! node), and release everything on completion. This crate holds the whole
//! model: domain types and document parsing ([`model`]), the fabric
//! ([`fabric`]) and shared-link download model ([`link`]), the
//! deterministic event engine with its FIFO gang scheduler ([`engine`]),
//! task executors ([`executor`]), scenario files and the bundled reference
//! scenarios ([`scenario`]), and report rendering ([`report`]).

pub mod engine;
pub mod executor;
pub mod fabric;
pub mod link;
pub mod model;
pub mod report;
pub mod scenario;
pub mod time;

pub use engine::{
    ClusterView, Engine, EngineError, EngineOptions, Event, EventKind, ExecMode, JobStatus,
    SideEffect, SlicePhase, SubmitError,
};
pub use fabric::{FabricError, FabricState, LatencyParams};
pub use model::{
    breakdown, check_feasible, parse_cluster_config, parse_job_spec, Breakdown, ClusterConfig,
    Device, DeviceClass, DeviceId, DeviceKind, Feasibility, Interval, JobId, JobKind, JobSpec,
    ModelError, NodeId, NodeSpec, SliceSpec, TaskSpec, Timeline,
};
pub use scenario::{parse_scenario, Scenario, ScenarioJob};
pub use time::Millis;
