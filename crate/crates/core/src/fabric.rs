//! Simulated disaggregation fabric.
//!
//! Models a PCIe-over-Ethernet style fabric: pool devices are attached to
//! and detached from compute nodes exclusively, operations against the same
//! node serialize while different nodes proceed in parallel, and remote
//! access sees a configurable fraction of local host-to-device bandwidth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterConfig, DeviceId, NodeId};
use crate::time::Millis;

#[derive(Debug, Error, PartialEq)]
pub enum FabricError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("device {device} is already attached to node {node}")]
    AlreadyAttached { device: DeviceId, node: NodeId },
    #[error("device {device} is not attached to node {node}")]
    NotAttached { device: DeviceId, node: NodeId },
    #[error("local bandwidth must be positive, got {0}")]
    NonpositiveBandwidth(f64),
    #[error("bandwidth_ratio must be in (0, 1], got {0}")]
    InvalidRatio(f64),
}

/// Latency and bandwidth parameters of the fabric and machine lifecycle.
///
/// The defaults are the committed output of `slicer calibrate`: the smallest
/// grid point for which the bundled reference scenarios land inside the
/// published overhead windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyParams {
    /// Seconds to attach one device to a node.
    pub attach_s: Millis,
    /// Seconds to detach one device from a node.
    pub detach_s: Millis,
    /// Base seconds to boot a node, before the image download.
    pub machine_boot_s: Millis,
    /// Seconds of per-node task housekeeping (scheduling, staging).
    pub prepare_s: Millis,
    /// Seconds of task launch time per attached device on the node.
    pub launch_per_device_s: Millis,
    /// Seconds to shut a node down and release it.
    pub destroy_s: Millis,
    /// Fraction of local PCIe host-to-device bandwidth available through
    /// the fabric.
    pub bandwidth_ratio: f64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        // Values frozen from `slicer calibrate` against the bundled
        // reference scenarios; see that subcommand for the search.
        LatencyParams {
            attach_s: Millis::from_secs(1),
            detach_s: Millis::from_secs(1),
            machine_boot_s: Millis::from_secs(120),
            prepare_s: Millis::from_secs(9),
            launch_per_device_s: Millis::from_secs(32),
            destroy_s: Millis::from_secs(14),
            bandwidth_ratio: 0.2,
        }
    }
}

impl LatencyParams {
    pub fn validate(&self) -> Result<(), FabricError> {
        if self.bandwidth_ratio.is_nan() || self.bandwidth_ratio <= 0.0 || self.bandwidth_ratio > 1.0
        {
            return Err(FabricError::InvalidRatio(self.bandwidth_ratio));
        }
        Ok(())
    }

    /// Host-to-device bandwidth seen through the fabric, given the local
    /// PCIe figure. Reporting only; simulated task durations are inputs.
    pub fn effective_bandwidth(&self, local_gbps: f64) -> Result<f64, FabricError> {
        if local_gbps <= 0.0 || !local_gbps.is_finite() {
            return Err(FabricError::NonpositiveBandwidth(local_gbps));
        }
        Ok(local_gbps * self.bandwidth_ratio)
    }
}

/// Current device-to-node attachment map plus the per-node operation queue
/// that serializes attach/detach against a single node.
#[derive(Debug, Clone)]
pub struct FabricState {
    params: LatencyParams,
    nodes: BTreeSet<NodeId>,
    devices: BTreeSet<DeviceId>,
    attached_to: BTreeMap<DeviceId, NodeId>,
    // per node, in attach order
    node_devices: BTreeMap<NodeId, Vec<DeviceId>>,
    node_busy_until: BTreeMap<NodeId, Millis>,
}

impl FabricState {
    pub fn new(cluster: &ClusterConfig, params: LatencyParams) -> Self {
        FabricState {
            params,
            nodes: cluster.nodes.iter().map(|n| n.id.clone()).collect(),
            devices: cluster.pool.iter().map(|d| d.id.clone()).collect(),
            attached_to: BTreeMap::new(),
            node_devices: BTreeMap::new(),
            node_busy_until: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &LatencyParams {
        &self.params
    }

    fn queue_op(&mut self, node: &NodeId, now: Millis, op_len: Millis) -> Millis {
        let free_at = self.node_busy_until.get(node).copied().unwrap_or(Millis::ZERO);
        let start = now.max(free_at);
        let done = start + op_len;
        self.node_busy_until.insert(node.clone(), done);
        done
    }

    /// Attaches a device to a node. Completion is serialized against other
    /// operations queued on the same node; operations on different nodes
    /// overlap freely.
    pub fn attach(
        &mut self,
        device: &DeviceId,
        node: &NodeId,
        now: Millis,
    ) -> Result<Millis, FabricError> {
        if !self.devices.contains(device) {
            return Err(FabricError::UnknownDevice(device.clone()));
        }
        if !self.nodes.contains(node) {
            return Err(FabricError::UnknownNode(node.clone()));
        }
        if let Some(holder) = self.attached_to.get(device) {
            return Err(FabricError::AlreadyAttached {
                device: device.clone(),
                node: holder.clone(),
            });
        }
        let done = self.queue_op(node, now, self.params.attach_s);
        self.attached_to.insert(device.clone(), node.clone());
        self.node_devices
            .entry(node.clone())
            .or_default()
            .push(device.clone());
        Ok(done)
    }

    /// Detaches a device from the node it is attached to, returning it to
    /// the pool at the serialized completion time.
    pub fn detach(
        &mut self,
        device: &DeviceId,
        node: &NodeId,
        now: Millis,
    ) -> Result<Millis, FabricError> {
        if !self.devices.contains(device) {
            return Err(FabricError::UnknownDevice(device.clone()));
        }
        if !self.nodes.contains(node) {
            return Err(FabricError::UnknownNode(node.clone()));
        }
        match self.attached_to.get(device) {
            Some(holder) if holder == node => {}
            _ => {
                return Err(FabricError::NotAttached {
                    device: device.clone(),
                    node: node.clone(),
                });
            }
        }
        let done = self.queue_op(node, now, self.params.detach_s);
        self.attached_to.remove(device);
        if let Some(list) = self.node_devices.get_mut(node) {
            list.retain(|d| d != device);
        }
        Ok(done)
    }

    /// Devices currently attached to the node, in attach order.
    pub fn attachments_of(&self, node: &NodeId) -> Result<&[DeviceId], FabricError> {
        if !self.nodes.contains(node) {
            return Err(FabricError::UnknownNode(node.clone()));
        }
        Ok(self
            .node_devices
            .get(node)
            .map(Vec::as_slice)
            .unwrap_or(&[]))
    }

    pub fn node_of(&self, device: &DeviceId) -> Option<&NodeId> {
        self.attached_to.get(device)
    }

    pub fn attached_count(&self) -> usize {
        self.attached_to.len()
    }

    pub fn pool_size(&self) -> usize {
        self.devices.len()
    }

    pub fn free_count(&self) -> usize {
        self.devices.len() - self.attached_to.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_cluster_config;

    fn test_cluster() -> ClusterConfig {
        parse_cluster_config(
            r#"{
                "nodes": [
                    {"id": "n0", "cpu_cores": 10, "memory_gb": 128},
                    {"id": "n1", "cpu_cores": 10, "memory_gb": 128}
                ],
                "pool": [
                    {"id": "gpu0", "kind": "gpu", "model": "P100"},
                    {"id": "gpu1", "kind": "gpu", "model": "P100"},
                    {"id": "gpu2", "kind": "gpu", "model": "P100"},
                    {"id": "gpu3", "kind": "gpu", "model": "P100"}
                ],
                "link_gbps": 1.0,
                "image_gb": 3.0
            }"#,
        )
        .unwrap()
    }

    fn params(attach_s: u64, detach_s: u64) -> LatencyParams {
        LatencyParams {
            attach_s: Millis::from_secs(attach_s),
            detach_s: Millis::from_secs(detach_s),
            ..LatencyParams::default()
        }
    }

    #[test]
    fn single_attach_completes_after_attach_latency() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        let done = fabric
            .attach(&"gpu0".into(), &"n0".into(), Millis::ZERO)
            .unwrap();
        assert_eq!(done, Millis::from_secs(6));
    }

    #[test]
    fn attaches_to_one_node_serialize() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        let node: NodeId = "n0".into();
        let completions: Vec<Millis> = (0..4)
            .map(|i| {
                fabric
                    .attach(&DeviceId::new(format!("gpu{i}")), &node, Millis::ZERO)
                    .unwrap()
            })
            .collect();
        let expect: Vec<Millis> = (1..=4).map(|k| Millis::from_secs(6 * k)).collect();
        assert_eq!(completions, expect);
    }

    #[test]
    fn attaches_to_different_nodes_overlap() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        let a = fabric.attach(&"gpu0".into(), &"n0".into(), Millis::ZERO).unwrap();
        let b = fabric.attach(&"gpu1".into(), &"n1".into(), Millis::ZERO).unwrap();
        assert_eq!(a, Millis::from_secs(6));
        assert_eq!(b, Millis::from_secs(6));
    }

    #[test]
    fn double_attach_is_an_exclusivity_error() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        fabric.attach(&"gpu0".into(), &"n0".into(), Millis::ZERO).unwrap();
        let err = fabric
            .attach(&"gpu0".into(), &"n1".into(), Millis::ZERO)
            .unwrap_err();
        assert_eq!(
            err,
            FabricError::AlreadyAttached {
                device: "gpu0".into(),
                node: "n0".into(),
            }
        );
    }

    #[test]
    fn detach_restores_the_free_pool() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        fabric.attach(&"gpu0".into(), &"n0".into(), Millis::ZERO).unwrap();
        assert_eq!(fabric.free_count(), 3);
        fabric
            .detach(&"gpu0".into(), &"n0".into(), Millis::from_secs(6))
            .unwrap();
        assert_eq!(fabric.free_count(), 4);
        assert_eq!(fabric.attached_count(), 0);
    }

    #[test]
    fn detaches_from_one_node_serialize() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(0, 5));
        let node: NodeId = "n0".into();
        fabric.attach(&"gpu0".into(), &node, Millis::ZERO).unwrap();
        fabric.attach(&"gpu1".into(), &node, Millis::ZERO).unwrap();
        let d0 = fabric.detach(&"gpu0".into(), &node, Millis::ZERO).unwrap();
        let d1 = fabric.detach(&"gpu1".into(), &node, Millis::ZERO).unwrap();
        assert_eq!(d0, Millis::from_secs(5));
        assert_eq!(d1, Millis::from_secs(10));
    }

    #[test]
    fn detaching_an_unattached_device_fails() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        let err = fabric
            .detach(&"gpu0".into(), &"n0".into(), Millis::ZERO)
            .unwrap_err();
        assert!(matches!(err, FabricError::NotAttached { .. }));
    }

    #[test]
    fn attachments_are_listed_in_attach_order() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        let node: NodeId = "n0".into();
        assert!(fabric.attachments_of(&node).unwrap().is_empty());
        fabric.attach(&"gpu0".into(), &node, Millis::ZERO).unwrap();
        fabric.attach(&"gpu1".into(), &node, Millis::ZERO).unwrap();
        assert_eq!(
            fabric.attachments_of(&node).unwrap(),
            &[DeviceId::from("gpu0"), DeviceId::from("gpu1")]
        );
        fabric
            .detach(&"gpu0".into(), &node, Millis::from_secs(12))
            .unwrap();
        assert_eq!(
            fabric.attachments_of(&node).unwrap(),
            &[DeviceId::from("gpu1")]
        );
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let cluster = test_cluster();
        let mut fabric = FabricState::new(&cluster, params(6, 5));
        assert!(matches!(
            fabric.attach(&"nope".into(), &"n0".into(), Millis::ZERO),
            Err(FabricError::UnknownDevice(_))
        ));
        assert!(matches!(
            fabric.attach(&"gpu0".into(), &"nope".into(), Millis::ZERO),
            Err(FabricError::UnknownNode(_))
        ));
        assert!(matches!(
            fabric.attachments_of(&"nope".into()),
            Err(FabricError::UnknownNode(_))
        ));
    }

    #[test]
    fn effective_bandwidth_applies_the_ratio() {
        let params = LatencyParams {
            bandwidth_ratio: 0.2,
            ..LatencyParams::default()
        };
        assert_eq!(params.effective_bandwidth(128.0).unwrap(), 25.6);
        let identity = LatencyParams {
            bandwidth_ratio: 1.0,
            ..LatencyParams::default()
        };
        assert_eq!(identity.effective_bandwidth(40.0).unwrap(), 40.0);
        assert!(params.effective_bandwidth(0.0).is_err());
    }
}
