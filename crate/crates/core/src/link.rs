//! Fair-share model of the shared management link.
//!
//! Every booting node downloads the container image over one shared link.
//! The k transfers active at any instant each receive 1/k of the link
//! bandwidth; progress integrates piecewise-constantly between the instants
//! at which the active set changes.

use std::collections::BTreeMap;

use crate::model::NodeId;
use crate::time::Millis;

#[derive(Debug, Clone)]
pub struct SharedLink {
    link_gbps: f64,
    /// Remaining gigabits per downloading node, as of `updated_at`.
    active: BTreeMap<NodeId, f64>,
    updated_at: Millis,
}

impl SharedLink {
    pub fn new(link_gbps: f64) -> Self {
        SharedLink {
            link_gbps,
            active: BTreeMap::new(),
            updated_at: Millis::ZERO,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    fn per_transfer_gbps(&self) -> f64 {
        self.link_gbps / self.active.len() as f64
    }

    /// Advances all remaining amounts to `now` at the current share.
    fn integrate_to(&mut self, now: Millis) {
        debug_assert!(now >= self.updated_at);
        if self.active.is_empty() || now == self.updated_at {
            self.updated_at = now;
            return;
        }
        let elapsed_s = (now - self.updated_at).as_ms() as f64 / 1000.0;
        let progress = self.per_transfer_gbps() * elapsed_s;
        for remaining in self.active.values_mut() {
            *remaining = (*remaining - progress).max(0.0);
        }
        self.updated_at = now;
    }

    /// Starts a download of `gigabits` for `node` at time `now`.
    pub fn start(&mut self, node: NodeId, gigabits: f64, now: Millis) {
        self.integrate_to(now);
        self.active.insert(node, gigabits.max(0.0));
    }

    /// Time at which the next transfer would finish if the active set stays
    /// as it is. Ties (equal remaining) finish together.
    pub fn next_completion(&self) -> Option<Millis> {
        if self.active.is_empty() {
            return None;
        }
        let rate = self.per_transfer_gbps();
        self.active
            .values()
            .map(|remaining| {
                let dt_ms = (remaining / rate * 1000.0).round() as u64;
                self.updated_at + Millis::from_ms(dt_ms)
            })
            .min()
    }

    /// Completes every transfer due at exactly `now`, returning the nodes in
    /// id order. Remaining transfers are advanced to `now`.
    pub fn complete_due(&mut self, now: Millis) -> Vec<NodeId> {
        if self.active.is_empty() {
            self.updated_at = self.updated_at.max(now);
            return Vec::new();
        }
        let rate = self.per_transfer_gbps();
        let due: Vec<NodeId> = self
            .active
            .iter()
            .filter(|(_, remaining)| {
                let dt_ms = (*remaining / rate * 1000.0).round() as u64;
                self.updated_at + Millis::from_ms(dt_ms) <= now
            })
            .map(|(node, _)| node.clone())
            .collect();
        self.integrate_to(now);
        for node in &due {
            self.active.remove(node);
        }
        due
    }
}
