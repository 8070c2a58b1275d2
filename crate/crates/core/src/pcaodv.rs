//! Battery level signalled through HELLO acknowledgment timing.
//!
//! A node that hears a HELLO answers with an acknowledgment after
//! `delta_t * K`, where `K = e_max / E` grows as its battery drains. The HELLO
//! sender measures each acknowledgment's offset, inverts the relation to
//! recover the neighbor's residual energy, and marks neighbors that answer too
//! late (or not at all) as critical. Critical neighbors are then avoided when
//! choosing a next hop.
//!
//! The message handlers for this engine live on [`crate::world::World`]; this
//! module holds the protocol arithmetic and the election rule.

use thiserror::Error;

use crate::energy::k_factor;
use crate::model::{Body, EnergyEstimate, Hello, Message, NodeId, RouteRequest};
use crate::world::{AckSchedule, AckWindow, Action, HeldRreq, World};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum PcError {
    #[error("acknowledgment offset {offset} s is below one delay quantum ({delta_t} s)")]
    OffsetTooSmall { offset: f64, delta_t: f64 },
    #[error("no candidate next hop")]
    NoCandidate,
    #[error("invalid acknowledgment timing configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcConfig {
    /// Delay per unit of K (seconds).
    pub delta_t: f64,
    pub e_max: f64,
    /// Neighbors below this estimated energy are not used as relays.
    pub energy_threshold: f64,
    /// Acknowledgments whose compensated offset exceeds this are ignored.
    pub t_ack: f64,
    /// How long a node waits for an alternative RREQ copy when the first one
    /// arrived through a critical neighbor.
    pub rreq_hold: f64,
}

impl PcConfig {
    /// Defaults the acknowledgment window to the offset of the weakest
    /// acceptable battery, `delta_t * e_max / energy_threshold`.
    pub fn new(delta_t: f64, e_max: f64, energy_threshold: f64) -> Self {
        let t_ack = default_t_ack(delta_t, e_max, energy_threshold);
        PcConfig {
            delta_t,
            e_max,
            energy_threshold,
            t_ack,
            rreq_hold: t_ack,
        }
    }

    pub fn validate(&self) -> Result<(), PcError> {
        if !(self.delta_t > 0.0) {
            return Err(PcError::InvalidConfig("delta_t must be positive"));
        }
        if !(self.energy_threshold > 0.0 && self.energy_threshold < self.e_max) {
            return Err(PcError::InvalidConfig("energy_threshold must be in (0, e_max)"));
        }
        let min_window = default_t_ack(self.delta_t, self.e_max, self.energy_threshold);
        if self.t_ack < min_window * (1.0 - 1e-12) {
            return Err(PcError::InvalidConfig(
                "t_ack must cover delta_t * e_max / energy_threshold",
            ));
        }
        if !(self.rreq_hold >= 0.0) {
            return Err(PcError::InvalidConfig("rreq_hold must be non-negative"));
        }
        Ok(())
    }

    /// Offset at which a node holding `energy` answers a HELLO.
    pub fn offset_for_energy(&self, energy: f64) -> Option<f64> {
        k_factor(energy, self.e_max)
            .ok()
            .map(|k| ack_send_offset(k, self.delta_t))
    }
}

impl Default for PcConfig {
    fn default() -> Self {
        PcConfig::new(0.002, 15.0, 1.5)
    }
}

pub fn default_t_ack(delta_t: f64, e_max: f64, energy_threshold: f64) -> f64 {
    delta_t * e_max / energy_threshold
}

/// HELLO period for a node whose exchange involves `n_neighbors` nodes:
/// `max(1, n) * hi_base`.
pub fn pc_hello_interval(n_neighbors: usize, hi_base: f64) -> f64 {
    n_neighbors.max(1) as f64 * hi_base
}

pub fn ack_send_offset(k: f64, delta_t: f64) -> f64 {
    delta_t * k
}

/// Inverse of `ack_send_offset ∘ k_factor`: `e_max * delta_t / offset`.
pub fn decode_neighbor_energy(offset: f64, delta_t: f64, e_max: f64) -> Result<f64, PcError> {
    // allow for rounding in the latency compensation
    if !(offset >= delta_t * (1.0 - 1e-9)) {
        return Err(PcError::OffsetTooSmall { offset, delta_t });
    }
    Ok((e_max * delta_t / offset).min(e_max))
}

/// A route offer through `neighbor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NextHopCandidate {
    pub neighbor: NodeId,
    pub hops: u32,
    pub seq: u32,
}

/// What the electing node knows about one neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHealth {
    pub critical: bool,
    pub est_energy: EnergyEstimate,
}

impl NeighborHealth {
    pub const HEALTHY: NeighborHealth = NeighborHealth {
        critical: false,
        est_energy: EnergyEstimate::Unknown,
    };

    /// A neighbor is unsafe if it missed its last acknowledgment window or
    /// reported less than `threshold`.
    pub fn is_unsafe(&self, threshold: f64) -> bool {
        self.critical || matches!(self.est_energy, EnergyEstimate::Known(e) if e < threshold)
    }
}

/// Classic choice: freshest sequence number, then fewest hops, then lowest id.
pub fn classic_next_hop(candidates: &[NextHopCandidate]) -> Option<NextHopCandidate> {
    candidates
        .iter()
        .copied()
        .min_by(|a, b| {
            b.seq
                .cmp(&a.seq)
                .then(a.hops.cmp(&b.hops))
                .then(a.neighbor.cmp(&b.neighbor))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Election {
    pub chosen: NextHopCandidate,
    /// Every candidate was unsafe, so the classic choice was used anyway.
    pub forced_unsafe: bool,
}

/// Drops unsafe neighbors, then applies the classic rule to the survivors.
/// Falls back to the classic rule over everything when nothing survives.
pub fn elect_next_hop<F>(
    candidates: &[NextHopCandidate],
    health: F,
    energy_threshold: f64,
) -> Result<Election, PcError>
where
    F: Fn(NodeId) -> NeighborHealth,
{
    if candidates.is_empty() {
        return Err(PcError::NoCandidate);
    }
    let safe: Vec<NextHopCandidate> = candidates
        .iter()
        .copied()
        .filter(|c| !health(c.neighbor).is_unsafe(energy_threshold))
        .collect();
    match classic_next_hop(&safe) {
        Some(chosen) => Ok(Election {
            chosen,
            forced_unsafe: false,
        }),
        None => Ok(Election {
            chosen: classic_next_hop(candidates).expect("non-empty"),
            forced_unsafe: true,
        }),
    }
}

impl World {
    /// Starts collecting acknowledgments for the HELLO just sent.
    pub(crate) fn open_ack_window(&mut self, id: NodeId) {
        let now = self.now();
        let hello_no = self.next_hello_no;
        self.next_hello_no += 1;
        let closes_at = now + self.pc.t_ack + 2.0 * self.control_latency();
        let node = &mut self.nodes[id.index()];
        node.ack_window = Some(AckWindow {
            hello_no,
            opened_at: now,
            closes_at,
            closed: false,
            expected: node.neighbors.keys().copied().collect(),
            answered: Default::default(),
        });
        self.schedule(closes_at, id, Action::AckWindowClose { hello_no });
    }

    /// Schedules the answer to a HELLO from `from`. A node whose answer
    /// could not arrive inside the window stays silent.
    pub(crate) fn schedule_ack(&mut self, id: NodeId, from: NodeId) {
        let level = self.nodes[id.index()].battery.level;
        let Some(offset) = self.pc.offset_for_energy(level) else {
            return;
        };
        if offset > self.pc.t_ack {
            return;
        }
        let now = self.now();
        let fire_time = now + offset;
        if let Some(log) = &mut self.ack_log {
            log.push(AckSchedule {
                responder: id,
                hello_origin: from,
                hello_rx_time: now,
                my_offset: offset,
                fire_time,
            });
        }
        self.schedule(fire_time, id, Action::SendAck { to: from });
    }

    pub(crate) fn send_ack(&mut self, id: NodeId, to: NodeId) {
        let interval = self.current_hello_interval(id);
        let hello = Hello {
            seq: self.nodes[id.index()].seq,
            lifetime: self.aodv.allowed_hello_loss as f64 * interval,
            delta_t: self.pc.delta_t,
        };
        let msg = Message::control(id, &self.sizes, Body::HelloAck(hello));
        self.unicast(id, to, msg);
    }

    /// Decodes the sender's battery from when its acknowledgment arrived.
    pub(crate) fn on_hello_ack(&mut self, id: NodeId, from: NodeId) {
        let now = self.now();
        let round_trip = 2.0 * self.control_latency();
        let (delta_t, e_max, t_ack, thr) = (
            self.pc.delta_t,
            self.pc.e_max,
            self.pc.t_ack,
            self.pc.energy_threshold,
        );
        let node = &mut self.nodes[id.index()];
        let Some(w) = node.ack_window.as_mut() else {
            self.counters.unsolicited_ack += 1;
            return;
        };
        let offset = now - w.opened_at - round_trip;
        let record = node.neighbors.get_mut(&from);
        if w.closed || offset > t_ack * (1.0 + 1e-9) {
            self.counters.late_ack += 1;
            if let Some(r) = record {
                r.critical = true;
                r.est_energy = EnergyEstimate::Unknown;
            }
            return;
        }
        w.answered.insert(from);
        let energy = decode_neighbor_energy(offset, delta_t, e_max).unwrap_or(e_max);
        if let Some(r) = record {
            r.est_energy = EnergyEstimate::Known(energy);
            r.critical = energy < thr;
        }
    }

    /// Marks every expected neighbor that stayed silent as critical.
    pub(crate) fn close_ack_window(&mut self, id: NodeId, hello_no: u64) {
        let node = &mut self.nodes[id.index()];
        let Some(w) = node.ack_window.as_mut() else {
            return;
        };
        if w.hello_no != hello_no || w.closed {
            return;
        }
        w.closed = true;
        for n in w.expected.difference(&w.answered) {
            if let Some(r) = node.neighbors.get_mut(n) {
                r.critical = true;
            }
        }
    }

    pub fn neighbor_health(&self, id: NodeId, neighbor: NodeId) -> NeighborHealth {
        self.nodes[id.index()]
            .neighbors
            .get(&neighbor)
            .map_or(NeighborHealth::HEALTHY, |r| NeighborHealth {
                critical: r.critical,
                est_energy: r.est_energy,
            })
    }

    pub(crate) fn neighbor_is_unsafe(&self, id: NodeId, neighbor: NodeId) -> bool {
        self.neighbor_health(id, neighbor)
            .is_unsafe(self.pc.energy_threshold)
    }

    /// Defers an RREQ whose first copy came through an unsafe neighbor so
    /// later copies can offer a safer reverse path.
    pub(crate) fn hold_rreq(&mut self, id: NodeId, rreq: RouteRequest, first: NextHopCandidate) {
        let key = (rreq.originator, rreq.rreq_id);
        self.nodes[id.index()].held.insert(
            key,
            HeldRreq {
                rreq,
                candidates: vec![first],
            },
        );
        let at = self.now() + self.pc.rreq_hold;
        self.schedule(
            at,
            id,
            Action::RreqHoldEnd {
                originator: key.0,
                rreq_id: key.1,
            },
        );
    }

    pub(crate) fn release_held_rreq(&mut self, id: NodeId, originator: NodeId, rreq_id: u32) {
        let Some(held) = self.nodes[id.index()].held.remove(&(originator, rreq_id)) else {
            return;
        };
        let thr = self.pc.energy_threshold;
        let election = elect_next_hop(&held.candidates, |n| self.neighbor_health(id, n), thr)
            .expect("a held RREQ always has its first candidate");
        if election.forced_unsafe {
            self.counters.forced_unsafe += 1;
        }
        let chosen = election.chosen;
        let budget = held.rreq.ttl + held.rreq.hop_count;
        let hop_count = chosen.hops - 1;
        let rreq = RouteRequest {
            hop_count,
            ttl: budget.saturating_sub(hop_count),
            ..held.rreq
        };
        self.accept_rreq(id, rreq, chosen);
    }
}
