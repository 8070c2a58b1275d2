//! Classic AODV: periodic HELLO, expanding-ring route discovery, RREP and
//! RERR handling, route lifetimes and data forwarding.
//!
//! The acknowledgment-timing variant reuses every handler here; the places
//! where it diverges (HELLO period, acknowledgments, RREQ admission) call
//! into [`crate::pcaodv`].

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{
    fresher_route, Body, Hello, Message, NeighborRecord, NodeId, Protocol, RouteError,
    RouteFreshness, RouteReply, RouteRequest, RoutingTableEntry,
};
use crate::pcaodv::{pc_hello_interval, NextHopCandidate};
use crate::world::{Action, World};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AodvConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("expanding ring must satisfy ttl_start <= ttl_threshold <= net_diameter")]
    RingOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AodvConfig {
    pub hello_interval: f64,
    pub active_route_timeout: f64,
    pub allowed_hello_loss: u32,
    pub ttl_start: u32,
    pub ttl_increment: u32,
    pub ttl_threshold: u32,
    pub net_diameter: u32,
    pub rreq_retries: u32,
    /// Per-hop traversal estimate used to size RREQ waits.
    pub node_traversal_time: f64,
    pub timeout_buffer: u32,
}

impl Default for AodvConfig {
    fn default() -> Self {
        AodvConfig {
            hello_interval: 1.0,
            active_route_timeout: 3.0,
            allowed_hello_loss: 2,
            ttl_start: 1,
            ttl_increment: 2,
            ttl_threshold: 7,
            net_diameter: 35,
            rreq_retries: 2,
            node_traversal_time: 0.04,
            timeout_buffer: 2,
        }
    }
}

impl AodvConfig {
    pub fn validate(&self) -> Result<(), AodvConfigError> {
        let positive = [
            ("hello_interval", self.hello_interval),
            ("active_route_timeout", self.active_route_timeout),
            ("node_traversal_time", self.node_traversal_time),
            ("allowed_hello_loss", self.allowed_hello_loss as f64),
            ("ttl_start", self.ttl_start as f64),
            ("ttl_increment", self.ttl_increment as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(AodvConfigError::NotPositive(name));
            }
        }
        if !(self.ttl_start <= self.ttl_threshold && self.ttl_threshold <= self.net_diameter) {
            return Err(AodvConfigError::RingOrder);
        }
        Ok(())
    }

    /// TTL of every discovery attempt: the expanding ring up to the
    /// threshold, then the network diameter once plus `rreq_retries` times.
    pub fn ttl_schedule(&self) -> Vec<u32> {
        let mut ttls = Vec::new();
        let mut ttl = self.ttl_start;
        while ttl <= self.ttl_threshold {
            ttls.push(ttl);
            ttl += self.ttl_increment;
        }
        for _ in 0..=self.rreq_retries {
            ttls.push(self.net_diameter);
        }
        ttls
    }

    /// How long attempt `attempt` (0-based) waits for an RREP. Ring attempts
    /// wait one ring traversal; full-diameter attempts back off
    /// exponentially.
    pub fn rreq_wait(&self, attempt: usize) -> f64 {
        let ttls = self.ttl_schedule();
        let ttl = ttls[attempt.min(ttls.len() - 1)];
        if ttl < self.net_diameter {
            2.0 * self.node_traversal_time * (ttl + self.timeout_buffer) as f64
        } else {
            let first_full = ttls.iter().position(|&t| t == self.net_diameter).unwrap_or(0);
            let retry = attempt.saturating_sub(first_full) as i32;
            2.0 * self.node_traversal_time * self.net_diameter as f64 * 2f64.powi(retry)
        }
    }
}

/// An in-progress route discovery at an originator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discovery {
    pub attempt: usize,
    pub rreq_id: u32,
    pub started_at: f64,
    /// When the current attempt went out.
    pub sent_at: f64,
}

impl World {
    /// Period until this node's next HELLO. Under the acknowledgment variant
    /// one exchange (a HELLO plus one acknowledgment per neighbor) stands in
    /// for that many classic HELLO periods.
    pub fn current_hello_interval(&self, id: NodeId) -> f64 {
        let hi = self.aodv.hello_interval;
        match self.protocol {
            Protocol::Aodv => hi,
            Protocol::PcAodv => pc_hello_interval(self.nodes[id.index()].neighbors.len() + 1, hi),
        }
    }

    pub(crate) fn hello_tick(&mut self, id: NodeId) {
        let interval = self.current_hello_interval(id);
        let now = self.now();
        if let Some(last) = self.nodes[id.index()].last_hello_at {
            let due = last + interval;
            if now < due {
                // the neighborhood grew since the timer was set
                self.schedule(due, id, Action::HelloTimer);
                return;
            }
        }
        let node = &mut self.nodes[id.index()];
        node.last_hello_at = Some(now);
        node.hellos_sent += 1;
        let hello = Hello {
            seq: node.seq,
            lifetime: self.aodv.allowed_hello_loss as f64 * interval,
            delta_t: self.pc.delta_t,
        };
        let msg = Message::control(id, &self.sizes, Body::Hello(hello));
        self.broadcast(id, msg);
        if !self.nodes[id.index()].alive {
            return;
        }
        if self.protocol == Protocol::PcAodv {
            self.open_ack_window(id);
        }
        self.schedule(now + interval, id, Action::HelloTimer);
    }

    /// Neighborhood bookkeeping shared by HELLO and HELLO_ACK.
    pub(crate) fn on_hello(&mut self, id: NodeId, from: NodeId, hello: &Hello, is_ack: bool) {
        let now = self.now();
        let art = self.aodv.active_route_timeout;
        let node = &mut self.nodes[id.index()];
        node.neighbors
            .entry(from)
            .and_modify(|r| {
                r.last_heard = now;
                r.expires_at = r.expires_at.max(now + hello.lifetime);
            })
            .or_insert_with(|| NeighborRecord::new(from, now, hello.lifetime));
        let entry = node.routes.entry(from).or_insert_with(|| RoutingTableEntry {
            dest: from,
            next_hop: from,
            hop_count: 1,
            dest_seq: hello.seq,
            lifetime_expiry: now,
            valid: true,
            precursors: BTreeSet::new(),
        });
        entry.next_hop = from;
        entry.hop_count = 1;
        entry.dest_seq = entry.dest_seq.max(hello.seq);
        entry.valid = true;
        entry.lifetime_expiry = entry.lifetime_expiry.max(now + art.max(hello.lifetime));

        if self.protocol == Protocol::PcAodv {
            if is_ack {
                self.on_hello_ack(id, from);
            } else {
                self.schedule_ack(id, from);
            }
        }
    }

    /// Drops neighbors not heard from within their advertised lifetime,
    /// invalidates routes through them and reports the breaks upstream.
    pub fn neighbor_timeout_check(&mut self, id: NodeId) -> Vec<NodeId> {
        let now = self.now();
        let node = &mut self.nodes[id.index()];
        let expired: Vec<NodeId> = node
            .neighbors
            .values()
            .filter(|r| now > r.expires_at)
            .map(|r| r.neighbor)
            .collect();
        for n in &expired {
            node.neighbors.remove(n);
        }
        let mut unreachable = Vec::new();
        for &lost in &expired {
            unreachable.extend(self.invalidate_routes_via(id, lost, None));
        }
        if !unreachable.is_empty() {
            self.send_rerr(id, unreachable);
        }
        expired
    }

    /// Forgets neighbor `lost` after a failed unicast and reports the routes
    /// that went through it.
    pub(crate) fn link_break(&mut self, id: NodeId, lost: NodeId) {
        self.nodes[id.index()].neighbors.remove(&lost);
        let unreachable = self.invalidate_routes_via(id, lost, None);
        if !unreachable.is_empty() {
            self.send_rerr(id, unreachable);
        }
    }

    /// Invalidates every valid route of `id` whose next hop is `via`
    /// (restricted to `only` destinations when given). Returns the
    /// `(dest, seq)` pairs that had precursors and must be reported.
    fn invalidate_routes_via(
        &mut self,
        id: NodeId,
        via: NodeId,
        only: Option<&[(NodeId, u32)]>,
    ) -> Vec<(NodeId, u32)> {
        let mut report = Vec::new();
        let node = &mut self.nodes[id.index()];
        for (dest, e) in node.routes.iter_mut() {
            if !e.valid || e.next_hop != via {
                continue;
            }
            let seq = match only {
                None => e.dest_seq.wrapping_add(1),
                Some(list) => match list.iter().find(|(d, _)| d == dest) {
                    Some(&(_, s)) => s.max(e.dest_seq),
                    None => continue,
                },
            };
            e.valid = false;
            e.dest_seq = seq;
            if !e.precursors.is_empty() {
                report.push((*dest, seq));
                e.precursors.clear();
            }
        }
        report
    }

    fn send_rerr(&mut self, id: NodeId, unreachable: Vec<(NodeId, u32)>) {
        let msg = Message::control(id, &self.sizes, Body::Rerr(RouteError { unreachable }));
        self.broadcast(id, msg);
    }

    pub(crate) fn on_rerr(&mut self, id: NodeId, from: NodeId, rerr: RouteError) {
        let forward = self.invalidate_routes_via(id, from, Some(&rerr.unreachable));
        if !forward.is_empty() {
            self.send_rerr(id, forward);
        }
    }

    /// Starts a discovery for `dest` unless one is running or not needed.
    pub fn originate_rreq(&mut self, id: NodeId, dest: NodeId) {
        let now = self.now();
        let node = &self.nodes[id.index()];
        if dest == id || node.discoveries.contains_key(&dest) || node.active_route(dest, now).is_some() {
            return;
        }
        self.counters.discoveries_started += 1;
        self.send_rreq_attempt(id, dest, 0);
    }

    fn send_rreq_attempt(&mut self, id: NodeId, dest: NodeId, attempt: usize) {
        let now = self.now();
        let ttl = self.aodv.ttl_schedule()[attempt];
        let wait = self.aodv.rreq_wait(attempt);
        let node = &mut self.nodes[id.index()];
        node.seq += 1;
        node.rreq_id += 1;
        let rreq_id = node.rreq_id;
        node.seen_rreq.insert((id, rreq_id));
        let dest_seq = node.routes.get(&dest).map_or(0, |e| e.dest_seq);
        let started_at = node.discoveries.get(&dest).map_or(now, |d| d.started_at);
        node.discoveries.insert(
            dest,
            Discovery {
                attempt,
                rreq_id,
                started_at,
                sent_at: now,
            },
        );
        let rreq = RouteRequest {
            originator: id,
            destination: dest,
            rreq_id,
            orig_seq: node.seq,
            dest_seq,
            hop_count: 0,
            ttl,
        };
        let msg = Message::control(id, &self.sizes, Body::Rreq(rreq));
        self.broadcast(id, msg);
        self.schedule(now + wait, id, Action::RreqTimeout { dest, attempt });
    }

    pub(crate) fn rreq_timeout(&mut self, id: NodeId, dest: NodeId, attempt: usize) {
        let now = self.now();
        let node = &self.nodes[id.index()];
        match node.discoveries.get(&dest) {
            Some(d) if d.attempt == attempt => {}
            _ => return,
        }
        if node.active_route(dest, now).is_some() {
            self.nodes[id.index()].discoveries.remove(&dest);
            self.flush_buffer(id, dest);
            return;
        }
        if attempt + 1 < self.aodv.ttl_schedule().len() {
            self.send_rreq_attempt(id, dest, attempt + 1);
            return;
        }
        // destination declared unreachable
        let node = &mut self.nodes[id.index()];
        node.discoveries.remove(&dest);
        let before = node.buffer.len();
        node.buffer.retain(|m| data_destination(m) != Some(dest));
        let dropped = (before - node.buffer.len()) as u64;
        self.counters.discoveries_failed += 1;
        self.counters.data_dropped_unreachable += dropped;
    }

    pub(crate) fn on_rreq(&mut self, id: NodeId, from: NodeId, rreq: RouteRequest) {
        if rreq.originator == id {
            return;
        }
        let candidate = NextHopCandidate {
            neighbor: from,
            hops: rreq.hop_count + 1,
            seq: rreq.orig_seq,
        };
        let key = (rreq.originator, rreq.rreq_id);
        let node = &mut self.nodes[id.index()];
        if !node.seen_rreq.insert(key) {
            if let Some(h) = node.held.get_mut(&key) {
                h.candidates.push(candidate);
            }
            return;
        }
        if self.protocol == Protocol::PcAodv && self.neighbor_is_unsafe(id, from) {
            self.hold_rreq(id, rreq, candidate);
            return;
        }
        self.accept_rreq(id, rreq, candidate);
    }

    /// Installs the reverse route through `via` and then replies, or
    /// rebroadcasts with a decremented TTL.
    pub(crate) fn accept_rreq(&mut self, id: NodeId, rreq: RouteRequest, via: NextHopCandidate) {
        let now = self.now();
        let art = self.aodv.active_route_timeout;
        self.update_route(id, rreq.originator, via.neighbor, via.hops, rreq.orig_seq, now + art);

        if rreq.destination == id {
            let node = &mut self.nodes[id.index()];
            node.seq = node.seq.max(rreq.dest_seq) + 1;
            let rrep = RouteReply {
                originator: rreq.originator,
                destination: id,
                dest_seq: node.seq,
                hop_count: 0,
                lifetime: art,
            };
            self.counters.rrep_originated += 1;
            let msg = Message::control(id, &self.sizes, Body::Rrep(rrep));
            self.unicast(id, via.neighbor, msg);
            return;
        }

        let cached = self.nodes[id.index()]
            .active_route(rreq.destination, now)
            .filter(|e| e.dest_seq >= rreq.dest_seq && e.next_hop != via.neighbor)
            .map(|e| (e.next_hop, e.hop_count, e.dest_seq, e.lifetime_expiry));
        if let Some((next, hops, seq, expiry)) = cached {
            let node = &mut self.nodes[id.index()];
            if let Some(e) = node.routes.get_mut(&rreq.destination) {
                e.precursors.insert(via.neighbor);
            }
            if let Some(e) = node.routes.get_mut(&rreq.originator) {
                e.precursors.insert(next);
            }
            let rrep = RouteReply {
                originator: rreq.originator,
                destination: rreq.destination,
                dest_seq: seq,
                hop_count: hops,
                lifetime: expiry - now,
            };
            self.counters.rrep_originated += 1;
            let msg = Message::control(id, &self.sizes, Body::Rrep(rrep));
            self.unicast(id, via.neighbor, msg);
            return;
        }

        if rreq.ttl > 1 {
            let fwd = RouteRequest {
                hop_count: rreq.hop_count + 1,
                ttl: rreq.ttl - 1,
                ..rreq
            };
            let msg = Message::control(id, &self.sizes, Body::Rreq(fwd));
            self.broadcast(id, msg);
        }
    }

    /// Installs or refreshes a route when the offer is fresher than the
    /// current entry, or the current entry is unusable. Returns whether the
    /// table changed.
    fn update_route(
        &mut self,
        id: NodeId,
        dest: NodeId,
        next_hop: NodeId,
        hops: u32,
        seq: u32,
        expiry: f64,
    ) -> bool {
        let now = self.now();
        let node = &mut self.nodes[id.index()];
        let offer = RouteFreshness { seq, hops };
        match node.routes.get_mut(&dest) {
            Some(e) => {
                let replace = !e.is_active(now) && seq >= e.dest_seq || fresher_route(offer, e.freshness());
                if replace {
                    e.next_hop = next_hop;
                    e.hop_count = hops;
                    e.dest_seq = seq;
                    e.valid = true;
                    e.lifetime_expiry = e.lifetime_expiry.max(expiry);
                    if e.lifetime_expiry <= now {
                        e.lifetime_expiry = expiry;
                    }
                    true
                } else {
                    if e.valid && e.next_hop == next_hop && e.hop_count == hops {
                        e.lifetime_expiry = e.lifetime_expiry.max(expiry);
                    }
                    false
                }
            }
            None => {
                node.routes.insert(
                    dest,
                    RoutingTableEntry {
                        dest,
                        next_hop,
                        hop_count: hops,
                        dest_seq: seq,
                        lifetime_expiry: expiry,
                        valid: true,
                        precursors: BTreeSet::new(),
                    },
                );
                true
            }
        }
    }

    pub(crate) fn on_rrep(&mut self, id: NodeId, from: NodeId, rrep: RouteReply) {
        let now = self.now();
        let art = self.aodv.active_route_timeout;
        let hops = rrep.hop_count + 1;
        let updated = self.update_route(
            id,
            rrep.destination,
            from,
            hops,
            rrep.dest_seq,
            now + rrep.lifetime.max(art),
        );

        if rrep.originator == id {
            self.counters.rrep_delivered += 1;
            let dest = rrep.destination;
            let finished = self.nodes[id.index()].discoveries.contains_key(&dest)
                && self.nodes[id.index()].active_route(dest, now).is_some();
            if finished {
                let d = self.nodes[id.index()].discoveries.remove(&dest).expect("checked");
                if self.nodes[id.index()].settling.contains_key(&dest) {
                    self.settle_discovery(id, dest, true);
                }
                let hop_count = self.nodes[id.index()].routes[&dest].hop_count;
                let at = (d.sent_at + self.aodv.rreq_wait(d.attempt)).max(now);
                self.nodes[id.index()].settling.insert(dest, (hop_count, at));
                self.schedule(at, id, Action::DiscoverySettle { dest });
                self.flush_buffer(id, dest);
            }
            return;
        }
        if !updated {
            return;
        }
        let reverse = self.nodes[id.index()]
            .active_route(rrep.originator, now)
            .map(|e| e.next_hop);
        let Some(back) = reverse else {
            self.counters.broken_reverse_path += 1;
            return;
        };
        let node = &mut self.nodes[id.index()];
        if let Some(e) = node.routes.get_mut(&rrep.destination) {
            e.precursors.insert(back);
        }
        if let Some(e) = node.routes.get_mut(&rrep.originator) {
            e.precursors.insert(from);
            e.lifetime_expiry = e.lifetime_expiry.max(now + art);
        }
        let fwd = RouteReply {
            hop_count: hops,
            ..rrep
        };
        let msg = Message::control(id, &self.sizes, Body::Rrep(fwd));
        if !self.unicast(id, back, msg) {
            self.counters.broken_reverse_path += 1;
            self.link_break(id, back);
        }
    }

    /// Sends a DATA frame one hop toward its destination. At the source a
    /// missing route buffers the frame and starts discovery; elsewhere the
    /// frame is dropped and the break reported.
    pub(crate) fn send_data(&mut self, id: NodeId, mut msg: Message, at_source: bool) {
        let Some(dest) = data_destination(&msg) else {
            return;
        };
        let now = self.now();
        let art = self.aodv.active_route_timeout;
        let node = &mut self.nodes[id.index()];
        let next = node.active_route(dest, now).map(|e| e.next_hop);
        match next {
            Some(next_hop) => {
                if let Some(e) = node.routes.get_mut(&dest) {
                    e.lifetime_expiry = e.lifetime_expiry.max(now + art);
                }
                if let Some(e) = node.routes.get_mut(&next_hop) {
                    if e.valid {
                        e.lifetime_expiry = e.lifetime_expiry.max(now + art);
                    }
                }
                msg.src = id;
                if !self.unicast(id, next_hop, msg.clone()) {
                    self.counters.data_lost_dead_hop += 1;
                    self.link_break(id, next_hop);
                    if at_source {
                        self.send_data(id, msg, true);
                    }
                }
            }
            None if at_source => {
                if node.buffer.len() >= self.buffer_capacity {
                    node.buffer.pop_front();
                    self.counters.buffer_overflow += 1;
                }
                if self.buffer_capacity > 0 {
                    node.buffer.push_back(msg);
                } else {
                    self.counters.buffer_overflow += 1;
                }
                self.originate_rreq(id, dest);
            }
            None => {
                self.counters.data_dropped_no_route += 1;
                let seq = node.routes.get(&dest).map_or(0, |e| e.dest_seq);
                self.send_rerr(id, vec![(dest, seq)]);
            }
        }
    }

    pub(crate) fn on_data(&mut self, id: NodeId, msg: Message) {
        match data_destination(&msg) {
            Some(dest) if dest == id => self.counters.data_delivered += 1,
            Some(_) => self.send_data(id, msg, false),
            None => {}
        }
    }

    pub(crate) fn flush_buffer(&mut self, id: NodeId, dest: NodeId) {
        let node = &mut self.nodes[id.index()];
        let (ready, keep): (Vec<Message>, Vec<Message>) = node
            .buffer
            .drain(..)
            .partition(|m| data_destination(m) == Some(dest));
        node.buffer.extend(keep);
        for m in ready {
            self.send_data(id, m, true);
        }
    }

    /// Number of DATA frames waiting for a route at `id`.
    /// Records the route a discovery ended with once its reply window has
    /// closed, so later and better replies count. Falls back to the first
    /// reply when the route has already gone.
    pub(crate) fn settle_discovery(&mut self, id: NodeId, dest: NodeId, early: bool) {
        let now = self.now();
        let node = &mut self.nodes[id.index()];
        let Some(&(first, due)) = node.settling.get(&dest) else {
            return;
        };
        if !early && now < due {
            return;
        }
        node.settling.remove(&dest);
        let hops = node.active_route(dest, now).map_or(first, |e| e.hop_count);
        self.record_discovery(id, dest, hops);
    }

    pub fn buffered(&self, id: NodeId) -> usize {
        self.nodes[id.index()].buffer.len()
    }

    pub fn discovering(&self, id: NodeId, dest: NodeId) -> bool {
        self.nodes[id.index()].discoveries.contains_key(&dest)
    }
}

fn data_destination(m: &Message) -> Option<NodeId> {
    match &m.body {
        Body::Data(d) => Some(d.destination),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expanding_ring_ttls() {
        let c = AodvConfig::default();
        assert_eq!(c.ttl_schedule(), vec![1, 3, 5, 7, 35, 35, 35]);
        let distinct: Vec<u32> = {
            let mut v = c.ttl_schedule();
            v.dedup();
            v
        };
        assert_eq!(distinct, vec![1, 3, 5, 7, 35]);
    }

    #[test]
    fn rreq_waits_grow() {
        let c = AodvConfig::default();
        let waits: Vec<f64> = (0..7).map(|a| c.rreq_wait(a)).collect();
        assert!((waits[0] - 0.24).abs() < 1e-12);
        assert!((waits[3] - 0.72).abs() < 1e-12);
        assert!((waits[4] - 2.8).abs() < 1e-12);
        assert!((waits[5] - 5.6).abs() < 1e-12);
        assert!((waits[6] - 11.2).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(AodvConfig::default().validate().is_ok());
        let bad = AodvConfig {
            ttl_threshold: 40,
            ..AodvConfig::default()
        };
        assert_eq!(bad.validate(), Err(AodvConfigError::RingOrder));
        let bad = AodvConfig {
            hello_interval: 0.0,
            ..AodvConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
