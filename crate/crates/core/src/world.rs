//! A single simulation world: the event queue, every node's protocol state,
//! the radio and the run counters. One world is single-threaded; run many
//! worlds in parallel for sweeps.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use sha2::{Digest, Sha256};

use crate::aodv::{AodvConfig, Discovery};
use crate::energy::{packet_airtime, Battery, CostModel};
use crate::kernel::{Scheduler, SimEvent, Topology, TraceRecord, PROPAGATION_DELAY_S};
use crate::metrics::{dijkstra_hops, route_vs_oracle, Counters, MetricsReport};
use crate::model::{
    Body, DataPacket, Message, NeighborRecord, NodeId, PacketSizes, PayloadSpec, Protocol,
    RoutingTableEntry,
};
use crate::pcaodv::{NextHopCandidate, PcConfig};

/// A constant-bit-rate application flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub src: NodeId,
    pub dst: NodeId,
    pub start_s: f64,
    pub interval_s: f64,
    pub count: u32,
    pub payload: PayloadSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryParams {
    pub e_max: f64,
    pub voltage: f64,
    pub current: f64,
    pub death_threshold: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        BatteryParams {
            e_max: 15.0,
            voltage: 1.0,
            current: 1.0,
            death_threshold: 0.15,
        }
    }
}

/// Everything needed to build a world. Topology, energies, flows and hello
/// phases are fixed inputs so both protocols can be run on identical ones.
#[derive(Debug, Clone)]
pub struct WorldSetup {
    pub protocol: Protocol,
    pub aodv: AodvConfig,
    pub pc: PcConfig,
    pub sizes: PacketSizes,
    pub cost: CostModel,
    pub battery: BatteryParams,
    pub buffer_capacity: usize,
    pub topology: Topology,
    pub initial_energy: Vec<f64>,
    pub flows: Vec<Flow>,
    /// First HELLO time of each node, in `[0, hello_interval)`.
    pub hello_phase: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Action {
    HelloTimer,
    NeighborCheck,
    SendAck { to: NodeId },
    AckWindowClose { hello_no: u64 },
    RreqTimeout { dest: NodeId, attempt: usize },
    DiscoverySettle { dest: NodeId },
    RreqHoldEnd { originator: NodeId, rreq_id: u32 },
    FlowPacket { flow: usize, index: u32 },
    Deliver(Message),
}

/// When and why a node scheduled an acknowledgment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckSchedule {
    pub responder: NodeId,
    pub hello_origin: NodeId,
    pub hello_rx_time: f64,
    pub my_offset: f64,
    pub fire_time: f64,
}

/// Acknowledgments collected for the most recent HELLO a node sent.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AckWindow {
    pub hello_no: u64,
    pub opened_at: f64,
    pub closes_at: f64,
    pub closed: bool,
    pub expected: BTreeSet<NodeId>,
    pub answered: BTreeSet<NodeId>,
}

/// An RREQ held back because its first copy came through a critical
/// neighbor.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HeldRreq {
    pub rreq: crate::model::RouteRequest,
    pub candidates: Vec<NextHopCandidate>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub battery: Battery,
    pub initial_energy: f64,
    /// Sum of every amount removed from the battery.
    pub drained: f64,
    pub alive: bool,
    pub seq: u32,
    pub rreq_id: u32,
    pub routes: BTreeMap<NodeId, RoutingTableEntry>,
    pub neighbors: BTreeMap<NodeId, NeighborRecord>,
    pub(crate) seen_rreq: HashSet<(NodeId, u32)>,
    pub(crate) discoveries: BTreeMap<NodeId, Discovery>,
    /// Answered discoveries still inside their reply window: hop count of
    /// the first reply and when the window closes.
    pub(crate) settling: BTreeMap<NodeId, (u32, f64)>,
    pub(crate) buffer: VecDeque<Message>,
    pub(crate) last_hello_at: Option<f64>,
    pub(crate) hellos_sent: u64,
    pub(crate) ack_window: Option<AckWindow>,
    pub(crate) held: BTreeMap<(NodeId, u32), HeldRreq>,
}

impl Node {
    fn new(id: NodeId, energy: f64, params: &BatteryParams) -> Self {
        let mut battery = Battery::new(energy, params.e_max, params.death_threshold);
        battery.voltage = params.voltage;
        battery.current = params.current;
        let alive = battery.is_alive();
        Node {
            id,
            initial_energy: battery.level,
            battery,
            drained: 0.0,
            alive,
            seq: 0,
            rreq_id: 0,
            routes: BTreeMap::new(),
            neighbors: BTreeMap::new(),
            seen_rreq: HashSet::new(),
            discoveries: BTreeMap::new(),
            settling: BTreeMap::new(),
            buffer: VecDeque::new(),
            last_hello_at: None,
            hellos_sent: 0,
            ack_window: None,
            held: BTreeMap::new(),
        }
    }

    pub fn active_route(&self, dest: NodeId, now: f64) -> Option<&RoutingTableEntry> {
        self.routes.get(&dest).filter(|e| e.is_active(now))
    }
}

pub struct World {
    pub(crate) protocol: Protocol,
    pub(crate) aodv: AodvConfig,
    pub(crate) pc: PcConfig,
    pub(crate) sizes: PacketSizes,
    pub(crate) cost: CostModel,
    pub(crate) buffer_capacity: usize,
    pub(crate) topology: Topology,
    pub(crate) flows: Vec<Flow>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) sched: Scheduler<Action>,
    pub(crate) counters: Counters,
    pub(crate) route_matches: Vec<crate::metrics::RouteMatch>,
    pub(crate) oracle_anomalies: u64,
    pub(crate) next_packet_id: u64,
    pub(crate) next_hello_no: u64,
    pub(crate) trace: Option<Vec<TraceRecord>>,
    pub(crate) ack_log: Option<Vec<AckSchedule>>,
    pub(crate) events_processed: u64,
}

impl World {
    pub fn new(setup: WorldSetup) -> Self {
        let n = setup.topology.len();
        assert_eq!(setup.initial_energy.len(), n, "one initial energy per node");
        assert_eq!(setup.hello_phase.len(), n, "one hello phase per node");
        let nodes: Vec<Node> = (0..n)
            .map(|i| Node::new(NodeId(i as u32), setup.initial_energy[i], &setup.battery))
            .collect();
        let mut world = World {
            protocol: setup.protocol,
            aodv: setup.aodv,
            pc: setup.pc,
            sizes: setup.sizes,
            cost: setup.cost,
            buffer_capacity: setup.buffer_capacity,
            topology: setup.topology,
            flows: setup.flows,
            nodes,
            sched: Scheduler::new(),
            counters: Counters::default(),
            route_matches: Vec::new(),
            oracle_anomalies: 0,
            next_packet_id: 0,
            next_hello_no: 0,
            trace: None,
            ack_log: None,
            events_processed: 0,
        };
        let hi = world.aodv.hello_interval;
        for i in 0..n {
            let id = NodeId(i as u32);
            if !world.nodes[i].alive {
                continue;
            }
            let phase = setup.hello_phase[i];
            world.schedule(phase, id, Action::HelloTimer);
            world.schedule(phase + hi, id, Action::NeighborCheck);
        }
        for (f, flow) in world.flows.clone().iter().enumerate() {
            if flow.count > 0 {
                world.schedule(flow.start_s, flow.src, Action::FlowPacket { flow: f, index: 0 });
            }
        }
        world
    }

    /// Keep every trace record in memory.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    /// Keep a log of every acknowledgment schedule decision.
    pub fn enable_ack_log(&mut self) {
        self.ack_log = Some(Vec::new());
    }

    pub fn now(&self) -> f64 {
        self.sched.now()
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn oracle_anomalies(&self) -> u64 {
        self.oracle_anomalies
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn ack_log(&self) -> Option<&[AckSchedule]> {
        self.ack_log.as_deref()
    }

    /// Processes every event up to and including `t_end`.
    pub fn run_until(&mut self, t_end: f64) -> u64 {
        let mut count = 0;
        while let Some(ev) = self.sched.pop_until(t_end) {
            self.dispatch(ev);
            count += 1;
        }
        self.sched.advance_to(t_end);
        self.events_processed += count;
        count
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            counters: self.counters.clone(),
            total_energy_drained: self.nodes.iter().map(|n| n.drained).sum(),
            route_matches: self.route_matches.clone(),
        }
    }

    /// SHA-256 over the trace (if recorded), counters and final node state.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        if let Some(trace) = &self.trace {
            for r in trace {
                h.update(r.to_line().as_bytes());
                h.update(b"\n");
            }
        }
        h.update(format!("{:?}", self.counters).as_bytes());
        for n in &self.nodes {
            h.update(n.battery.level.to_bits().to_le_bytes());
            h.update(n.drained.to_bits().to_le_bytes());
            h.update([n.alive as u8]);
            h.update(n.seq.to_le_bytes());
            for (d, e) in &n.routes {
                h.update(format!("{d}:{}:{}:{}:{}", e.next_hop, e.hop_count, e.dest_seq, e.valid).as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Follows active next hops toward every destination from every node and
    /// returns the first `(start, dest)` pair whose walk revisits a node.
    pub fn find_routing_loop(&self) -> Option<(NodeId, NodeId)> {
        let now = self.now();
        for start in &self.nodes {
            for &dest in start.routes.keys() {
                let mut visited = BTreeSet::new();
                let mut cur = start.id;
                while cur != dest {
                    if !visited.insert(cur) {
                        return Some((start.id, dest));
                    }
                    match self.nodes[cur.index()].active_route(dest, now) {
                        Some(e) => cur = e.next_hop,
                        None => break,
                    }
                }
            }
        }
        None
    }

    pub(crate) fn schedule(&mut self, at: f64, target: NodeId, action: Action) {
        self.sched
            .schedule(at, Some(target), action)
            .expect("protocol timers are never scheduled in the past");
    }

    fn dispatch(&mut self, ev: SimEvent<Action>) {
        let id = ev.target.expect("every event targets a node");
        if let Action::Deliver(msg) = ev.action {
            self.receive(id, msg);
            return;
        }
        if !self.nodes[id.index()].alive {
            return;
        }
        match ev.action {
            Action::HelloTimer => self.hello_tick(id),
            Action::NeighborCheck => {
                self.neighbor_timeout_check(id);
                let next = self.now() + self.aodv.hello_interval;
                self.schedule(next, id, Action::NeighborCheck);
            }
            Action::SendAck { to } => self.send_ack(id, to),
            Action::AckWindowClose { hello_no } => self.close_ack_window(id, hello_no),
            Action::RreqTimeout { dest, attempt } => self.rreq_timeout(id, dest, attempt),
            Action::DiscoverySettle { dest } => self.settle_discovery(id, dest, false),
            Action::RreqHoldEnd { originator, rreq_id } => {
                self.release_held_rreq(id, originator, rreq_id)
            }
            Action::FlowPacket { flow, index } => self.flow_packet(id, flow, index),
            Action::Deliver(_) => unreachable!(),
        }
    }

    fn receive(&mut self, id: NodeId, msg: Message) {
        let kind = msg.kind();
        if !self.nodes[id.index()].alive {
            if let Body::Data(_) = msg.body {
                self.counters.data_lost_dead_hop += 1;
            }
            self.record_trace(id, "drop", &msg, Some(id), "receiver dead".into());
            return;
        }
        self.counters.record_recv(kind);
        self.record_trace(id, "rx", &msg, Some(id), String::new());
        let from = msg.src;
        match msg.body {
            Body::Hello(ref h) => self.on_hello(id, from, h, false),
            Body::HelloAck(ref h) => self.on_hello(id, from, h, true),
            Body::Rreq(r) => self.on_rreq(id, from, r),
            Body::Rrep(r) => self.on_rrep(id, from, r),
            Body::Rerr(r) => self.on_rerr(id, from, r),
            Body::Data(_) => self.on_data(id, msg),
        }
    }

    /// Seconds from the start of a transmission to its arrival.
    pub fn delivery_latency(&self, msg: &Message) -> f64 {
        packet_airtime(msg.header_bits, msg.payload_bits) + PROPAGATION_DELAY_S
    }

    /// Latency of any control message.
    pub fn control_latency(&self) -> f64 {
        packet_airtime(self.sizes.control_header_bits, 0) + PROPAGATION_DELAY_S
    }

    /// Sends `msg` from `src`: to every in-range node when `to` is `None`,
    /// otherwise to `to` alone. Charges the sender and returns the set of
    /// nodes a delivery was scheduled for.
    pub(crate) fn transmit(&mut self, src: NodeId, msg: Message, to: Option<NodeId>) -> Vec<NodeId> {
        if !self.nodes[src.index()].alive {
            return Vec::new();
        }
        let kind = msg.kind();
        let cost = {
            let bat = &self.nodes[src.index()].battery;
            self.cost.cost(msg.header_bits, msg.payload_bits, bat)
        };
        self.drain(src, cost);
        self.counters.record_sent(kind);
        self.record_trace(src, "tx", &msg, to, String::new());

        let at = self.now() + self.delivery_latency(&msg);
        let targets: Vec<NodeId> = match to {
            None => self.topology.neighbors(src).to_vec(),
            // link-layer feedback: a unicast to a dead neighbor fails at once
            Some(dst) if dst != src && self.topology.in_range(src, dst) && self.nodes[dst.index()].alive => {
                vec![dst]
            }
            Some(_) => Vec::new(),
        };
        for &t in &targets {
            self.schedule(at, t, Action::Deliver(msg.clone()));
        }
        targets
    }

    pub(crate) fn broadcast(&mut self, src: NodeId, msg: Message) -> Vec<NodeId> {
        self.transmit(src, msg, None)
    }

    pub(crate) fn unicast(&mut self, src: NodeId, to: NodeId, msg: Message) -> bool {
        !self.transmit(src, msg, Some(to)).is_empty()
    }

    /// Removes `amount` from the node's battery, killing it when it falls
    /// below the death threshold.
    pub fn drain(&mut self, id: NodeId, amount: f64) -> f64 {
        let node = &mut self.nodes[id.index()];
        let removed = node.battery.drain(amount);
        node.drained += removed;
        let level = node.battery.level;
        if node.alive && !node.battery.is_alive() {
            self.kill(id);
        }
        level
    }

    fn kill(&mut self, id: NodeId) {
        let node = &mut self.nodes[id.index()];
        node.alive = false;
        let dropped = node.buffer.len() as u64;
        node.buffer.clear();
        node.discoveries.clear();
        node.settling.clear();
        node.held.clear();
        self.counters.data_dropped_unreachable += dropped;
        self.counters.node_deaths += 1;
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                time: self.sched.now(),
                node: id,
                event: "die",
                kind: "-",
                src: None,
                dst: None,
                detail: String::new(),
            });
        }
    }

    pub(crate) fn record_trace(
        &mut self,
        node: NodeId,
        event: &'static str,
        msg: &Message,
        dst: Option<NodeId>,
        detail: String,
    ) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                time: self.sched.now(),
                node,
                event,
                kind: msg.kind().as_str(),
                src: Some(msg.src),
                dst,
                detail,
            });
        }
    }

    /// Compares a freshly completed discovery against the shortest path over
    /// currently live nodes.
    pub(crate) fn record_discovery(&mut self, origin: NodeId, dest: NodeId, hops: u32) {
        let alive: Vec<bool> = self.nodes.iter().map(|n| n.alive).collect();
        let oracle = dijkstra_hops(&self.topology, Some(&alive), origin, dest);
        match route_vs_oracle(hops, oracle) {
            Ok(m) => self.route_matches.push(m),
            Err(_) => self.oracle_anomalies += 1,
        }
    }

    pub(crate) fn next_packet_id(&mut self) -> u64 {
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        id
    }

    pub(crate) fn data_message(&self, src: NodeId, packet: DataPacket, payload: &PayloadSpec) -> Message {
        Message::data(src, self.sizes.data_header_bits, payload.payload_bits(), packet)
    }

    fn flow_packet(&mut self, id: NodeId, flow: usize, index: u32) {
        let f = self.flows[flow].clone();
        if index + 1 < f.count {
            let next = f.start_s + f.interval_s * (index + 1) as f64;
            self.schedule(next, id, Action::FlowPacket { flow, index: index + 1 });
        }
        let packet = DataPacket {
            originator: f.src,
            destination: f.dst,
            packet_id: self.next_packet_id(),
            created_at: self.now(),
        };
        self.counters.data_sent += 1;
        let msg = self.data_message(id, packet, &f.payload);
        self.send_data(id, msg, true);
    }
}
