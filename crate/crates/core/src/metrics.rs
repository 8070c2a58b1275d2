//! Run counters, derived ratios, the shortest-path oracle and CSV output.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{self, Write};

use thiserror::Error;

use crate::kernel::Topology;
use crate::model::{MessageKind, NodeId, Protocol};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    #[error("route of {discovered} hops found but the oracle says the destination is unreachable")]
    OracleUnreachableButRouted { discovered: u32 },
    #[error("discovered route ({discovered} hops) is shorter than the oracle minimum ({oracle})")]
    ShorterThanOracle { discovered: u32, oracle: u32 },
}

/// Raw event counters for one run. Control `*_sent` count transmissions at
/// every hop, `*_recv` count receptions by live nodes. `data_sent` counts
/// packets handed to the network by their source; per-hop DATA
/// transmissions are in `data_tx`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub hello_sent: u64,
    pub hello_recv: u64,
    pub ack_sent: u64,
    pub ack_recv: u64,
    pub rreq_sent: u64,
    pub rreq_recv: u64,
    pub rrep_sent: u64,
    pub rrep_recv: u64,
    pub rerr_sent: u64,
    pub rerr_recv: u64,
    pub data_sent: u64,
    pub data_tx: u64,
    pub data_recv: u64,
    /// DATA packets that reached their final destination.
    pub data_delivered: u64,
    /// RREPs created by a destination or by an intermediate with a cached route.
    pub rrep_originated: u64,
    /// RREPs that reached the node that asked for the route.
    pub rrep_delivered: u64,
    pub forced_unsafe: u64,
    pub broken_reverse_path: u64,
    pub unsolicited_ack: u64,
    pub late_ack: u64,
    pub buffer_overflow: u64,
    pub data_dropped_no_route: u64,
    pub data_dropped_unreachable: u64,
    pub data_lost_dead_hop: u64,
    pub discoveries_started: u64,
    pub discoveries_failed: u64,
    pub node_deaths: u64,
}

impl Counters {
    pub fn record_sent(&mut self, kind: MessageKind) {
        match kind {
            MessageKind::Hello => self.hello_sent += 1,
            MessageKind::HelloAck => self.ack_sent += 1,
            MessageKind::Rreq => self.rreq_sent += 1,
            MessageKind::Rrep => self.rrep_sent += 1,
            MessageKind::Rerr => self.rerr_sent += 1,
            MessageKind::Data => self.data_tx += 1,
        }
    }

    pub fn record_recv(&mut self, kind: MessageKind) {
        match kind {
            MessageKind::Hello => self.hello_recv += 1,
            MessageKind::HelloAck => self.ack_recv += 1,
            MessageKind::Rreq => self.rreq_recv += 1,
            MessageKind::Rrep => self.rrep_recv += 1,
            MessageKind::Rerr => self.rerr_recv += 1,
            MessageKind::Data => self.data_recv += 1,
        }
    }

    pub fn control_sent(&self) -> u64 {
        self.hello_sent + self.ack_sent + self.rreq_sent + self.rrep_sent + self.rerr_sent
    }
}

/// Counters plus energy totals for a finished run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub counters: Counters,
    pub total_energy_drained: f64,
    pub route_matches: Vec<RouteMatch>,
}

impl MetricsReport {
    pub fn overhead(&self) -> f64 {
        overhead(&self.counters)
    }

    pub fn pdr_rrep(&self) -> f64 {
        pdr(self.counters.rrep_originated, self.counters.rrep_delivered)
    }

    pub fn pdr_data(&self) -> f64 {
        pdr(self.counters.data_sent, self.counters.data_delivered)
    }
}

/// Control transmissions over control plus data transmissions; 0 for an
/// empty run.
pub fn overhead(c: &Counters) -> f64 {
    let ctrl = c.control_sent();
    let total = ctrl + c.data_sent;
    if total == 0 {
        0.0
    } else {
        ctrl as f64 / total as f64
    }
}

/// Received over transmitted; 0 when nothing was transmitted.
pub fn pdr(transmitted: u64, received: u64) -> f64 {
    if transmitted == 0 {
        0.0
    } else {
        received as f64 / transmitted as f64
    }
}

/// Minimum hop count from `src` to `dst` over the unit-weight connectivity
/// graph, restricted to nodes with `alive[i] == true` (pass `None` to use
/// every node). `None` when unreachable.
pub fn dijkstra_hops(
    topo: &Topology,
    alive: Option<&[bool]>,
    src: NodeId,
    dst: NodeId,
) -> Option<u32> {
    let usable = |n: NodeId| alive.is_none_or(|a| a[n.index()]);
    if !usable(src) || !usable(dst) {
        return None;
    }
    if src == dst {
        return Some(0);
    }
    let mut dist = vec![u32::MAX; topo.len()];
    let mut heap = BinaryHeap::new();
    dist[src.index()] = 0;
    heap.push(Reverse((0u32, src)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if u == dst {
            return Some(d);
        }
        if d > dist[u.index()] {
            continue;
        }
        for &v in topo.neighbors(u) {
            if !usable(v) {
                continue;
            }
            let nd = d + 1;
            if nd < dist[v.index()] {
                dist[v.index()] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    None
}

pub fn dijkstra_oracle(topo: &Topology, src: NodeId, dst: NodeId) -> Option<u32> {
    dijkstra_hops(topo, None, src, dst)
}

/// Closed-form HELLO-family energy over `t` seconds for `n` nodes at unit
/// message cost `c`.
///
/// For AODV every node beacons once per `hi`. For the acknowledgment
/// variant one node's beacons (`c*t/hi`) are answered by each of the other
/// `n - 1` nodes, every responder contributing `(n-1)*c*t / ((n-1)*hi)`; the
/// two totals coincide.
pub fn analytic_hello_energy(n: u32, c: f64, t: f64, hi: f64, protocol: Protocol) -> f64 {
    assert!(n >= 1 && hi > 0.0);
    match protocol {
        Protocol::Aodv => n as f64 * c * t / hi,
        Protocol::PcAodv => {
            let hello = c * t / hi;
            if n == 1 {
                return hello;
            }
            let responders = (n - 1) as f64;
            let pc_interval = responders * hi;
            let per_responder = responders * c * t / pc_interval;
            hello + responders * per_responder
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteMatch {
    pub discovered: u32,
    pub oracle: u32,
    pub exact: bool,
    pub slack: u32,
}

pub fn route_vs_oracle(discovered: u32, oracle: Option<u32>) -> Result<RouteMatch, MetricsError> {
    let oracle = oracle.ok_or(MetricsError::OracleUnreachableButRouted { discovered })?;
    if discovered < oracle {
        return Err(MetricsError::ShorterThanOracle { discovered, oracle });
    }
    Ok(RouteMatch {
        discovered,
        oracle,
        exact: discovered == oracle,
        slack: discovered - oracle,
    })
}

/// Identity of a run plus its report; one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub protocol: Protocol,
    pub nodes: usize,
    pub seed: u64,
    pub sim_time_s: f64,
    pub report: MetricsReport,
}

pub const CSV_COLUMNS: [&str; 19] = [
    "run_id",
    "protocol",
    "nodes",
    "seed",
    "sim_time_s",
    "hello_sent",
    "hello_recv",
    "ack_sent",
    "ack_recv",
    "rreq_sent",
    "rrep_sent",
    "rerr_sent",
    "data_sent",
    "data_delivered",
    "overhead",
    "pdr_rrep",
    "pdr_data",
    "total_energy_drained",
    "forced_unsafe",
];

/// Sort key used for every emitted table.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (a.nodes, a.protocol, a.seed, &a.run_id).cmp(&(b.nodes, b.protocol, b.seed, &b.run_id))
    });
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn csv_row(r: &RunRecord) -> String {
    let c = &r.report.counters;
    format!(
        "{},{},{},{},{:.6},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
        r.run_id,
        r.protocol,
        r.nodes,
        r.seed,
        r.sim_time_s,
        c.hello_sent,
        c.hello_recv,
        c.ack_sent,
        c.ack_recv,
        c.rreq_sent,
        c.rrep_sent,
        c.rerr_sent,
        c.data_sent,
        c.data_delivered,
        r.report.overhead(),
        r.report.pdr_rrep(),
        r.report.pdr_data(),
        r.report.total_energy_drained,
        c.forced_unsafe,
    )
}

/// Writes the header and one row per record, in the order given.
pub fn emit_csv<W: Write>(out: &mut W, records: &[RunRecord]) -> io::Result<()> {
    writeln!(out, "{}", csv_header())?;
    for r in records {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}
