//! Discrete-event engine, seeded randomness, node placement and the
//! unit-disk radio model.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::NodeId;

/// Fixed per-delivery propagation delay (1 µs).
pub const PROPAGATION_DELAY_S: f64 = 1.0e-6;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule at {at} s, clock is already at {now} s")]
    ScheduleInPast { at: f64, now: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<A> {
    pub fire_time: f64,
    pub seq_no: u64,
    /// `None` addresses the scheduler itself.
    pub target: Option<NodeId>,
    pub action: A,
}

struct Queued<A>(SimEvent<A>);

impl<A> PartialEq for Queued<A> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<A> Eq for Queued<A> {}
impl<A> PartialOrd for Queued<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<A> Ord for Queued<A> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .fire_time
            .total_cmp(&self.0.fire_time)
            .then_with(|| other.0.seq_no.cmp(&self.0.seq_no))
    }
}

/// Event queue ordered by `(fire_time, insertion sequence)`.
pub struct Scheduler<A> {
    now: f64,
    next_seq: u64,
    heap: BinaryHeap<Queued<A>>,
}

impl<A> Default for Scheduler<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> Scheduler<A> {
    pub fn new() -> Self {
        Scheduler {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn schedule(
        &mut self,
        at: f64,
        target: Option<NodeId>,
        action: A,
    ) -> Result<EventHandle, KernelError> {
        if at < self.now || at.is_nan() {
            return Err(KernelError::ScheduleInPast { at, now: self.now });
        }
        let seq_no = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued(SimEvent {
            fire_time: at,
            seq_no,
            target,
            action,
        }));
        Ok(EventHandle(seq_no))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|q| q.0.fire_time)
    }

    /// Pops the next event if it fires at or before `limit`, advancing the
    /// clock to its fire time.
    pub fn pop_until(&mut self, limit: f64) -> Option<SimEvent<A>> {
        match self.heap.peek() {
            Some(q) if q.0.fire_time <= limit => {
                let ev = self.heap.pop().expect("peeked").0;
                self.now = ev.fire_time;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Sets the clock forward to `t` without processing anything.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event with `fire_time <= t_end` through `handler`,
    /// then leaves the clock at `t_end`. Returns the number processed.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, SimEvent<A>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
            count += 1;
        }
        self.advance_to(t_end);
        count
    }
}

/// Derives an independent 64-bit seed for a named stream from the master
/// seed: the first eight bytes (little endian) of
/// `SHA-256(master_seed_le || label)`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Portable seeded generator (ChaCha8) with explicitly defined float and
/// integer draws, so outputs do not depend on library sampling internals.
pub struct SimRng(ChaCha8Rng);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn stream(master: u64, label: &str) -> Self {
        Self::new(derive_seed(master, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]` (returns `lo` when the interval is degenerate).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `0..n` by rejection sampling.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Static node layout with a closed-disk connectivity rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    positions: Vec<Position>,
    area: (f64, f64),
    comm_range: f64,
    adjacency: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn new(positions: Vec<Position>, area: (f64, f64), comm_range: f64) -> Self {
        let n = positions.len();
        let mut adjacency = vec![Vec::new(); n];
        for a in 0..n {
            for b in (a + 1)..n {
                if positions[a].distance(&positions[b]) <= comm_range {
                    adjacency[a].push(NodeId(b as u32));
                    adjacency[b].push(NodeId(a as u32));
                }
            }
        }
        for list in &mut adjacency {
            list.sort();
        }
        Topology {
            positions,
            area,
            comm_range,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn area(&self) -> (f64, f64) {
        self.area
    }

    pub fn comm_range(&self) -> f64 {
        self.comm_range
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        self.positions[a.index()].distance(&self.positions[b.index()]) <= self.comm_range
    }

    /// Nodes within range of `a`, sorted by id.
    pub fn neighbors(&self, a: NodeId) -> &[NodeId] {
        &self.adjacency[a.index()]
    }

    pub fn degree(&self, a: NodeId) -> usize {
        self.adjacency[a.index()].len()
    }
}

/// Uniform i.i.d. placement of `n` nodes over `area`.
pub fn place_nodes(n: usize, area: (f64, f64), seed: u64) -> Vec<Position> {
    let mut rng = SimRng::new(seed);
    (0..n)
        .map(|_| Position {
            x: rng.uniform(0.0, area.0),
            y: rng.uniform(0.0, area.1),
        })
        .collect()
}

/// Independent uniform draw in `[e_lo, e_hi]` per node.
pub fn assign_initial_energy(n: usize, seed: u64, e_lo: f64, e_hi: f64) -> Vec<f64> {
    let mut rng = SimRng::new(seed);
    (0..n).map(|_| rng.uniform(e_lo, e_hi)).collect()
}

/// One line of the optional event trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub node: NodeId,
    pub event: &'static str,
    pub kind: &'static str,
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
    pub detail: String,
}

impl TraceRecord {
    /// Tab-separated `time node event kind src dst detail`; absent
    /// endpoints print as `-`.
    pub fn to_line(&self) -> String {
        fn id(n: Option<NodeId>) -> String {
            n.map_or_else(|| "-".to_string(), |n| n.to_string())
        }
        format!(
            "{:.9}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.time,
            self.node,
            self.event,
            self.kind,
            id(self.src),
            id(self.dst),
            self.detail
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut s: Scheduler<&str> = Scheduler::new();
        s.schedule(5.0, None, "e1").unwrap();
        s.schedule(5.0, None, "e2").unwrap();
        s.schedule(1.0, None, "e0").unwrap();
        let mut order = Vec::new();
        s.run_until(10.0, |_, ev| order.push(ev.action));
        assert_eq!(order, vec!["e0", "e1", "e2"]);
    }

    #[test]
    fn event_at_now_fires_before_later_ones() {
        let mut s: Scheduler<u32> = Scheduler::new();
        s.advance_to(3.0);
        s.schedule(4.0, None, 2).unwrap();
        s.schedule(3.0, None, 1).unwrap();
        assert_eq!(s.pop_until(10.0).unwrap().action, 1);
    }

    #[test]
    fn schedule_in_past_is_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.advance_to(10.0);
        assert_eq!(
            s.schedule(9.0, None, ()),
            Err(KernelError::ScheduleInPast { at: 9.0, now: 10.0 })
        );
    }

    #[test]
    fn run_until_on_empty_queue() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run_until(60.0, |_, _| {}), 0);
        assert_eq!(s.now(), 60.0);
    }

    #[test]
    fn run_until_leaves_later_events_queued() {
        let mut s: Scheduler<u32> = Scheduler::new();
        s.schedule(1.0, None, 1).unwrap();
        s.schedule(60.0, None, 2).unwrap();
        s.schedule(60.5, None, 3).unwrap();
        assert_eq!(s.run_until(60.0, |_, _| {}), 2);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn handlers_can_reschedule() {
        let mut s: Scheduler<u32> = Scheduler::new();
        s.schedule(0.5, Some(NodeId(0)), 0).unwrap();
        let mut times = Vec::new();
        let n = s.run_until(10.0, |sch, ev| {
            times.push(ev.fire_time);
            sch.schedule(ev.fire_time + 1.0, ev.target, ev.action + 1).unwrap();
        });
        assert_eq!(n, 10);
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn boundary_range_is_closed() {
        let t = Topology::new(
            vec![
                Position { x: 0.0, y: 0.0 },
                Position { x: 250.0, y: 0.0 },
                Position { x: 0.0, y: 250.1 },
                Position { x: 100.0, y: 100.0 },
            ],
            (1000.0, 1000.0),
            250.0,
        );
        assert!(t.in_range(NodeId(0), NodeId(1)));
        assert!(!t.in_range(NodeId(0), NodeId(2)));
        assert!(t.in_range(NodeId(0), NodeId(3)));
        assert_eq!(t.neighbors(NodeId(0)), &[NodeId(1), NodeId(3)]);
    }

    #[test]
    fn placement_is_seeded_and_inside_area() {
        let a = place_nodes(20, (1000.0, 1000.0), 42);
        let b = place_nodes(20, (1000.0, 1000.0), 42);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (0.0..=1000.0).contains(&p.x) && (0.0..=1000.0).contains(&p.y)));
        assert_ne!(a, place_nodes(20, (1000.0, 1000.0), 43));
        assert_eq!(place_nodes(1, (10.0, 10.0), 7).len(), 1);
    }

    #[test]
    fn energy_assignment() {
        assert!(assign_initial_energy(5, 1, 15.0, 15.0).iter().all(|&e| e == 15.0));
        let a = assign_initial_energy(10, 9, 2.0, 12.0);
        assert_eq!(a, assign_initial_energy(10, 9, 2.0, 12.0));
        assert!(a.iter().all(|&e| (2.0..=12.0).contains(&e)));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "placement"), derive_seed(1, "energy"));
        assert_eq!(derive_seed(1, "placement"), derive_seed(1, "placement"));
    }

    #[test]
    fn below_and_shuffle_stay_in_bounds() {
        let mut rng = SimRng::new(3);
        for _ in 0..1000 {
            assert!(rng.below(7) < 7);
        }
        let mut v: Vec<u32> = (0..20).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn trace_line_format() {
        let r = TraceRecord {
            time: 1.5,
            node: NodeId(2),
            event: "tx",
            kind: "HELLO",
            src: Some(NodeId(2)),
            dst: None,
            detail: "seq=1".into(),
        };
        assert_eq!(r.to_line(), "1.500000000\t2\ttx\tHELLO\t2\t-\tseq=1");
    }
}
