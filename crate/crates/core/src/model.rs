//! Domain types shared by both routing engines: node identifiers, the
//! message union, routing table entries, neighbor records and the
//! route-freshness rule.

use std::collections::BTreeSet;
use std::fmt;

/// Dense node identifier, `0..n` within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which routing engine a world runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Aodv,
    PcAodv,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Aodv => "aodv",
            Protocol::PcAodv => "pc-aodv",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aodv" => Ok(Protocol::Aodv),
            "pc-aodv" | "pc_aodv" | "pcaodv" => Ok(Protocol::PcAodv),
            other => Err(format!("unknown protocol `{other}` (expected aodv or pc-aodv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Hello,
    HelloAck,
    Rreq,
    Rrep,
    Rerr,
    Data,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::Hello,
        MessageKind::HelloAck,
        MessageKind::Rreq,
        MessageKind::Rrep,
        MessageKind::Rerr,
        MessageKind::Data,
    ];

    pub fn is_control(self) -> bool {
        !matches!(self, MessageKind::Data)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::HelloAck => "HELLO_ACK",
            MessageKind::Rreq => "RREQ",
            MessageKind::Rrep => "RREP",
            MessageKind::Rerr => "RERR",
            MessageKind::Data => "DATA",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Neighborhood beacon. An acknowledgment uses exactly the same layout; only
/// the send instant differs.
#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub seq: u32,
    /// How long receivers may keep the sender in their neighbor table
    /// without hearing from it again (seconds).
    pub lifetime: f64,
    /// Delay quantum per unit of K, advertised network-wide.
    pub delta_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteRequest {
    pub originator: NodeId,
    pub destination: NodeId,
    pub rreq_id: u32,
    pub orig_seq: u32,
    /// 0 means "unknown".
    pub dest_seq: u32,
    pub hop_count: u32,
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteReply {
    pub originator: NodeId,
    pub destination: NodeId,
    pub dest_seq: u32,
    pub hop_count: u32,
    pub lifetime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteError {
    pub unreachable: Vec<(NodeId, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub originator: NodeId,
    pub destination: NodeId,
    pub packet_id: u64,
    pub created_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello(Hello),
    HelloAck(Hello),
    Rreq(RouteRequest),
    Rrep(RouteReply),
    Rerr(RouteError),
    Data(DataPacket),
}

/// A frame on the simulated wire. `src` is the transmitting node for this
/// hop, not the end-to-end originator.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: NodeId,
    pub header_bits: u64,
    pub payload_bits: u64,
    pub body: Body,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self.body {
            Body::Hello(_) => MessageKind::Hello,
            Body::HelloAck(_) => MessageKind::HelloAck,
            Body::Rreq(_) => MessageKind::Rreq,
            Body::Rrep(_) => MessageKind::Rrep,
            Body::Rerr(_) => MessageKind::Rerr,
            Body::Data(_) => MessageKind::Data,
        }
    }

    pub fn control(src: NodeId, sizes: &PacketSizes, body: Body) -> Self {
        debug_assert!(!matches!(body, Body::Data(_)));
        Message {
            src,
            header_bits: sizes.control_header_bits,
            payload_bits: 0,
            body,
        }
    }

    pub fn data(src: NodeId, header_bits: u64, payload_bits: u64, packet: DataPacket) -> Self {
        Message {
            src,
            header_bits,
            payload_bits,
            body: Body::Data(packet),
        }
    }

    /// Total bits on the wire.
    pub fn size_bits(&self) -> u64 {
        self.header_bits + self.payload_bits
    }
}

/// DATA payload parameters: `multiplier * (data + udp + ip)` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadSpec {
    pub data: u64,
    pub udp: u64,
    pub ip: u64,
    pub multiplier: u64,
}

impl Default for PayloadSpec {
    fn default() -> Self {
        PayloadSpec {
            data: 228,
            udp: 8,
            ip: 20,
            multiplier: 256,
        }
    }
}

impl PayloadSpec {
    pub fn payload_bits(&self) -> u64 {
        self.multiplier * (self.data + self.udp + self.ip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketSizes {
    /// Size of every control message (HELLO, HELLO_ACK, RREQ, RREP, RERR).
    pub control_header_bits: u64,
    pub data_header_bits: u64,
    pub payload: PayloadSpec,
}

impl Default for PacketSizes {
    fn default() -> Self {
        PacketSizes {
            control_header_bits: 512,
            data_header_bits: 192,
            payload: PayloadSpec::default(),
        }
    }
}

/// Bits a message occupies on the wire under the given size configuration.
///
/// DATA frames carry their own header and payload sizes; every control kind
/// is sized by the single `control_header_bits` knob, so HELLO and
/// HELLO_ACK always cost the same.
pub fn message_size_bits(m: &Message, sizes: &PacketSizes) -> u64 {
    match m.kind() {
        MessageKind::Data => m.header_bits + m.payload_bits,
        _ => sizes.control_header_bits,
    }
}

/// A route offer or installed route, compared by `(seq, hops)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteFreshness {
    pub seq: u32,
    pub hops: u32,
}

/// True iff `candidate` should replace `incumbent`: a strictly higher
/// sequence number, or the same sequence number with fewer hops.
pub fn fresher_route(candidate: RouteFreshness, incumbent: RouteFreshness) -> bool {
    candidate.seq > incumbent.seq
        || (candidate.seq == incumbent.seq && candidate.hops < incumbent.hops)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTableEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    pub lifetime_expiry: f64,
    pub valid: bool,
    pub precursors: BTreeSet<NodeId>,
}

impl RoutingTableEntry {
    pub fn freshness(&self) -> RouteFreshness {
        RouteFreshness {
            seq: self.dest_seq,
            hops: self.hop_count,
        }
    }

    /// Usable for forwarding at `now`.
    pub fn is_active(&self, now: f64) -> bool {
        self.valid && self.lifetime_expiry > now
    }
}

/// Residual energy a node has inferred for one of its neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyEstimate {
    Unknown,
    Known(f64),
}

impl EnergyEstimate {
    pub fn value(self) -> Option<f64> {
        match self {
            EnergyEstimate::Unknown => None,
            EnergyEstimate::Known(e) => Some(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRecord {
    pub neighbor: NodeId,
    pub last_heard: f64,
    /// Absolute time after which the neighbor counts as lost.
    pub expires_at: f64,
    pub est_energy: EnergyEstimate,
    pub critical: bool,
}

impl NeighborRecord {
    pub fn new(neighbor: NodeId, now: f64, lifetime: f64) -> Self {
        NeighborRecord {
            neighbor,
            last_heard: now,
            expires_at: now + lifetime,
            est_energy: EnergyEstimate::Unknown,
            critical: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(seq: u32, hops: u32) -> RouteFreshness {
        RouteFreshness { seq, hops }
    }

    #[test]
    fn higher_sequence_wins() {
        assert!(fresher_route(f(5, 3), f(4, 1)));
    }

    #[test]
    fn equal_sequence_fewer_hops_wins() {
        assert!(fresher_route(f(5, 2), f(5, 3)));
    }

    #[test]
    fn stale_sequence_never_replaces() {
        assert!(!fresher_route(f(4, 1), f(5, 9)));
    }

    #[test]
    fn data_payload_defaults() {
        let sizes = PacketSizes::default();
        assert_eq!(sizes.payload.payload_bits(), 65536);
        let zero_data = PayloadSpec {
            data: 0,
            ..PayloadSpec::default()
        };
        assert_eq!(zero_data.payload_bits(), 7168);
    }

    #[test]
    fn hello_size_is_control_constant() {
        let sizes = PacketSizes::default();
        let hello = Hello {
            seq: 1,
            lifetime: 2.0,
            delta_t: 0.002,
        };
        let m = Message::control(NodeId(0), &sizes, Body::Hello(hello.clone()));
        assert_eq!(message_size_bits(&m, &sizes), 512);
        let ack = Message::control(NodeId(0), &sizes, Body::HelloAck(hello));
        assert_eq!(message_size_bits(&ack, &sizes), message_size_bits(&m, &sizes));
    }

    #[test]
    fn data_size_is_header_plus_payload() {
        let sizes = PacketSizes::default();
        let m = Message::data(
            NodeId(1),
            sizes.data_header_bits,
            sizes.payload.payload_bits(),
            DataPacket {
                originator: NodeId(1),
                destination: NodeId(2),
                packet_id: 0,
                created_at: 0.0,
            },
        );
        assert_eq!(message_size_bits(&m, &sizes), 192 + 65536);
        assert_eq!(m.size_bits(), message_size_bits(&m, &sizes));
    }

    proptest! {
        #[test]
        fn fresher_route_is_irreflexive(seq in any::<u32>(), hops in 0u32..64) {
            prop_assert!(!fresher_route(f(seq, hops), f(seq, hops)));
        }

        #[test]
        fn fresher_route_is_asymmetric(a in 0u32..8, b in 0u32..8, c in 0u32..8, d in 0u32..8) {
            prop_assert!(!(fresher_route(f(a, b), f(c, d)) && fresher_route(f(c, d), f(a, b))));
        }
    }
}
