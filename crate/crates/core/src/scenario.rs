//! Scenario files: flat `key = value` lines with `#` comments.
//!
//! Repeatable keys: `flow = src dst start interval count [data udp ip mult]`,
//! `position = id x y` and `energy = id value`. Any `position` line switches
//! placement to explicit, any `energy` line switches the initial energies to
//! explicit. Unknown keys are rejected.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::aodv::AodvConfig;
use crate::energy::{CostModel, DEFAULT_E_MAX};
use crate::kernel::Position;
use crate::model::{NodeId, PacketSizes, PayloadSpec, Protocol};
use crate::pcaodv::PcConfig;
use crate::world::Flow;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Range(String),
}

fn range<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Range(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    Random,
    Explicit(Vec<Position>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnergyInit {
    Uniform { lo: f64, hi: f64 },
    Explicit(Vec<f64>),
}

/// A fraction of nodes (picked at random) starts with a battery drawn from
/// `[lo, hi]` instead of the main distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowEnergy {
    pub fraction: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Randomly generated flows between uniformly chosen endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTraffic {
    /// Number of flows is `round(flows_per_node * nodes)`, at least one.
    pub flows_per_node: f64,
    pub start_lo: f64,
    pub start_hi: f64,
    pub interval_s: f64,
    pub count: u32,
}

impl RandomTraffic {
    pub fn flow_count(&self, nodes: usize) -> usize {
        ((self.flows_per_node * nodes as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub sim_time_s: f64,
    pub area_m: (f64, f64),
    pub nodes: usize,
    pub placement: Placement,
    pub comm_range_m: f64,
    pub protocol: Protocol,
    pub aodv: AodvConfig,
    pub delta_t_s: f64,
    pub e_max: f64,
    pub energy_threshold: f64,
    pub death_threshold: f64,
    /// Defaults to the offset of the weakest acceptable battery.
    pub t_ack_s: Option<f64>,
    /// Defaults to the acknowledgment window.
    pub rreq_hold_s: Option<f64>,
    pub energy_init: EnergyInit,
    pub low_energy: Option<LowEnergy>,
    pub voltage_v: f64,
    pub current_a: f64,
    pub cost: CostModel,
    pub sizes: PacketSizes,
    pub buffer_capacity: usize,
    pub flows: Vec<Flow>,
    pub random_traffic: Option<RandomTraffic>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            seed: 1,
            sim_time_s: 1800.0,
            area_m: (1000.0, 1000.0),
            nodes: 4,
            placement: Placement::Random,
            comm_range_m: 250.0,
            protocol: Protocol::Aodv,
            aodv: AodvConfig::default(),
            delta_t_s: 0.002,
            e_max: DEFAULT_E_MAX,
            energy_threshold: 1.5,
            death_threshold: 0.15,
            t_ack_s: None,
            rreq_hold_s: None,
            energy_init: EnergyInit::Uniform {
                lo: DEFAULT_E_MAX,
                hi: DEFAULT_E_MAX,
            },
            low_energy: None,
            voltage_v: 1.0,
            current_a: 1.0,
            cost: CostModel::Airtime,
            sizes: PacketSizes::default(),
            buffer_capacity: 64,
            flows: Vec::new(),
            random_traffic: None,
        }
    }
}

impl ScenarioConfig {
    pub fn pc_config(&self) -> PcConfig {
        let mut pc = PcConfig::new(self.delta_t_s, self.e_max, self.energy_threshold);
        if let Some(t) = self.t_ack_s {
            pc.t_ack = t;
            pc.rreq_hold = t;
        }
        if let Some(h) = self.rreq_hold_s {
            pc.rreq_hold = h;
        }
        pc
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes == 0 {
            return range("nodes must be at least 1");
        }
        let positive = [
            ("sim_time_s", self.sim_time_s),
            ("area width", self.area_m.0),
            ("area height", self.area_m.1),
            ("comm_range_m", self.comm_range_m),
            ("e_max", self.e_max),
            ("voltage_v", self.voltage_v),
            ("current_a", self.current_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return range(format!("{name} must be positive"));
            }
        }
        if let Err(e) = self.aodv.validate() {
            return range(e.to_string());
        }
        if !(self.death_threshold >= 0.0 && self.death_threshold < self.energy_threshold) {
            return range("death_threshold must be in [0, energy_threshold)");
        }
        if let Err(e) = self.pc_config().validate() {
            return range(e.to_string());
        }
        if self.pc_config().t_ack >= self.aodv.hello_interval {
            return range("t_ack must be shorter than the hello interval");
        }
        if let CostModel::Link {
            tx_power_w,
            rate_bps,
            p_correct,
        } = self.cost
        {
            if !(tx_power_w >= 0.0 && rate_bps > 0.0 && p_correct > 0.0 && p_correct <= 1.0) {
                return range("link model needs tx_power_w >= 0, data_rate_bps > 0, p_correct in (0, 1]");
            }
        }
        if let Placement::Explicit(p) = &self.placement {
            if p.len() != self.nodes {
                return range(format!("{} positions for {} nodes", p.len(), self.nodes));
            }
            for (i, q) in p.iter().enumerate() {
                if !(q.x.is_finite() && q.y.is_finite()) {
                    return range(format!("position of node {i} is not finite"));
                }
            }
        }
        match &self.energy_init {
            EnergyInit::Uniform { lo, hi } => {
                if !(0.0 <= *lo && lo <= hi && *hi <= self.e_max) {
                    return range("energy range must satisfy 0 <= lo <= hi <= e_max");
                }
            }
            EnergyInit::Explicit(v) => {
                if v.len() != self.nodes {
                    return range(format!("{} energies for {} nodes", v.len(), self.nodes));
                }
                if v.iter().any(|e| !(0.0..=self.e_max).contains(e)) {
                    return range("explicit energies must lie in [0, e_max]");
                }
            }
        }
        if let Some(l) = self.low_energy {
            if !(0.0..=1.0).contains(&l.fraction) || !(0.0 <= l.lo && l.lo <= l.hi && l.hi <= self.e_max) {
                return range("low energy group needs fraction in [0, 1] and 0 <= lo <= hi <= e_max");
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            let n = self.nodes as u32;
            if f.src.0 >= n || f.dst.0 >= n {
                return range(format!("flow {i} references a node outside 0..{n}"));
            }
            if f.src == f.dst {
                return range(format!("flow {i} has identical endpoints"));
            }
            if !(f.start_s >= 0.0 && f.interval_s > 0.0) {
                return range(format!("flow {i} needs start >= 0 and interval > 0"));
            }
        }
        if let Some(t) = self.random_traffic {
            if self.nodes < 2 {
                return range("random traffic needs at least two nodes");
            }
            if !(t.flows_per_node >= 0.0 && t.interval_s > 0.0 && 0.0 <= t.start_lo && t.start_lo <= t.start_hi) {
                return range("random traffic needs interval > 0 and 0 <= start_lo <= start_hi");
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.aodv;
        let p = &self.sizes.payload;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("seed", self.seed.to_string());
        kv("sim_time_s", self.sim_time_s.to_string());
        kv("area_m", format!("{} {}", self.area_m.0, self.area_m.1));
        kv("nodes", self.nodes.to_string());
        kv("comm_range_m", self.comm_range_m.to_string());
        kv("protocol", self.protocol.to_string());
        kv("hi_s", a.hello_interval.to_string());
        kv("art_s", a.active_route_timeout.to_string());
        kv("allowed_hello_loss", a.allowed_hello_loss.to_string());
        kv("ttl_start", a.ttl_start.to_string());
        kv("ttl_increment", a.ttl_increment.to_string());
        kv("ttl_threshold", a.ttl_threshold.to_string());
        kv("net_diameter", a.net_diameter.to_string());
        kv("rreq_retries", a.rreq_retries.to_string());
        kv("node_traversal_s", a.node_traversal_time.to_string());
        kv("timeout_buffer", a.timeout_buffer.to_string());
        kv("delta_t_s", self.delta_t_s.to_string());
        kv("e_max", self.e_max.to_string());
        kv("energy_threshold", self.energy_threshold.to_string());
        kv("death_threshold", self.death_threshold.to_string());
        if let Some(t) = self.t_ack_s {
            kv("t_ack_s", t.to_string());
        }
        if let Some(h) = self.rreq_hold_s {
            kv("rreq_hold_s", h.to_string());
        }
        kv("voltage_v", self.voltage_v.to_string());
        kv("current_a", self.current_a.to_string());
        match self.cost {
            CostModel::Airtime => kv("energy_model", "airtime".into()),
            CostModel::Link {
                tx_power_w,
                rate_bps,
                p_correct,
            } => {
                kv("energy_model", "link".into());
                kv("tx_power_w", tx_power_w.to_string());
                kv("data_rate_bps", rate_bps.to_string());
                kv("p_correct", p_correct.to_string());
            }
        }
        kv("control_header_bits", self.sizes.control_header_bits.to_string());
        kv("data_header_bits", self.sizes.data_header_bits.to_string());
        kv("data_bits", p.data.to_string());
        kv("udp_bits", p.udp.to_string());
        kv("ip_bits", p.ip.to_string());
        kv("payload_multiplier", p.multiplier.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        match &self.energy_init {
            EnergyInit::Uniform { lo, hi } => {
                kv("energy_lo", lo.to_string());
                kv("energy_hi", hi.to_string());
            }
            EnergyInit::Explicit(v) => {
                for (i, e) in v.iter().enumerate() {
                    kv("energy", format!("{i} {e}"));
                }
            }
        }
        if let Some(l) = self.low_energy {
            kv("low_energy_fraction", l.fraction.to_string());
            kv("low_energy_lo", l.lo.to_string());
            kv("low_energy_hi", l.hi.to_string());
        }
        if let Placement::Explicit(ps) = &self.placement {
            for (i, q) in ps.iter().enumerate() {
                kv("position", format!("{i} {} {}", q.x, q.y));
            }
        }
        for f in &self.flows {
            let fp = &f.payload;
            kv(
                "flow",
                format!(
                    "{} {} {} {} {} {} {} {} {}",
                    f.src, f.dst, f.start_s, f.interval_s, f.count, fp.data, fp.udp, fp.ip, fp.multiplier
                ),
            );
        }
        if let Some(t) = self.random_traffic {
            kv("traffic_flows_per_node", t.flows_per_node.to_string());
            kv("traffic_start", format!("{} {}", t.start_lo, t.start_hi));
            kv("traffic_interval_s", t.interval_s.to_string());
            kv("traffic_count", t.count.to_string());
        }
        s
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for ScenarioConfig {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_scenario(s)
    }
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
}

impl Line<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ScenarioError> {
        Err(ScenarioError::Parse {
            line: self.no,
            msg: msg.into(),
        })
    }

    fn fields(&self, n: usize) -> Result<Vec<&str>, ScenarioError> {
        let f: Vec<&str> = self.value.split_whitespace().collect();
        if f.len() != n {
            return self.err(format!("`{}` expects {n} values, got {}", self.key, f.len()));
        }
        Ok(f)
    }

    fn num<T: FromStr>(&self, text: &str) -> Result<T, ScenarioError> {
        text.parse()
            .or_else(|_| self.err(format!("`{}`: cannot parse `{text}`", self.key)))
    }

    fn one<T: FromStr>(&self) -> Result<T, ScenarioError> {
        let f = self.fields(1)?;
        self.num(f[0])
    }
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::default();
    let mut positions: Vec<(usize, Position, usize)> = Vec::new();
    let mut energies: Vec<(usize, f64, usize)> = Vec::new();
    let mut energy_lo = None;
    let mut energy_hi = None;
    let mut low = (None, None, None);
    let mut traffic = (None, None, None, None);
    let mut link = (None, None, None);
    let mut model = "airtime".to_string();
    let mut explicit_placement = false;

    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ScenarioError::Parse {
                line: no,
                msg: format!("expected `key = value`, got `{content}`"),
            });
        };
        let l = Line {
            no,
            key: key.trim(),
            value: value.trim(),
        };
        let a = &mut cfg.aodv;
        match l.key {
            "name" => {
                if l.value.is_empty() || l.value.contains(char::is_whitespace) {
                    return l.err("name must be a single non-empty word");
                }
                cfg.name = l.value.to_string();
            }
            "seed" => cfg.seed = l.one()?,
            "sim_time_s" => cfg.sim_time_s = l.one()?,
            "area_m" => {
                let f = l.fields(2)?;
                cfg.area_m = (l.num(f[0])?, l.num(f[1])?);
            }
            "nodes" => cfg.nodes = l.one()?,
            "placement" => match l.value {
                "random" => explicit_placement = false,
                "explicit" => explicit_placement = true,
                _ => return l.err("placement must be `random` or `explicit`"),
            },
            "comm_range_m" => cfg.comm_range_m = l.one()?,
            "protocol" => cfg.protocol = l.value.parse().or_else(|e: String| l.err(e))?,
            "hi_s" => a.hello_interval = l.one()?,
            "art_s" => a.active_route_timeout = l.one()?,
            "allowed_hello_loss" => a.allowed_hello_loss = l.one()?,
            "ttl_start" => a.ttl_start = l.one()?,
            "ttl_increment" => a.ttl_increment = l.one()?,
            "ttl_threshold" => a.ttl_threshold = l.one()?,
            "net_diameter" => a.net_diameter = l.one()?,
            "rreq_retries" => a.rreq_retries = l.one()?,
            "node_traversal_s" => a.node_traversal_time = l.one()?,
            "timeout_buffer" => a.timeout_buffer = l.one()?,
            "delta_t_s" => cfg.delta_t_s = l.one()?,
            "e_max" => cfg.e_max = l.one()?,
            "energy_threshold" => cfg.energy_threshold = l.one()?,
            "death_threshold" => cfg.death_threshold = l.one()?,
            "t_ack_s" => cfg.t_ack_s = Some(l.one()?),
            "rreq_hold_s" => cfg.rreq_hold_s = Some(l.one()?),
            "voltage_v" => cfg.voltage_v = l.one()?,
            "current_a" => cfg.current_a = l.one()?,
            "energy_model" => match l.value {
                "airtime" | "link" => model = l.value.to_string(),
                _ => return l.err("energy_model must be `airtime` or `link`"),
            },
            "tx_power_w" => link.0 = Some(l.one()?),
            "data_rate_bps" => link.1 = Some(l.one()?),
            "p_correct" => link.2 = Some(l.one()?),
            "control_header_bits" => cfg.sizes.control_header_bits = l.one()?,
            "data_header_bits" => cfg.sizes.data_header_bits = l.one()?,
            "data_bits" => cfg.sizes.payload.data = l.one()?,
            "udp_bits" => cfg.sizes.payload.udp = l.one()?,
            "ip_bits" => cfg.sizes.payload.ip = l.one()?,
            "payload_multiplier" => cfg.sizes.payload.multiplier = l.one()?,
            "buffer_capacity" => cfg.buffer_capacity = l.one()?,
            "energy_lo" => energy_lo = Some(l.one()?),
            "energy_hi" => energy_hi = Some(l.one()?),
            "energy" => {
                let f = l.fields(2)?;
                energies.push((l.num(f[0])?, l.num(f[1])?, no));
            }
            "position" => {
                let f = l.fields(3)?;
                let p = Position {
                    x: l.num(f[1])?,
                    y: l.num(f[2])?,
                };
                positions.push((l.num(f[0])?, p, no));
            }
            "low_energy_fraction" => low.0 = Some(l.one()?),
            "low_energy_lo" => low.1 = Some(l.one()?),
            "low_energy_hi" => low.2 = Some(l.one()?),
            "flow" => cfg.flows.push(parse_flow(&l)?),
            "traffic_flows_per_node" => traffic.0 = Some(l.one()?),
            "traffic_start" => {
                let f = l.fields(2)?;
                traffic.1 = Some((l.num(f[0])?, l.num(f[1])?));
            }
            "traffic_interval_s" => traffic.2 = Some(l.one()?),
            "traffic_count" => traffic.3 = Some(l.one()?),
            other => return l.err(format!("unknown key `{other}`")),
        }
    }

    if !positions.is_empty() || explicit_placement {
        cfg.placement = Placement::Explicit(collect_indexed(positions, cfg.nodes, "position")?);
    }
    if !energies.is_empty() {
        if energy_lo.is_some() || energy_hi.is_some() {
            return range("`energy` lines cannot be combined with energy_lo/energy_hi");
        }
        cfg.energy_init = EnergyInit::Explicit(collect_indexed(energies, cfg.nodes, "energy")?);
    } else {
        let lo = energy_lo.unwrap_or(cfg.e_max);
        cfg.energy_init = EnergyInit::Uniform {
            lo,
            hi: energy_hi.unwrap_or(cfg.e_max.max(lo)),
        };
    }
    cfg.low_energy = match low {
        (None, None, None) => None,
        (Some(fraction), Some(lo), Some(hi)) => Some(LowEnergy { fraction, lo, hi }),
        _ => return range("low_energy_fraction, low_energy_lo and low_energy_hi go together"),
    };
    cfg.random_traffic = match traffic {
        (None, None, None, None) => None,
        (Some(flows_per_node), Some((start_lo, start_hi)), Some(interval_s), Some(count)) => Some(RandomTraffic {
            flows_per_node,
            start_lo,
            start_hi,
            interval_s,
            count,
        }),
        _ => return range("traffic_flows_per_node, traffic_start, traffic_interval_s and traffic_count go together"),
    };
    cfg.cost = match (model.as_str(), link) {
        ("airtime", (None, None, None)) => CostModel::Airtime,
        ("airtime", _) => return range("tx_power_w, data_rate_bps and p_correct need energy_model = link"),
        (_, (Some(tx_power_w), Some(rate_bps), Some(p_correct))) => CostModel::Link {
            tx_power_w,
            rate_bps,
            p_correct,
        },
        _ => return range("energy_model = link needs tx_power_w, data_rate_bps and p_correct"),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_flow(l: &Line<'_>) -> Result<Flow, ScenarioError> {
    let f: Vec<&str> = l.value.split_whitespace().collect();
    if f.len() != 5 && f.len() != 9 {
        return l.err("flow expects `src dst start interval count [data udp ip multiplier]`");
    }
    let payload = if f.len() == 9 {
        PayloadSpec {
            data: l.num(f[5])?,
            udp: l.num(f[6])?,
            ip: l.num(f[7])?,
            multiplier: l.num(f[8])?,
        }
    } else {
        PayloadSpec::default()
    };
    Ok(Flow {
        src: NodeId(l.num(f[0])?),
        dst: NodeId(l.num(f[1])?),
        start_s: l.num(f[2])?,
        interval_s: l.num(f[3])?,
        count: l.num(f[4])?,
        payload,
    })
}

fn collect_indexed<T: Clone>(
    items: Vec<(usize, T, usize)>,
    n: usize,
    what: &str,
) -> Result<Vec<T>, ScenarioError> {
    let mut slots: Vec<Option<T>> = vec![None; n];
    for (id, v, line) in items {
        if id >= n {
            return Err(ScenarioError::Parse {
                line,
                msg: format!("{what} for node {id}, but nodes = {n}"),
            });
        }
        if slots[id].replace(v).is_some() {
            return Err(ScenarioError::Parse {
                line,
                msg: format!("duplicate {what} for node {id}"),
            });
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| ScenarioError::Range(format!("missing {what} for node {i}"))))
        .collect()
}
