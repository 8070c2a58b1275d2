//! Building worlds from scenarios, single runs, paired comparisons and
//! node-count sweeps.
//!
//! Every random input (placement, energies, hello phases, generated flows)
//! comes from its own labelled stream of the master seed, so switching the
//! protocol never changes the topology or the traffic.

use rayon::prelude::*;

use crate::kernel::{place_nodes, SimRng, Topology, TraceRecord};
use crate::metrics::{sort_records, RunRecord, CSV_COLUMNS};
use crate::model::{NodeId, Protocol};
use crate::scenario::{EnergyInit, Placement, ScenarioConfig, ScenarioError};
use crate::world::{BatteryParams, Flow, World, WorldSetup};

/// Static inputs shared by both protocol arms of one `(scenario, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub topology: Topology,
    pub initial_energy: Vec<f64>,
    pub hello_phase: Vec<f64>,
    pub flows: Vec<Flow>,
}

pub fn build_layout(cfg: &ScenarioConfig) -> Result<Layout, ScenarioError> {
    cfg.validate()?;
    let n = cfg.nodes;
    let seed = cfg.seed;
    let positions = match &cfg.placement {
        Placement::Random => place_nodes(n, cfg.area_m, crate::kernel::derive_seed(seed, "placement")),
        Placement::Explicit(p) => p.clone(),
    };
    let topology = Topology::new(positions, cfg.area_m, cfg.comm_range_m);

    let mut initial_energy = match &cfg.energy_init {
        EnergyInit::Uniform { lo, hi } => {
            let mut rng = SimRng::stream(seed, "energy");
            (0..n).map(|_| rng.uniform(*lo, *hi)).collect()
        }
        EnergyInit::Explicit(v) => v.clone(),
    };
    if let Some(low) = cfg.low_energy {
        let mut rng = SimRng::stream(seed, "low-energy");
        let mut ids: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut ids);
        let k = (low.fraction * n as f64).round() as usize;
        for &i in &ids[..k.min(n)] {
            initial_energy[i] = rng.uniform(low.lo, low.hi);
        }
    }

    let mut phase_rng = SimRng::stream(seed, "hello-phase");
    let hi = cfg.aodv.hello_interval;
    let hello_phase = (0..n).map(|_| phase_rng.uniform(0.0, hi)).collect();

    let mut flows = cfg.flows.clone();
    if let Some(t) = cfg.random_traffic {
        let mut rng = SimRng::stream(seed, "flows");
        for _ in 0..t.flow_count(n) {
            let src = rng.below(n as u64);
            let mut dst = rng.below(n as u64 - 1);
            if dst >= src {
                dst += 1;
            }
            flows.push(Flow {
                src: NodeId(src as u32),
                dst: NodeId(dst as u32),
                start_s: rng.uniform(t.start_lo, t.start_hi),
                interval_s: t.interval_s,
                count: t.count,
                payload: cfg.sizes.payload,
            });
        }
    }
    Ok(Layout {
        topology,
        initial_energy,
        hello_phase,
        flows,
    })
}

pub fn build_setup(cfg: &ScenarioConfig, protocol: Protocol) -> Result<WorldSetup, ScenarioError> {
    let layout = build_layout(cfg)?;
    Ok(WorldSetup {
        protocol,
        aodv: cfg.aodv,
        pc: cfg.pc_config(),
        sizes: cfg.sizes,
        cost: cfg.cost,
        battery: BatteryParams {
            e_max: cfg.e_max,
            voltage: cfg.voltage_v,
            current: cfg.current_a,
            death_threshold: cfg.death_threshold,
        },
        buffer_capacity: cfg.buffer_capacity,
        topology: layout.topology,
        initial_energy: layout.initial_energy,
        flows: layout.flows,
        hello_phase: layout.hello_phase,
    })
}

pub fn run_id(cfg: &ScenarioConfig, protocol: Protocol) -> String {
    format!("{}-{}-n{}-s{}", cfg.name, protocol, cfg.nodes, cfg.seed)
}

/// Applies the overrides, builds the world and runs it to the horizon.
pub fn run_world(
    cfg: &ScenarioConfig,
    protocol: Option<Protocol>,
    seed: Option<u64>,
    trace: bool,
) -> Result<(ScenarioConfig, World), ScenarioError> {
    let mut cfg = cfg.clone();
    if let Some(p) = protocol {
        cfg.protocol = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut world = World::new(build_setup(&cfg, cfg.protocol)?);
    if trace {
        world.enable_trace();
    }
    world.run_until(cfg.sim_time_s);
    Ok((cfg, world))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub trace: Option<Vec<TraceRecord>>,
}

pub fn run(
    cfg: &ScenarioConfig,
    protocol: Option<Protocol>,
    seed: Option<u64>,
    trace: bool,
) -> Result<RunOutput, ScenarioError> {
    let (cfg, world) = run_world(cfg, protocol, seed, trace)?;
    Ok(RunOutput {
        record: record_of(&cfg, &world),
        trace: world.trace().map(|t| t.to_vec()),
    })
}

pub fn record_of(cfg: &ScenarioConfig, world: &World) -> RunRecord {
    RunRecord {
        run_id: run_id(cfg, world.protocol()),
        protocol: world.protocol(),
        nodes: cfg.nodes,
        seed: cfg.seed,
        sim_time_s: cfg.sim_time_s,
        report: world.report(),
    }
}

/// Per-column means of the PC-AODV rows minus those of the AODV rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub nodes: usize,
    pub sim_time_s: f64,
    /// One value per numeric CSV column, from `hello_sent` onward.
    pub values: Vec<f64>,
}

impl DeltaRow {
    pub fn column(&self, name: &str) -> Option<f64> {
        CSV_COLUMNS[5..]
            .iter()
            .position(|c| *c == name)
            .map(|i| self.values[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("delta,pc-aodv-minus-aodv,{},*,{:.6}", self.nodes, self.sim_time_s);
        for v in &self.values {
            s.push_str(&format!(",{v:.6}"));
        }
        s
    }
}

pub fn numeric_columns(r: &RunRecord) -> Vec<f64> {
    let c = &r.report.counters;
    vec![
        c.hello_sent as f64,
        c.hello_recv as f64,
        c.ack_sent as f64,
        c.ack_recv as f64,
        c.rreq_sent as f64,
        c.rrep_sent as f64,
        c.rerr_sent as f64,
        c.data_sent as f64,
        c.data_delivered as f64,
        r.report.overhead(),
        r.report.pdr_rrep(),
        r.report.pdr_data(),
        r.report.total_energy_drained,
        c.forced_unsafe as f64,
    ]
}

pub fn delta_row(records: &[RunRecord], nodes: usize, sim_time_s: f64) -> DeltaRow {
    let mean = |p: Protocol| {
        let rows: Vec<Vec<f64>> = records
            .iter()
            .filter(|r| r.protocol == p)
            .map(numeric_columns)
            .collect();
        let width = CSV_COLUMNS.len() - 5;
        let mut m = vec![0.0; width];
        for row in &rows {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        if !rows.is_empty() {
            for a in &mut m {
                *a /= rows.len() as f64;
            }
        }
        m
    };
    let (a, p) = (mean(Protocol::Aodv), mean(Protocol::PcAodv));
    DeltaRow {
        nodes,
        sim_time_s,
        values: p.iter().zip(&a).map(|(p, a)| p - a).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub records: Vec<RunRecord>,
    pub delta: DeltaRow,
}

impl Comparison {
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        crate::metrics::emit_csv(out, &self.records)?;
        writeln!(out, "{}", self.delta.to_csv())
    }
}

/// Runs both protocols for every seed on identical layouts.
pub fn compare(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<Comparison, ScenarioError> {
    if seeds.is_empty() {
        return Err(ScenarioError::Range("compare needs at least one seed".into()));
    }
    let records = run_grid(cfg, &[cfg.nodes], seeds)?;
    let delta = delta_row(&records, cfg.nodes, cfg.sim_time_s);
    Ok(Comparison { records, delta })
}

/// Both protocols for every node count and seed; rows sorted.
pub fn sweep(cfg: &ScenarioConfig, nodes: &[usize], seeds: &[u64]) -> Result<Vec<RunRecord>, ScenarioError> {
    let explicit = matches!(cfg.placement, Placement::Explicit(_)) || matches!(cfg.energy_init, EnergyInit::Explicit(_));
    if explicit && nodes.iter().any(|&n| n != cfg.nodes) {
        return Err(ScenarioError::Range(
            "a node sweep needs random placement and energies".into(),
        ));
    }
    run_grid(cfg, nodes, seeds)
}

fn run_grid(cfg: &ScenarioConfig, nodes: &[usize], seeds: &[u64]) -> Result<Vec<RunRecord>, ScenarioError> {
    let mut jobs = Vec::new();
    for &n in nodes {
        for &s in seeds {
            for p in [Protocol::Aodv, Protocol::PcAodv] {
                let mut c = cfg.clone();
                c.nodes = n;
                c.seed = s;
                c.protocol = p;
                c.validate()?;
                jobs.push(c);
            }
        }
    }
    let mut records = jobs
        .par_iter()
        .map(|c| run(c, None, None, false).map(|o| o.record))
        .collect::<Result<Vec<_>, _>>()?;
    sort_records(&mut records);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    fn cfg() -> ScenarioConfig {
        parse_scenario(
            "name = t\nnodes = 12\nsim_time_s = 20\nenergy_lo = 4\nenergy_hi = 15\n\
             traffic_flows_per_node = 0.25\ntraffic_start = 2 10\ntraffic_interval_s = 0.5\ntraffic_count = 6\n",
        )
        .unwrap()
    }

    #[test]
    fn protocol_does_not_change_layout() {
        let c = cfg();
        let a = build_setup(&c, Protocol::Aodv).unwrap();
        let p = build_setup(&c, Protocol::PcAodv).unwrap();
        assert_eq!(a.topology, p.topology);
        assert_eq!(a.flows, p.flows);
        assert_eq!(a.initial_energy, p.initial_energy);
        assert_eq!(a.hello_phase, p.hello_phase);
        assert_eq!(a.flows.len(), 3);
    }

    #[test]
    fn low_energy_group_size() {
        let mut c = cfg();
        c.nodes = 20;
        c.low_energy = Some(crate::scenario::LowEnergy {
            fraction: 0.3,
            lo: 0.5,
            hi: 1.0,
        });
        let l = build_layout(&c).unwrap();
        assert_eq!(l.initial_energy.iter().filter(|&&e| e <= 1.0).count(), 6);
    }

    #[test]
    fn compare_emits_pair_and_delta() {
        let cmp = compare(&cfg(), &[3]).unwrap();
        assert_eq!(cmp.records.len(), 2);
        let mut out = Vec::new();
        cmp.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("delta,"));
    }
}
