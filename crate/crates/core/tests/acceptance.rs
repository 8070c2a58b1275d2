//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use manet_sim::energy::{k_factor, packet_airtime, PAYLOAD_RATE_BPS};
use manet_sim::experiment::{build_setup, record_of, run_world};
use manet_sim::kernel::SimRng;
use manet_sim::metrics::csv_row;
use manet_sim::model::{EnergyEstimate, PayloadSpec};
use manet_sim::pcaodv::{
    ack_send_offset, classic_next_hop, decode_neighbor_energy, elect_next_hop, NeighborHealth,
    NextHopCandidate,
};
use manet_sim::scenario::{parse_scenario, EnergyInit, ScenarioConfig};
use manet_sim::{NodeId, Protocol, World};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Energy bookkeeping of every world built by the suite.
static CONSERVATION: Mutex<Vec<String>> = Mutex::new(Vec::new());
static WORLDS_CHECKED: Mutex<usize> = Mutex::new(0);

fn scenario(name: &str) -> ScenarioConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn audit(label: &str, world: &World) {
    for n in world.nodes() {
        let spent = n.initial_energy - n.battery.level;
        let tol = 1e-9 * n.drained.abs().max(spent.abs());
        if (spent - n.drained).abs() > tol {
            CONSERVATION.lock().unwrap().push(format!(
                "{label} node {}: initial-final {spent:e} vs drained {:e}",
                n.id, n.drained
            ));
        }
    }
    *WORLDS_CHECKED.lock().unwrap() += 1;
}

fn simulate(cfg: &ScenarioConfig, protocol: Protocol, seed: u64) -> World {
    let (cfg, world) = run_world(cfg, Some(protocol), Some(seed), false).expect("valid scenario");
    audit(&format!("{}-{protocol}-n{}-s{seed}", cfg.name, cfg.nodes), &world);
    world
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs()
}

fn c1_timing_vector() -> Outcome {
    let mut cfg = scenario("star4.scn");
    cfg.delta_t_s = 2.0;
    cfg.aodv.hello_interval = 100.0;
    cfg.sim_time_s = 40.0;
    cfg.protocol = Protocol::PcAodv;
    let mut setup = build_setup(&cfg, Protocol::PcAodv).map_err(|e| e.to_string())?;
    setup.hello_phase = vec![0.0, 50.0, 50.0, 50.0];
    let mut world = World::new(setup);
    world.enable_trace();
    world.enable_ack_log();
    world.run_until(cfg.sim_time_s);
    audit("timing-vector", &world);

    let (b, c, d) = (NodeId(1), NodeId(2), NodeId(3));
    let log = world.ack_log().unwrap_or_default();
    let offset = |who: NodeId| {
        log.iter()
            .find(|s| s.hello_origin == NodeId(0) && s.responder == who)
            .map(|s| s.my_offset)
    };
    let offsets = [offset(b), offset(d), offset(c)];
    if offsets != [Some(6.0), Some(8.0), Some(12.0)] {
        return Err(format!("offsets (B, D, C) = {offsets:?}"));
    }
    let arrivals: Vec<NodeId> = world
        .trace()
        .unwrap_or_default()
        .iter()
        .filter(|r| r.event == "rx" && r.kind == "HELLO_ACK" && r.node == NodeId(0))
        .filter_map(|r| r.src)
        .collect();
    if arrivals != [b, d, c] {
        return Err(format!("arrival order {arrivals:?}"));
    }
    Ok("offsets (6, 8, 12), arrival B, D, C".into())
}

fn c2_decode_round_trip() -> Outcome {
    let e_max = 15.0;
    let expected = [7.5, 5.0, 3.75, 2.5];
    for delta_t in [2.0, 0.002, 0.37] {
        for (k, want) in [2.0, 3.0, 4.0, 6.0].iter().zip(expected) {
            let got = decode_neighbor_energy(delta_t * k, delta_t, e_max).map_err(|e| e.to_string())?;
            if !rel_close(got, want, 1e-9) {
                return Err(format!("dt={delta_t} k={k}: decoded {got}, want {want}"));
            }
        }
    }
    // a real exchange: node 0's estimate must equal the energy each leaf
    // encoded in its last acknowledgment, with link latency removed
    let cfg = scenario("star4.scn");
    let mut world = World::new(build_setup(&cfg, Protocol::PcAodv).map_err(|e| e.to_string())?);
    world.enable_ack_log();
    world.run_until(cfg.sim_time_s);
    audit("decode", &world);
    let horizon = cfg.sim_time_s - 1.0;
    for id in 1..4u32 {
        let last = world
            .ack_log()
            .unwrap_or_default()
            .iter()
            .rev()
            .find(|s| s.hello_origin == NodeId(0) && s.responder == NodeId(id) && s.fire_time < horizon)
            .ok_or(format!("leaf {id} never acknowledged"))?;
        let encoded = cfg.e_max * cfg.delta_t_s / last.my_offset;
        let est = world.node(NodeId(0)).neighbors.get(&NodeId(id)).map(|r| r.est_energy);
        match est {
            Some(EnergyEstimate::Known(e)) if rel_close(e, encoded, 1e-9) => {}
            other => return Err(format!("node 0 estimate of {id}: {other:?}, encoded {encoded}")),
        }
    }
    Ok("offsets (2, 3, 4, 6)dt -> (7.5, 5, 3.75, 2.5), also after simulated exchange".into())
}

fn c3_hello_budget() -> Outcome {
    let cfg = scenario("star4.scn");
    if !cfg.flows.is_empty() || cfg.random_traffic.is_some() {
        return Err("star scenario carries data traffic".into());
    }
    let mut detail = Vec::new();
    for seed in 1..=5 {
        let a = simulate(&cfg, Protocol::Aodv, seed);
        let p = simulate(&cfg, Protocol::PcAodv, seed);
        let aodv = a.counters().hello_sent as i64;
        let pc = (p.counters().hello_sent + p.counters().ack_sent) as i64;
        if (aodv - 240).abs() > 4 || (pc - 240).abs() > 4 || (aodv - pc).abs() > 8 {
            return Err(format!("seed {seed}: aodv {aodv}, pc-aodv {pc}"));
        }
        detail.push(format!("{aodv}/{pc}"));
    }
    Ok(format!("aodv/pc-aodv totals per seed: {}", detail.join(" ")))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn paired_means<F>(cfg: &ScenarioConfig, nodes: usize, metric: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&World) -> f64 + Sync,
{
    let mut cfg = cfg.clone();
    cfg.nodes = nodes;
    let runs: Vec<(Protocol, f64)> = (1..=10u64)
        .flat_map(|s| [(Protocol::Aodv, s), (Protocol::PcAodv, s)])
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(p, s)| (p, metric(&simulate(&cfg, p, s))))
        .collect();
    let pick = |p: Protocol| runs.iter().filter(|r| r.0 == p).map(|r| r.1).collect();
    (pick(Protocol::Aodv), pick(Protocol::PcAodv))
}

fn c4_overhead_trend() -> Outcome {
    let cfg = scenario("overhead.scn");
    let mut prev = f64::NEG_INFINITY;
    let mut detail = Vec::new();
    for n in [10, 20, 30, 40, 50] {
        let (a, p) = paired_means(&cfg, n, |w| w.report().overhead());
        let (a, p) = (mean(&a), mean(&p));
        detail.push(format!("n{n} {a:.4}/{p:.4}"));
        if p > a {
            return Err(format!("n={n}: pc-aodv {p:.6} > aodv {a:.6}"));
        }
        if a < prev {
            return Err(format!("aodv overhead fell to {a:.6} at n={n} from {prev:.6}"));
        }
        prev = a;
    }
    Ok(format!("mean overhead aodv/pc-aodv: {}", detail.join(", ")))
}

fn c5_pdr_trend() -> Outcome {
    let cfg = scenario("low_energy.scn");
    let low = cfg.low_energy.ok_or("scenario has no low-energy group")?;
    if low.hi >= cfg.energy_threshold || (low.fraction - 0.3).abs() > 1e-12 {
        return Err("low-energy group is not 30% below the threshold".into());
    }
    let (a, p) = paired_means(&cfg, cfg.nodes, |w| w.report().pdr_data());
    if let Some(x) = a.iter().chain(&p).find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(format!("pdr {x} outside [0, 1]"));
    }
    let (a, p) = (mean(&a), mean(&p));
    if p < a {
        return Err(format!("mean pdr pc-aodv {p:.4} < aodv {a:.4}"));
    }
    Ok(format!("mean pdr aodv {a:.4}, pc-aodv {p:.4}"))
}

fn c6_oracle_agreement() -> Outcome {
    let mut cfg = scenario("overhead.scn");
    cfg.energy_init = EnergyInit::Uniform { lo: 15.0, hi: 15.0 };
    cfg.low_energy = None;
    let worlds: Vec<World> = [20usize, 50]
        .iter()
        .flat_map(|&n| (1..=5u64).map(move |s| (n, s)))
        .flat_map(|(n, s)| [(n, s, Protocol::Aodv), (n, s, Protocol::PcAodv)])
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(n, s, p)| {
            let mut c = cfg.clone();
            c.nodes = n;
            simulate(&c, p, s)
        })
        .collect();
    let (mut total, mut exact, mut anomalies) = (0usize, 0usize, 0u64);
    for w in &worlds {
        if w.counters().node_deaths > 0 {
            return Err("a node died in a run meant to be loss-free".into());
        }
        let r = w.report();
        total += r.route_matches.len();
        exact += r.route_matches.iter().filter(|m| m.exact).count();
        anomalies += w.oracle_anomalies();
    }
    if total == 0 {
        return Err("no discoveries completed".into());
    }
    let share = exact as f64 / total as f64;
    if anomalies > 0 {
        return Err(format!("{anomalies} discoveries shorter than the oracle or unreachable"));
    }
    if share < 0.95 {
        return Err(format!("{exact}/{total} exact ({:.2}%)", 100.0 * share));
    }
    Ok(format!("{exact}/{total} exact ({:.2}%), no negative slack", 100.0 * share))
}

fn c7_determinism() -> Outcome {
    let mut cfg = scenario("overhead.scn");
    cfg.nodes = 30;
    let row = |p: Protocol| {
        let (c, w) = run_world(&cfg, Some(p), Some(7), false).expect("valid scenario");
        audit("determinism", &w);
        (csv_row(&record_of(&c, &w)), w.state_hash())
    };
    for p in [Protocol::Aodv, Protocol::PcAodv] {
        let (r1, h1) = row(p);
        let (r2, h2) = row(p);
        if r1 != r2 || h1 != h2 {
            return Err(format!("{p}: rows differ\n  {r1}\n  {r2}"));
        }
    }
    Ok("identical CSV rows and state hashes for both protocols".into())
}

fn c8_energy_conservation() -> Outcome {
    // extra runs with deaths and floored batteries
    let cfg = scenario("low_energy.scn");
    for s in 11..=12 {
        for p in [Protocol::Aodv, Protocol::PcAodv] {
            simulate(&cfg, p, s);
        }
    }
    let bad = CONSERVATION.lock().unwrap();
    let checked = *WORLDS_CHECKED.lock().unwrap();
    if let Some(first) = bad.first() {
        return Err(format!("{} violations, first: {first}", bad.len()));
    }
    Ok(format!("{checked} runs, every node balanced"))
}

fn c9_airtime() -> Outcome {
    let bits = PayloadSpec {
        data: 228,
        udp: 8,
        ip: 20,
        multiplier: 256,
    }
    .payload_bits();
    if bits != 65536 {
        return Err(format!("payload bits {bits}"));
    }
    let got = packet_airtime(0, bits);
    let want = 65536.0 / 54.0e6;
    if !rel_close(got, want, 1e-12) || PAYLOAD_RATE_BPS != 54.0e6 {
        return Err(format!("airtime {got:e}, want {want:e}"));
    }
    Ok(format!("airtime {got:.9e} s"))
}

fn c10_conservatism() -> Outcome {
    let threshold = 3.0;
    let mut rng = SimRng::new(0x5eed);
    for case in 0..1000 {
        let n = 1 + rng.below(8) as usize;
        let candidates: Vec<NextHopCandidate> = (0..n)
            .map(|_| NextHopCandidate {
                neighbor: NodeId(rng.below(20) as u32),
                hops: 1 + rng.below(6) as u32,
                seq: rng.below(4) as u32,
            })
            .collect();
        let energies: Vec<EnergyEstimate> = (0..20)
            .map(|_| {
                if rng.below(3) == 0 {
                    EnergyEstimate::Unknown
                } else {
                    EnergyEstimate::Known(rng.uniform(threshold, 15.0))
                }
            })
            .collect();
        let health = |id: NodeId| NeighborHealth {
            critical: false,
            est_energy: energies[id.index()],
        };
        let pc = elect_next_hop(&candidates, health, threshold).map_err(|e| e.to_string())?;
        let classic = classic_next_hop(&candidates).expect("non-empty");
        if pc.chosen != classic || pc.forced_unsafe {
            return Err(format!("case {case}: {:?} vs {classic:?}", pc.chosen));
        }
    }
    Ok("1000/1000 identical choices".into())
}

fn main() {
    // sanity check that the K-factor used by responders matches the decoder
    debug_assert_eq!(ack_send_offset(k_factor(5.0, 15.0).unwrap(), 2.0), 6.0);

    let criteria: [Criterion; 10] = [
        ("ack timing vector", c1_timing_vector),
        ("energy decode round trip", c2_decode_round_trip),
        ("hello budget on the four-node star", c3_hello_budget),
        ("overhead trend over node counts", c4_overhead_trend),
        ("delivery ratio with low-energy nodes", c5_pdr_trend),
        ("shortest-path oracle agreement", c6_oracle_agreement),
        ("deterministic CSV row", c7_determinism),
        ("energy conservation", c8_energy_conservation),
        ("payload airtime arithmetic", c9_airtime),
        ("next-hop election conservatism", c10_conservatism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {} ({name}): {msg} [{secs:.2} s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {msg} [{secs:.2} s]", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
