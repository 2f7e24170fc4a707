//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed.
//! Exits nonzero if any criterion fails.

mod oracle;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qvnet_core::behavior_opt::{build_lp, qvnet_capacities, solve_behavior, verify_allocation};
use qvnet_core::keymat::{reconstruct, tick_generate, vault_snapshot, xor_relay, KeyVault, RelayMode};
use qvnet_core::kms::{KeyRequest, KmsState};
use qvnet_core::qvnetctl::{assemble_qvnet, AccessRule, Behavior, PairScope, QVNet};
use qvnet_core::rate::{frac, int, Rate};
use qvnet_core::sim::{self, emit_metrics, Format, MetricsReport, Scenario};
use qvnet_core::topology::{build_graph, enumerate_paths, GraphSpec, LinkSpec, NetworkGraph, NodeId, NodePair};
use qvnet_core::updater::{observe, rebalance, Bounds, DemandStats, UpdateRule};
use qvnet_core::virtlink::{split_trunk, QuotaMap, SubConnectionId, TrunkKind, TrunkLink};

use oracle::{cut_oracle, max_flow, OracleGraph};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Result<Scenario, String> {
    let path = scenario_dir().join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    sim::load_scenario(&text).map_err(|e| format!("{name}: {e}"))
}

fn run(name: &str) -> Result<MetricsReport, String> {
    sim::run(&load(name)?).map_err(|e| format!("{name}: {e}"))
}

fn graph(nodes: &[&str], links: &[(&str, &str, Rate)]) -> NetworkGraph {
    build_graph(&GraphSpec {
        nodes: nodes.iter().map(|s| s.to_string()).collect(),
        links: links.iter().map(|(a, b, r)| LinkSpec::new(a, b, *r)).collect(),
    })
    .expect("valid test graph")
}

/// Every link carries one sub-connection `net` at full quota, open to all.
fn open_qvnet(g: &NetworkGraph, behavior: Behavior) -> (Vec<TrunkLink>, QVNet) {
    let trunks: Vec<TrunkLink> = g
        .links()
        .map(|l| TrunkLink::new(l.pair.clone(), TrunkKind::Physical, l.rate).with_quota("net", int(1)))
        .collect();
    let mut q = assemble_qvnet(&trunks, &"net".into()).qvnet;
    q.behavior = behavior;
    q.access = vec![AccessRule::new("*", PairScope::Any, u64::MAX)];
    (trunks, q)
}

fn solve(q: &QVNet) -> Result<BigRational, String> {
    let lp = build_lp(q, &q.behavior, &qvnet_capacities(q), 8).map_err(|e| e.to_string())?;
    let alloc = solve_behavior(&lp).map_err(|e| e.to_string())?;
    verify_allocation(&alloc, &lp).map_err(|v| format!("allocation violates constraints: {v:?}"))?;
    Ok(alloc.objective)
}

fn q(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn criterion_1() -> Outcome {
    let trunk = TrunkLink::new(("A", "B").into(), TrunkKind::Physical, int(8))
        .with_quota("red", frac(1, 2))
        .with_quota("blue", frac(1, 4))
        .with_quota("black", frac(1, 8))
        .with_quota("violet", frac(1, 8));
    let split = split_trunk(&trunk, &trunk.quotas).map_err(|e| e.to_string())?;
    let rates: BTreeMap<&str, Rate> = split.qvlinks.iter().map(|l| (l.subconn.as_str(), l.rate)).collect();
    let expected = BTreeMap::from([("black", int(1)), ("blue", int(2)), ("red", int(4)), ("violet", int(1))]);
    ensure(rates == expected, || format!("split gave {rates:?}"))?;

    let report = run("four_way_trunk.json")?;
    let mut windows = 0;
    for (id, r) in &expected {
        for w in report.windows_for(id) {
            let target = *r * int((w.end - w.start) as i64);
            let diff = (Rate::from_integer(w.granted as i64) - target).abs();
            ensure(diff <= int(1), || format!("{id} window {}..{} granted {}", w.start, w.end, w.granted))?;
            windows += 1;
        }
    }
    ensure(windows == 8, || format!("expected 8 windows, saw {windows}"))?;
    Ok("rates {4,2,1,1} exact; 8 windows within 1 block".into())
}

fn criterion_2() -> Outcome {
    let names: Vec<String> = (0..7).map(|i| format!("N{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let links: Vec<(&str, &str, Rate)> = refs.windows(2).map(|w| (w[0], w[1], int(1))).collect();
    let g = graph(&refs, &links);
    let mut checked = 0;
    for i in 0..7 {
        for j in 0..7 {
            if i == j {
                continue;
            }
            let (trunks, qvnet) = open_qvnet(&g, Behavior::Balanced);
            let mut kms = KmsState::new(g.clone(), trunks, vec![qvnet]);
            kms.generate(0, 1).map_err(|e| e.to_string())?;
            let grant = kms
                .request_key(&KeyRequest::new("net", "app", refs[i], refs[j], 1, 0))
                .map_err(|e| e.to_string())?;
            let hops = i.abs_diff(j) as u64;
            ensure(grant.granted == 1, || format!("{}->{}: no key granted", refs[i], refs[j]))?;
            let entry = kms.ledger().last().expect("ledger entry");
            ensure(entry.phys_total() == hops, || {
                format!("{}->{}: consumed {} blocks for {hops} hops", refs[i], refs[j], entry.phys_total())
            })?;
            let consumed: u64 = vault_snapshot(kms.vault()).values().map(|c| c.consumed).sum();
            ensure(consumed == hops, || format!("{}->{}: vault shows {consumed} consumed", refs[i], refs[j]))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} ordered pairs, consumption equals path length"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let nodes = ["A", "B", "C", "D", "E", "F", "G"];
    let mut links = Vec::new();
    for w in nodes.windows(2) {
        links.push((w[0], w[1], int(rng.gen_range(40..60))));
    }
    for _ in 0..6 {
        let a = *nodes.choose(&mut rng).unwrap();
        let b = *nodes.choose(&mut rng).unwrap();
        if a != b && !links.iter().any(|(x, y, _)| NodePair::new(*x, *y) == NodePair::new(a, b)) {
            links.push((a, b, int(rng.gen_range(40..60))));
        }
    }
    let g = graph(&nodes, &links);
    let mut vault = KeyVault::new(&g);
    for t in 0..600 {
        tick_generate(&mut vault, &g, t, 99).map_err(|e| e.to_string())?;
    }
    let mut paths = Vec::new();
    for a in nodes {
        for b in nodes {
            if a != b {
                paths.extend(enumerate_paths(&g, &a.into(), &b.into(), 6).map_err(|e| e.to_string())?);
            }
        }
    }

    let mut seen: HashSet<u64> = HashSet::new();
    for n in 0..10_000 {
        let path = paths.choose(&mut rng).unwrap();
        let hops = path.hops();
        let mode = if rng.gen_bool(0.5) { RelayMode::HopByHop } else { RelayMode::Centralized };
        let source_key = vault.usable_blocks(&hops[0]).next().ok_or("vault ran dry")?.bytes;
        let dest_key = vault.usable_blocks(hops.last().unwrap()).next().ok_or("vault ran dry")?.bytes;
        let t = xor_relay(&mut vault, path, mode).map_err(|e| format!("relay {n}: {e}"))?;
        let rebuilt = reconstruct(&dest_key, &t.intermediate_messages);
        ensure(rebuilt == source_key && t.end_to_end_key == source_key, || {
            format!("relay {n} over {path}: reconstruction mismatch")
        })?;
        ensure(t.consumed_ids.len() == hops.len(), || format!("relay {n}: wrong block count"))?;
        for id in &t.consumed_ids {
            ensure(seen.insert(*id), || format!("block {id} consumed twice"))?;
        }
    }
    ensure(vault_snapshot(&vault).values().all(|c| c.is_conserved()), || "vault counts do not reconcile".into())?;

    let mut ledger_ids = 0;
    for name in ["four_way_trunk.json", "blackbox_transit.json", "starvation_reserved.json"] {
        let (_, ledger) = sim::run_with_ledger(&load(name)?).map_err(|e| e.to_string())?;
        let mut ids = HashSet::new();
        for id in ledger.iter().flat_map(|e| e.consumed_ids.iter()) {
            ensure(ids.insert(*id), || format!("{name}: block {id} consumed twice"))?;
        }
        ledger_ids += ids.len();
    }
    Ok(format!("10000 relays reconstructed; {} relay and {ledger_ids} run-log block ids all unique", seen.len()))
}

/// All connected graphs on `n` labelled nodes, with every capacity in 1..=3.
fn small_graphs(n: usize) -> Vec<OracleGraph> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut out = Vec::new();
    for mask in 1u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, e)| *e)
            .collect();
        if !oracle::connected(n, &edges) {
            continue;
        }
        let combos = 3usize.pow(edges.len() as u32);
        for mut c in 0..combos {
            let mut caps = Vec::with_capacity(edges.len());
            for _ in 0..edges.len() {
                caps.push((c % 3) as i64 + 1);
                c /= 3;
            }
            out.push(OracleGraph {
                n,
                edges: edges.iter().zip(&caps).map(|(&(a, b), &c)| (a, b, c)).collect(),
            });
        }
    }
    out
}

fn name(i: usize) -> String {
    ((b'A' + i as u8) as char).to_string()
}

fn to_network(og: &OracleGraph) -> NetworkGraph {
    let names: Vec<String> = (0..og.n).map(name).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let links: Vec<(&str, &str, Rate)> = og.edges.iter().map(|&(a, b, c)| (refs[a], refs[b], int(c))).collect();
    graph(&refs, &links)
}

fn criterion_4() -> Outcome {
    let mut solved = 0;
    let mut graphs = 0;
    for n in 2..=4 {
        for og in small_graphs(n) {
            graphs += 1;
            let g = to_network(&og);
            let mut cases: Vec<(Behavior, Vec<(usize, usize)>)> = Vec::new();
            let all_pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            cases.push((Behavior::Balanced, all_pairs.clone()));
            for hub in 0..n {
                let demands = (0..n).filter(|&v| v != hub).map(|v| (hub, v)).collect();
                cases.push((Behavior::Broadcast { hub: NodeId::new(name(hub)) }, demands));
            }
            for &(a, b) in &all_pairs {
                cases.push((Behavior::HighThroughput { pair: NodePair::new(name(a), name(b)) }, vec![(a, b)]));
            }
            for (behavior, demands) in cases {
                let (_, qv) = open_qvnet(&g, behavior.clone());
                let got = solve(&qv).map_err(|e| format!("{og:?} {behavior:?}: {e}"))?;
                let want = cut_oracle(&og, &demands);
                ensure(got == want, || format!("{og:?} {behavior:?}: LP {got} vs oracle {want}"))?;
                solved += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..50 {
        let n = rng.gen_range(2..=6);
        let mut edges: Vec<(usize, usize, i64)> = (1..n).map(|v| (rng.gen_range(0..v), v, rng.gen_range(1..=5))).collect();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.35) && !edges.iter().any(|&(x, y, _)| (x, y) == (a, b)) {
                    edges.push((a, b, rng.gen_range(1..=5)));
                }
            }
        }
        let og = OracleGraph { n, edges };
        let (s, t) = (0, n - 1);
        let (_, qv) = open_qvnet(
            &to_network(&og),
            Behavior::HighThroughput { pair: NodePair::new(name(s), name(t)) },
        );
        let got = solve(&qv).map_err(|e| format!("random graph {k}: {e}"))?;
        let want = max_flow(&og, s, t);
        ensure(got == q(want), || format!("random graph {k} {og:?}: LP {got} vs max-flow {want}"))?;
    }
    Ok(format!("{solved} objectives on {graphs} graphs match the cut oracle; 50 max-flow checks exact"))
}

fn criterion_5() -> Outcome {
    let chain = OracleGraph {
        n: 3,
        edges: vec![(0, 1, 2), (1, 2, 2)],
    };
    let balanced = cut_oracle(&chain, &[(0, 1), (0, 2), (1, 2)]);
    let broadcast = cut_oracle(&chain, &[(1, 0), (1, 2)]);
    let diamond = OracleGraph {
        n: 4,
        edges: vec![(0, 1, 1), (0, 2, 1), (1, 3, 1), (2, 3, 1)],
    };
    let through = cut_oracle(&diamond, &[(0, 3)]);
    ensure(balanced == q(1) && broadcast == q(2) && through == q(2), || {
        format!("oracle disagrees with fixtures: {balanced}, {broadcast}, {through}")
    })?;

    let s = load("chain.json")?;
    let all = s.qvnet("all").ok_or("chain.json lacks QVNet 'all'")?;
    let mut q_bal = all.clone();
    q_bal.behavior = Behavior::Balanced;
    let mut q_hub = all.clone();
    q_hub.behavior = Behavior::Broadcast { hub: "B".into() };
    let got_bal = solve(&q_bal)?;
    let got_hub = solve(&q_hub)?;
    let d = load("diamond.json")?;
    let got_dia = solve(d.qvnet("bulk").ok_or("diamond.json lacks QVNet 'bulk'")?)?;
    ensure(got_bal == balanced, || format!("balanced chain t = {got_bal}"))?;
    ensure(got_hub == broadcast, || format!("broadcast chain t = {got_hub}"))?;
    ensure(got_dia == through, || format!("diamond A->D = {got_dia}"))?;
    Ok("balanced 1, broadcast(B) 2, diamond A->D 2".into())
}

fn criterion_6() -> Outcome {
    let base = run("starvation_baseline.json")?;
    let ab: u64 = base.windows_for("main").filter(|w| w.pair == ("A", "B").into()).map(|w| w.granted).sum();
    let ac: u64 = base.windows_for("main").filter(|w| w.pair == ("A", "C").into()).map(|w| w.granted).sum();
    ensure(ab == 0, || format!("baseline gave (A,B) {ab} blocks"))?;
    ensure(ac > 0, || "baseline flood got nothing".into())?;

    let fixed = run("starvation_reserved.json")?;
    let s = load("starvation_reserved.json")?;
    let trunk_rate = s.trunk(&("A", "B").into()).ok_or("no AB trunk")?.rate;
    let mut worst = u64::MAX;
    for w in fixed.windows_for("ab") {
        let len = (w.end - w.start) as i64;
        let need = frac(1, 2) * trunk_rate * int(len) - int(1);
        ensure(Rate::from_integer(w.granted as i64) >= need, || {
            format!("window {}..{} granted {}", w.start, w.end, w.granted)
        })?;
        worst = worst.min(w.granted);
    }
    ensure(worst != u64::MAX, || "no windows for QVNet 'ab'".into())?;
    Ok(format!("baseline (A,B) 0 of {ac} flood blocks; reserved worst window {worst}"))
}

fn criterion_7() -> Outcome {
    let quiet = run("blackbox_quiet.json")?;
    let flood = run("blackbox_transit.json")?;
    let q: Vec<u64> = quiet.windows_for("transit").map(|w| w.granted).collect();
    let f: Vec<u64> = flood.windows_for("transit").map(|w| w.granted).collect();
    ensure(!q.is_empty() && q == f, || format!("transit windows differ: quiet {q:?}, flooded {f:?}"))?;
    let internal: u64 = flood.rows_for("internal").map(|r| r.granted).sum();
    ensure(internal > 0, || "flooding QVNet got no keys".into())?;
    Ok(format!("transit windows {q:?} in both runs; internal flood drew {internal} keys"))
}

fn criterion_8() -> Outcome {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    ensure(!names.is_empty(), || "no scenarios shipped".into())?;
    for n in &names {
        let a = emit_metrics(&run(n)?, Format::Csv);
        let b = emit_metrics(&run(n)?, Format::Csv);
        ensure(a == b, || format!("{n}: CSV differs between runs"))?;
    }
    Ok(format!("{} scenarios byte-identical", names.len()))
}

fn rule(bounds: &[(&str, Rate, Rate)]) -> UpdateRule {
    UpdateRule {
        period: 1,
        ewma_alpha: int(1),
        bounds: bounds
            .iter()
            .map(|&(c, floor, ceiling)| (c.into(), Bounds { floor, ceiling }))
            .collect(),
    }
}

fn two_way(d: (Rate, Rate), r: &UpdateRule) -> Result<Vec<Rate>, String> {
    let t = TrunkLink::new(("A", "B").into(), TrunkKind::Physical, int(8))
        .with_quota("a", frac(1, 2))
        .with_quota("b", frac(1, 2));
    let mut stats = DemandStats::for_trunks([&t]);
    stats.set_requested(&t.pair, &"a".into(), d.0);
    stats.set_requested(&t.pair, &"b".into(), d.1);
    Ok(rebalance(&t, &stats, r).map_err(|e| e.to_string())?.into_values().collect())
}

fn criterion_9() -> Outcome {
    ensure(two_way((int(3), int(1)), &rule(&[]))? == [frac(3, 4), frac(1, 4)], || "3:1 split".into())?;
    ensure(two_way((int(0), int(0)), &rule(&[]))? == [frac(1, 2), frac(1, 2)], || "no-demand fixpoint".into())?;
    let clamp = rule(&[("a", int(0), frac(1, 2))]);
    ensure(two_way((int(9), int(1)), &clamp)? == [frac(1, 2), frac(1, 2)], || "9:1 with ceiling".into())?;
    for d in 1..=12 {
        let got = two_way((int(d), int(1)), &rule(&[]))?;
        ensure(got[0] == int(d) * got[1], || format!("{d}:1 gave {got:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ids: Vec<SubConnectionId> = ["a", "b", "c", "d"].iter().map(|&s| s.into()).collect();
    let mut trunk = TrunkLink::new(("A", "B").into(), TrunkKind::Physical, int(16));
    for id in &ids {
        trunk = trunk.with_quota(id.as_str(), frac(1, 4));
    }
    let mut bounds = BTreeMap::new();
    let mut floor_left = int(1);
    for id in &ids {
        let floor = frac(rng.gen_range(0..=4), 16).min(floor_left);
        floor_left -= floor;
        let ceiling = floor + frac(rng.gen_range(0..=16), 16);
        bounds.insert(id.clone(), Bounds { floor, ceiling: ceiling.min(int(1)) });
    }
    let fuzz = UpdateRule {
        period: 5,
        ewma_alpha: frac(1, 3),
        bounds,
    };
    let mut stats = DemandStats::for_trunks([&trunk]);
    let mut changes = 0;
    for tick in 0..1000u64 {
        let entries: Vec<_> = ids
            .iter()
            .filter_map(|id| {
                let count = rng.gen_range(0..20u64);
                (count > 0).then(|| fake_entry(tick, id, &trunk.pair, count, rng.gen_range(0..=count)))
            })
            .collect();
        stats = observe(&stats, tick, &entries, &fuzz);
        if (tick + 1) % fuzz.period == 0 {
            let next: QuotaMap = rebalance(&trunk, &stats, &fuzz).map_err(|e| e.to_string())?;
            for (c, f) in &next {
                let b = fuzz.bounds_for(c);
                ensure(b.floor <= *f && *f <= b.ceiling, || format!("tick {tick}: {c} = {f} outside bounds"))?;
            }
            let sum: Rate = next.values().sum();
            ensure(sum <= int(1), || format!("tick {tick}: quotas sum to {sum}"))?;
            if next != trunk.quotas {
                changes += 1;
            }
            trunk.quotas = next;
        }
    }
    Ok(format!("examples exact; 1000-tick fuzz kept bounds over {changes} quota changes"))
}

fn fake_entry(tick: u64, id: &SubConnectionId, pair: &NodePair, requested: u64, granted: u64) -> qvnet_core::kms::LedgerEntry {
    qvnet_core::kms::LedgerEntry {
        tick,
        qvnet: id.clone(),
        principal: "fuzz".into(),
        src: pair.lo().clone(),
        dst: pair.hi().clone(),
        requested,
        granted,
        denial: None,
        path: None,
        trunk_charges: BTreeMap::from([(pair.clone(), granted)]),
        phys_consumed: BTreeMap::new(),
        consumed_ids: Vec::new(),
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "trunk split and realized QVLink rates", criterion_1, Duration::from_secs(1)),
        (2, "relay consumes one block per physical hop", criterion_2, Duration::MAX),
        (3, "XOR relay correctness and block uniqueness", criterion_3, Duration::from_secs(5)),
        (4, "behavior optimizer against independent oracles", criterion_4, Duration::from_secs(60)),
        (5, "chain and diamond benchmarks", criterion_5, Duration::MAX),
        (6, "starvation mitigation by reserved sub-connection", criterion_6, Duration::from_secs(2)),
        (7, "blackbox transit isolation", criterion_7, Duration::from_secs(2)),
        (8, "replay determinism of shipped scenarios", criterion_8, Duration::MAX),
        (9, "quota updater properties", criterion_9, Duration::MAX),
    ];
    let mut failed = 0;
    for (n, title, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}, but took {took:.2?} (limit {budget:.0?})")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {n}: {title} ({detail}; {took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n}: {title}: {why} ({took:.2?})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
