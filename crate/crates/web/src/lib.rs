//! Browser bindings for three interactive views: splitting a trunk,
//! solving a behavior on a small graph, and replaying a scenario.
//!
//! The `*_json` functions hold the logic and are plain Rust; the
//! `#[wasm_bindgen]` exports only convert errors for JavaScript.

use std::collections::BTreeMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use qvnet_core::behavior_opt::{build_lp, qvnet_capacities, solve_behavior};
use qvnet_core::qvnetctl::{assemble_qvnet, Behavior};
use qvnet_core::rate::{self, parse_rate, Rate};
use qvnet_core::sim;
use qvnet_core::topology::{build_graph, GraphSpec, LinkSpec, NodePair, DEFAULT_MAX_HOPS};
use qvnet_core::virtlink::{resolve_contention, split_trunk, SubConnectionId, TrunkKind, TrunkLink};

const SCENARIOS: [(&str, &str); 5] = [
    ("four_way_trunk", include_str!("../../../scenarios/four_way_trunk.json")),
    ("starvation_baseline", include_str!("../../../scenarios/starvation_baseline.json")),
    ("starvation_reserved", include_str!("../../../scenarios/starvation_reserved.json")),
    ("blackbox_transit", include_str!("../../../scenarios/blackbox_transit.json")),
    ("adaptive", include_str!("../../../scenarios/adaptive.json")),
];

/// `"red=1/2, blue=1/4"` into (id, quota) pairs.
fn parse_quotas(text: &str) -> Result<Vec<(String, Rate)>, String> {
    text.split([',', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (id, f) = item.split_once('=').ok_or_else(|| format!("expected id=quota, got '{item}'"))?;
            let f = parse_rate(f).map_err(|e| e.to_string())?;
            Ok((id.trim().to_string(), f))
        })
        .collect()
}

#[derive(Serialize)]
struct SplitRow {
    subconn: String,
    quota: String,
    rate: String,
    rate_f64: f64,
    /// Blocks won when every sub-connection asks for its full rate plus
    /// one and the trunk holds a single tick of keys.
    contended: u64,
}

#[derive(Serialize)]
struct SplitView {
    rate: String,
    quota_sum: String,
    oversubscribed: bool,
    qvlinks: Vec<SplitRow>,
}

pub fn split_json(rate: &str, quotas: &str) -> Result<String, String> {
    let r = parse_rate(rate).map_err(|e| e.to_string())?;
    let mut trunk = TrunkLink::new(("A", "B").into(), TrunkKind::Physical, r);
    for (id, f) in parse_quotas(quotas)? {
        trunk = trunk.with_quota(&id, f);
    }
    let split = split_trunk(&trunk, &trunk.quotas).map_err(|e| e.to_string())?;
    let demands: BTreeMap<SubConnectionId, u64> = split
        .qvlinks
        .iter()
        .map(|q| (q.subconn.clone(), rate::floor_u64(&q.rate) + 1))
        .collect();
    let grants = resolve_contention(&trunk, &demands, rate::floor_u64(&r)).map_err(|e| e.to_string())?;
    let view = SplitView {
        rate: rate::format_rate(&r),
        quota_sum: rate::format_rate(&trunk.quota_sum()),
        oversubscribed: split.oversubscribed,
        qvlinks: split
            .qvlinks
            .iter()
            .map(|q| SplitRow {
                subconn: q.subconn.to_string(),
                quota: rate::format_rate(&q.quota),
                rate: rate::format_rate(&q.rate),
                rate_f64: rate::to_f64(&q.rate),
                contended: grants[&q.subconn],
            })
            .collect(),
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

/// `"A-B:2, B-C:2"` into a graph spec.
fn parse_links(text: &str) -> Result<GraphSpec, String> {
    let mut spec = GraphSpec::default();
    for item in text.split([',', '\n']).map(str::trim).filter(|s| !s.is_empty()) {
        let (pair, r) = item.split_once(':').ok_or_else(|| format!("expected A-B:rate, got '{item}'"))?;
        let (a, b) = pair.split_once('-').ok_or_else(|| format!("expected A-B, got '{pair}'"))?;
        let (a, b) = (a.trim(), b.trim());
        for n in [a, b] {
            if !spec.nodes.iter().any(|m| m == n) {
                spec.nodes.push(n.to_string());
            }
        }
        spec.links.push(LinkSpec::new(a, b, parse_rate(r).map_err(|e| e.to_string())?));
    }
    Ok(spec)
}

/// `"balanced"`, `"broadcast:B"` or `"high_throughput:A-D"`.
fn parse_behavior(text: &str) -> Result<Behavior, String> {
    let text = text.trim();
    let (kind, arg) = text.split_once(':').map_or((text, ""), |(k, a)| (k.trim(), a.trim()));
    match kind {
        "balanced" => Ok(Behavior::Balanced),
        "broadcast" if !arg.is_empty() => Ok(Behavior::Broadcast { hub: arg.into() }),
        "high_throughput" => {
            let (a, b) = arg.split_once('-').ok_or("high_throughput needs a pair, e.g. high_throughput:A-D")?;
            Ok(Behavior::HighThroughput {
                pair: NodePair::new(a.trim(), b.trim()),
            })
        }
        _ => Err(format!("unknown behavior '{text}'")),
    }
}

pub fn solve_json(links: &str, behavior: &str) -> Result<String, String> {
    let spec = parse_links(links)?;
    let g = build_graph(&spec).map_err(|e| e.to_string())?;
    let trunks: Vec<TrunkLink> = g
        .links()
        .map(|l| TrunkLink::new(l.pair.clone(), TrunkKind::Physical, l.rate).with_quota("demo", Rate::from_integer(1)))
        .collect();
    let mut q = assemble_qvnet(&trunks, &"demo".into()).qvnet;
    q.behavior = parse_behavior(behavior)?;
    let lp = build_lp(&q, &q.behavior, &qvnet_capacities(&q), DEFAULT_MAX_HOPS).map_err(|e| e.to_string())?;
    let alloc = solve_behavior(&lp).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&alloc).expect("allocation serializes"))
}

pub fn scenario_names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|(n, _)| *n).collect()
}

pub fn scenario_text(name: &str) -> Result<&'static str, String> {
    SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| format!("no built-in scenario '{name}'"))
}

#[derive(Serialize)]
struct Series {
    qvnet: String,
    requested: Vec<u64>,
    granted: Vec<u64>,
}

#[derive(Serialize)]
struct RunView {
    scenario: String,
    duration: u64,
    series: Vec<Series>,
    windows: Vec<sim::WindowRate>,
    allocations: Vec<sim::AllocationSummary>,
    quota_changes: Vec<sim::QuotaChange>,
}

/// Runs a scenario document and returns per-QVNet grant series.
pub fn run_json(scenario: &str) -> Result<String, String> {
    let report = sim::run_text(scenario, None).map_err(|e| e.to_string())?;
    let mut series: BTreeMap<String, Series> = BTreeMap::new();
    for row in &report.rows {
        let s = series.entry(row.qvnet.to_string()).or_insert_with(|| Series {
            qvnet: row.qvnet.to_string(),
            requested: Vec::new(),
            granted: Vec::new(),
        });
        s.requested.push(row.requested);
        s.granted.push(row.granted);
    }
    let view = RunView {
        scenario: report.scenario.clone(),
        duration: report.duration,
        series: series.into_values().collect(),
        windows: report.windows,
        allocations: report.allocations,
        quota_changes: report.quota_changes,
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[wasm_bindgen]
pub fn split(rate: &str, quotas: &str) -> Result<String, JsValue> {
    split_json(rate, quotas).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn solve(links: &str, behavior: &str) -> Result<String, JsValue> {
    solve_json(links, behavior).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run(scenario: &str) -> Result<String, JsValue> {
    run_json(scenario).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn builtin_scenario(name: &str) -> Result<String, JsValue> {
    scenario_text(name).map(str::to_string).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn builtin_scenarios() -> String {
    scenario_names().join(",")
}
