//! Scenario documents: JSON schema and validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::behavior_opt::commodity_set;
use crate::keymat::RelayMode;
use crate::kms::{qvnet_graph, KeyRequest};
use crate::qvnetctl::{
    assemble_qvnet, member_nodes, AccessRule, Behavior, PairScope, QVNet, RoutingKind, RoutingPolicy,
    TickWindow, ANY_PRINCIPAL,
};
use crate::rate::{self, Rate};
use crate::topology::{build_graph_collect, GraphSpec, NetworkGraph, NodeId, NodePair, Path, DEFAULT_MAX_HOPS};
use crate::updater::UpdateRule;
use crate::virtlink::{split_trunk, QuotaMap, SubConnectionId, TrunkKind, TrunkLink};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("{} validation error(s):\n  {}", .0.len(), .0.join("\n  "))]
    Validation(Vec<String>),
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub duration: u64,
    pub seed: u64,
    pub max_hops: usize,
    pub relay_mode: RelayMode,
    pub graph: NetworkGraph,
    pub trunks: Vec<TrunkLink>,
    pub qvnets: Vec<QVNet>,
    /// Sorted by tick; document order within a tick.
    pub workload: Vec<KeyRequest>,
    pub updater: Option<UpdateRule>,
}

impl Scenario {
    pub fn trunk(&self, pair: &NodePair) -> Option<&TrunkLink> {
        self.trunks.iter().find(|t| &t.pair == pair)
    }

    pub fn qvnet(&self, id: &str) -> Option<&QVNet> {
        self.qvnets.iter().find(|q| q.id.as_str() == id)
    }

    pub fn requests_at(&self, tick: u64) -> &[KeyRequest] {
        let start = self.workload.partition_point(|r| r.tick < tick);
        let end = self.workload.partition_point(|r| r.tick <= tick);
        &self.workload[start..end]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub name: String,
    pub duration: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_hops: Option<usize>,
    #[serde(default)]
    pub relay_mode: RelayMode,
    pub graph: GraphSpec,
    #[serde(default)]
    pub trunks: Vec<TrunkDoc>,
    #[serde(default)]
    pub qvnets: Vec<QVNetDoc>,
    #[serde(default)]
    pub workload: Vec<RequestDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updater: Option<UpdateRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkDoc {
    pub a: String,
    pub b: String,
    #[serde(default = "physical")]
    pub kind: TrunkKind,
    /// Physical trunks default to their link's rate. Logical trunks need one.
    #[serde(default, with = "rate::serde_rate_opt", skip_serializing_if = "Option::is_none")]
    pub rate: Option<Rate>,
    #[serde(default)]
    pub quotas: BTreeMap<String, QuotaValue>,
}

fn physical() -> TrunkKind {
    TrunkKind::Physical
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaValue(#[serde(with = "rate::serde_rate")] pub Rate);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QVNetDoc {
    pub id: String,
    #[serde(default = "balanced")]
    pub behavior: Behavior,
    #[serde(default)]
    pub routing: RoutingDoc,
    #[serde(default)]
    pub access: Vec<AccessDoc>,
    #[serde(default)]
    pub schedule: Vec<TickWindow>,
}

fn balanced() -> Behavior {
    Behavior::Balanced
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingDoc {
    #[serde(default)]
    pub kind: RoutingKind,
    #[serde(default)]
    pub routes: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessDoc {
    pub principal: String,
    /// `"*"` or a list of `[a, b]` pairs.
    #[serde(default = "any_pairs")]
    pub pairs: PairsDoc,
    #[serde(default = "unlimited")]
    pub max_blocks_per_tick: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairsDoc {
    Wildcard(String),
    List(Vec<(String, String)>),
}

fn any_pairs() -> PairsDoc {
    PairsDoc::Wildcard(ANY_PRINCIPAL.to_string())
}

fn unlimited() -> u64 {
    u64::MAX
}

/// One request, or a train of them when `every` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestDoc {
    pub tick: u64,
    pub qvnet: String,
    pub principal: String,
    pub src: String,
    pub dst: String,
    pub count: u64,
    /// Repeat every this many ticks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<u64>,
    /// Exclusive end of the repetition; defaults to the duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<u64>,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioDoc, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

/// Parses and validates a scenario, reporting every problem found.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    validate(parse_scenario(text)?)
}

pub fn validate(doc: ScenarioDoc) -> Result<Scenario, ScenarioError> {
    let mut errors: Vec<String> = Vec::new();

    let graph = match build_graph_collect(&doc.graph) {
        Ok(g) => g,
        Err(errs) => {
            errors.extend(errs.iter().map(|e| format!("graph: {e}")));
            // Keep going with whatever nodes parsed, so later sections are
            // still checked.
            let nodes: BTreeSet<&String> = doc.graph.nodes.iter().filter(|n| !n.is_empty()).collect();
            build_graph_collect(&GraphSpec {
                nodes: nodes.into_iter().cloned().collect(),
                links: Vec::new(),
            })
            .unwrap_or_default()
        }
    };
    let max_hops = doc.max_hops.unwrap_or(DEFAULT_MAX_HOPS);
    if max_hops == 0 {
        errors.push("max_hops must be at least 1".into());
    }

    let declared: BTreeSet<&str> = doc.qvnets.iter().map(|q| q.id.as_str()).collect();
    let trunks = check_trunks(&doc, &graph, &declared, &mut errors);

    let mut seen = BTreeSet::new();
    let mut qvnets = Vec::new();
    for (i, q) in doc.qvnets.iter().enumerate() {
        let at = format!("qvnets[{i}] '{}'", q.id);
        if q.id.is_empty() {
            errors.push(format!("qvnets[{i}]: empty id"));
            continue;
        }
        if !seen.insert(q.id.as_str()) {
            errors.push(format!("{at}: duplicate QVNet id"));
            continue;
        }
        if let Some(qvnet) = check_qvnet(q, &trunks, &at, &mut errors) {
            qvnets.push(qvnet);
        }
    }

    let workload = check_workload(&doc, &graph, &mut errors);

    if let Some(rule) = &doc.updater {
        errors.extend(rule.problems().into_iter().map(|p| format!("updater: {p}")));
        for c in rule.bounds.keys() {
            if !declared.contains(c.as_str()) {
                errors.push(format!("updater: bounds name unknown QVNet '{c}'"));
            }
        }
    }

    if !errors.is_empty() {
        return Err(ScenarioError::Validation(errors));
    }
    Ok(Scenario {
        name: doc.name,
        duration: doc.duration,
        seed: doc.seed,
        max_hops,
        relay_mode: doc.relay_mode,
        graph,
        trunks,
        qvnets,
        workload,
        updater: doc.updater,
    })
}

fn check_trunks(
    doc: &ScenarioDoc,
    graph: &NetworkGraph,
    declared: &BTreeSet<&str>,
    errors: &mut Vec<String>,
) -> Vec<TrunkLink> {
    let mut out: Vec<TrunkLink> = Vec::new();
    for (i, t) in doc.trunks.iter().enumerate() {
        let at = format!("trunks[{i}] {}-{}", t.a, t.b);
        let mut ok = true;
        for n in [&t.a, &t.b] {
            if !graph.contains(&NodeId::new(n.as_str())) {
                errors.push(format!("{at}: unknown node '{n}'"));
                ok = false;
            }
        }
        if t.a == t.b {
            errors.push(format!("{at}: both ends are '{}'", t.a));
            ok = false;
        }
        if !ok {
            continue;
        }
        let pair = NodePair::new(t.a.as_str(), t.b.as_str());
        if out.iter().any(|o| o.pair == pair) {
            errors.push(format!("{at}: duplicate trunk"));
            continue;
        }
        let link = graph.link(&pair);
        let rate = match (t.kind, link, t.rate) {
            (TrunkKind::Physical, None, _) => {
                errors.push(format!("{at}: physical trunk has no physical link"));
                continue;
            }
            (TrunkKind::Physical, Some(l), Some(r)) if r != l.rate => {
                errors.push(format!(
                    "{at}: rate {} differs from the link rate {}",
                    rate::format_rate(&r),
                    rate::format_rate(&l.rate)
                ));
                continue;
            }
            (TrunkKind::Physical, Some(l), _) => l.rate,
            (TrunkKind::Logical, Some(_), _) => {
                errors.push(format!("{at}: logical trunk on a pair with a physical link"));
                continue;
            }
            (TrunkKind::Logical, None, None) => {
                errors.push(format!("{at}: logical trunk needs a rate"));
                continue;
            }
            (TrunkKind::Logical, None, Some(r)) => r,
        };
        if rate < Rate::from_integer(0) {
            errors.push(format!("{at}: negative rate"));
            continue;
        }
        let mut trunk = TrunkLink::new(pair, t.kind, rate);
        for (c, q) in &t.quotas {
            if !declared.contains(c.as_str()) {
                errors.push(format!("{at}: quota for undeclared QVNet '{c}'"));
            }
            trunk = trunk.with_quota(c, q.0);
        }
        if let Err(e) = split_trunk(&trunk, &trunk.quotas) {
            errors.push(format!("{at}: {e}"));
            continue;
        }
        out.push(trunk);
    }
    out
}

fn check_qvnet(q: &QVNetDoc, trunks: &[TrunkLink], at: &str, errors: &mut Vec<String>) -> Option<QVNet> {
    let id = SubConnectionId::new(q.id.as_str());
    let assembled = assemble_qvnet(trunks, &id);
    if assembled.empty {
        errors.push(format!("{at}: no trunk carries this QVNet"));
        return None;
    }
    let mut qvnet = assembled.qvnet;
    let members = member_nodes(&qvnet);
    if let Err(e) = commodity_set(&q.behavior, &members) {
        errors.push(format!("{at}: behavior: {e}"));
    }
    qvnet.behavior = q.behavior.clone();

    let graph = qvnet_graph(&qvnet);
    let mut routes = Vec::new();
    for (j, r) in q.routing.routes.iter().enumerate() {
        match Path::new(&graph, r.iter().map(|n| NodeId::new(n.as_str())).collect()) {
            Ok(p) => routes.push(p),
            Err(e) => errors.push(format!("{at}: routes[{j}]: {e}")),
        }
    }
    qvnet.routing = match q.routing.kind {
        RoutingKind::StaticMap => {
            let policy = RoutingPolicy::static_map(routes.iter().cloned());
            if policy.static_routes.len() != routes.len() {
                errors.push(format!("{at}: two static routes share endpoints"));
            }
            policy
        }
        RoutingKind::ShortestPath => {
            if !routes.is_empty() {
                errors.push(format!("{at}: routes given but routing kind is shortest_path"));
            }
            RoutingPolicy::default()
        }
    };

    for (j, a) in q.access.iter().enumerate() {
        let pairs = match &a.pairs {
            PairsDoc::Wildcard(s) if s == ANY_PRINCIPAL => PairScope::Any,
            PairsDoc::Wildcard(s) => {
                errors.push(format!("{at}: access[{j}]: pairs must be \"*\" or a list, got \"{s}\""));
                continue;
            }
            PairsDoc::List(list) => {
                for (x, y) in list {
                    for n in [x, y] {
                        if !members.contains(&NodeId::new(n.as_str())) {
                            errors.push(format!("{at}: access[{j}]: '{n}' is not a member"));
                        }
                    }
                }
                PairScope::Only(list.iter().map(|(x, y)| NodePair::new(x.as_str(), y.as_str())).collect())
            }
        };
        if a.principal.is_empty() {
            errors.push(format!("{at}: access[{j}]: empty principal"));
        }
        qvnet.access.push(AccessRule::new(&a.principal, pairs, a.max_blocks_per_tick));
    }

    for (j, w) in q.schedule.iter().enumerate() {
        if w.from >= w.to {
            errors.push(format!("{at}: schedule[{j}]: window [{}, {}) is empty", w.from, w.to));
        }
    }
    qvnet.schedule = q.schedule.clone();
    Some(qvnet)
}

fn check_workload(doc: &ScenarioDoc, graph: &NetworkGraph, errors: &mut Vec<String>) -> Vec<KeyRequest> {
    let declared: BTreeSet<&str> = doc.qvnets.iter().map(|q| q.id.as_str()).collect();
    let principals: BTreeSet<&str> = doc
        .qvnets
        .iter()
        .flat_map(|q| q.access.iter().map(|a| a.principal.as_str()))
        .collect();
    let mut out: Vec<KeyRequest> = Vec::new();
    for (i, w) in doc.workload.iter().enumerate() {
        let at = format!("workload[{i}]");
        let before = errors.len();
        if !declared.contains(w.qvnet.as_str()) {
            errors.push(format!("{at}: unknown QVNet '{}'", w.qvnet));
        }
        if !principals.contains(w.principal.as_str()) && !principals.contains(ANY_PRINCIPAL) {
            errors.push(format!("{at}: principal '{}' appears in no access rule", w.principal));
        }
        for n in [&w.src, &w.dst] {
            if !graph.contains(&NodeId::new(n.as_str())) {
                errors.push(format!("{at}: unknown node '{n}'"));
            }
        }
        if w.src == w.dst {
            errors.push(format!("{at}: source and destination are both '{}'", w.src));
        }
        if w.count == 0 {
            errors.push(format!("{at}: count must be at least 1"));
        }
        if w.tick >= doc.duration {
            errors.push(format!("{at}: tick {} is not before the duration {}", w.tick, doc.duration));
        }
        if w.every == Some(0) {
            errors.push(format!("{at}: every must be at least 1"));
        }
        if w.until.is_some_and(|u| u > doc.duration) {
            errors.push(format!("{at}: until is past the duration {}", doc.duration));
        }
        if w.until.is_some() && w.every.is_none() {
            errors.push(format!("{at}: until without every"));
        }
        if errors.len() > before {
            continue;
        }
        let ticks: Vec<u64> = match w.every {
            None => vec![w.tick],
            Some(step) => (w.tick..w.until.unwrap_or(doc.duration)).step_by(step as usize).collect(),
        };
        for t in ticks {
            out.push(KeyRequest::new(&w.qvnet, &w.principal, &w.src, &w.dst, w.count, t));
        }
    }
    // Stable, so document order survives within a tick.
    out.sort_by_key(|r| r.tick);
    out
}

/// Quota map of a trunk as plain strings, for display.
pub fn quota_strings(quotas: &QuotaMap) -> BTreeMap<String, String> {
    quotas.iter().map(|(c, f)| (c.to_string(), rate::format_rate(f))).collect()
}
