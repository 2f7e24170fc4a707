//! Key management layer: one logical KMS per QVNet over shared vaults.
//!
//! A request runs through authorize → route → per-trunk budget charge →
//! XOR relay, one relay per granted key. Each sub-connection of a trunk
//! earns `f(c) * r` blocks of budget per tick, banked up to
//! [`BUDGET_CARRY_TICKS`] ticks' worth. At the start of a tick, if the
//! whole budgets of a physical trunk exceed the keys its vault holds, the
//! keys are shared out by [`resolve_contention`]. Requests within a tick
//! are served first come, first served.

use std::collections::BTreeMap;
use std::ops::Range;

use num_traits::Zero;
use serde::Serialize;

use crate::keymat::{self, KeyVault, KeymatError, RelayMode, RelayTranscript};
use crate::qvnetctl::{authorize, member_nodes, Decision, DenyReason, QVNet, RoutingKind};
use crate::rate::{self, Rate};
use crate::topology::{build_graph, GraphSpec, LinkSpec, NetworkGraph, NodeId, NodePair, Path};
use crate::virtlink::{resolve_contention, SubConnectionId, TrunkKind, TrunkLink, VirtlinkError};

/// Budget carry-over cap, in ticks of sub-connection rate.
pub const BUDGET_CARRY_TICKS: i64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KmsError {
    #[error("QVNet '{0}' not found")]
    QVNetNotFound(SubConnectionId),
    #[error("request count must be at least 1")]
    ZeroCount,
    #[error("request for tick {tick} arrived after tick {current}")]
    StaleTick { tick: u64, current: u64 },
    #[error("no trunk on link {0}")]
    UnknownTrunk(NodePair),
    #[error(transparent)]
    Keymat(#[from] KeymatError),
    #[error(transparent)]
    Virtlink(#[from] VirtlinkError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("no path between {0} and {1}")]
    NoPath(NodeId, NodeId),
    #[error("no static route configured for {0}")]
    MissingStaticRoute(NodePair),
    #[error("source and destination are both '{0}'")]
    DegeneratePair(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyRequest {
    pub qvnet: SubConnectionId,
    pub principal: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub count: u64,
    pub tick: u64,
}

impl KeyRequest {
    pub fn new(qvnet: &str, principal: &str, src: &str, dst: &str, count: u64, tick: u64) -> Self {
        KeyRequest {
            qvnet: qvnet.into(),
            principal: principal.to_string(),
            src: src.into(),
            dst: dst.into(),
            count,
            tick,
        }
    }

    pub fn pair(&self) -> NodePair {
        NodePair::new(self.src.clone(), self.dst.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Denial {
    AccessDenied,
    QuotaExceeded,
    ScheduleClosed,
    NoPath,
    InsufficientKeys,
}

impl From<DenyReason> for Denial {
    fn from(r: DenyReason) -> Self {
        match r {
            DenyReason::AccessDenied => Denial::AccessDenied,
            DenyReason::QuotaExceeded => Denial::QuotaExceeded,
            DenyReason::ScheduleClosed => Denial::ScheduleClosed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyGrant {
    pub request: KeyRequest,
    pub granted: u64,
    pub transcripts: Vec<RelayTranscript>,
    pub denial: Option<Denial>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub tick: u64,
    pub qvnet: SubConnectionId,
    pub principal: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub requested: u64,
    pub granted: u64,
    pub denial: Option<Denial>,
    pub path: Option<Path>,
    /// Blocks charged to this QVNet's sub-connection on each trunk.
    pub trunk_charges: BTreeMap<NodePair, u64>,
    /// Physical key blocks consumed on each link.
    pub phys_consumed: BTreeMap<NodePair, u64>,
    pub consumed_ids: Vec<u64>,
}

impl LedgerEntry {
    pub fn phys_total(&self) -> u64 {
        self.phys_consumed.values().sum()
    }
}

type BudgetKey = (NodePair, SubConnectionId);

#[derive(Debug, Clone)]
pub struct KmsState {
    graph: NetworkGraph,
    vault: KeyVault,
    trunks: BTreeMap<NodePair, TrunkLink>,
    qvnets: BTreeMap<SubConnectionId, QVNet>,
    routing_graphs: BTreeMap<SubConnectionId, NetworkGraph>,
    balances: BTreeMap<BudgetKey, Rate>,
    allowances: BTreeMap<BudgetKey, u64>,
    usage: BTreeMap<(SubConnectionId, String), u64>,
    current_tick: Option<u64>,
    relay_mode: RelayMode,
    ledger: Vec<LedgerEntry>,
}

/// Physical links of a QVNet as a graph, used for routing.
pub fn qvnet_graph(qvnet: &QVNet) -> NetworkGraph {
    let spec = GraphSpec {
        nodes: member_nodes(qvnet).iter().map(|n| n.to_string()).collect(),
        links: qvnet
            .physical_links()
            .map(|q| LinkSpec::new(q.pair.lo().as_str(), q.pair.hi().as_str(), q.rate))
            .collect(),
    };
    build_graph(&spec).expect("QVLinks of one QVNet form a valid graph")
}

/// Path for a pair: the configured static route, or the fewest-hop path
/// over the QVNet's physical links with lexicographic tie-break.
pub fn route(qvnet: &QVNet, src: &NodeId, dst: &NodeId) -> Result<Path, RouteError> {
    route_on(qvnet, &qvnet_graph(qvnet), src, dst)
}

fn route_on(qvnet: &QVNet, graph: &NetworkGraph, src: &NodeId, dst: &NodeId) -> Result<Path, RouteError> {
    if src == dst {
        return Err(RouteError::DegeneratePair(src.clone()));
    }
    match qvnet.routing.kind {
        RoutingKind::StaticMap => {
            let pair = NodePair::new(src.clone(), dst.clone());
            let path = qvnet
                .routing
                .static_routes
                .get(&pair)
                .ok_or(RouteError::MissingStaticRoute(pair))?;
            Ok(if path.source() == src { path.clone() } else { path.reversed() })
        }
        RoutingKind::ShortestPath => {
            if !graph.contains(src) || !graph.contains(dst) {
                return Err(RouteError::NoPath(src.clone(), dst.clone()));
            }
            graph
                .shortest_path(src, dst)
                .ok()
                .flatten()
                .ok_or_else(|| RouteError::NoPath(src.clone(), dst.clone()))
        }
    }
}

impl KmsState {
    /// `trunks` must already be validated against `graph`.
    pub fn new(graph: NetworkGraph, trunks: Vec<TrunkLink>, qvnets: Vec<QVNet>) -> Self {
        let vault = KeyVault::new(&graph);
        let trunks: BTreeMap<NodePair, TrunkLink> = trunks.into_iter().map(|t| (t.pair.clone(), t)).collect();
        let balances = trunks
            .values()
            .flat_map(|t| t.quotas.keys().map(|c| ((t.pair.clone(), c.clone()), Rate::zero())))
            .collect();
        let routing_graphs = qvnets.iter().map(|q| (q.id.clone(), qvnet_graph(q))).collect();
        KmsState {
            graph,
            vault,
            trunks,
            qvnets: qvnets.into_iter().map(|q| (q.id.clone(), q)).collect(),
            routing_graphs,
            balances,
            allowances: BTreeMap::new(),
            usage: BTreeMap::new(),
            current_tick: None,
            relay_mode: RelayMode::HopByHop,
            ledger: Vec::new(),
        }
    }

    pub fn with_relay_mode(mut self, mode: RelayMode) -> Self {
        self.relay_mode = mode;
        self
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn vault(&self) -> &KeyVault {
        &self.vault
    }

    pub fn vault_mut(&mut self) -> &mut KeyVault {
        &mut self.vault
    }

    pub fn trunks(&self) -> impl Iterator<Item = &TrunkLink> {
        self.trunks.values()
    }

    pub fn trunk(&self, pair: &NodePair) -> Option<&TrunkLink> {
        self.trunks.get(pair)
    }

    pub fn qvnets(&self) -> impl Iterator<Item = &QVNet> {
        self.qvnets.values()
    }

    pub fn qvnet(&self, id: &SubConnectionId) -> Option<&QVNet> {
        self.qvnets.get(id)
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    /// Unspent budget of sub-connection `c` on a trunk.
    pub fn balance(&self, pair: &NodePair, c: &SubConnectionId) -> Option<Rate> {
        self.balances.get(&(pair.clone(), c.clone())).copied()
    }

    /// Whole blocks `c` may still draw on a trunk this tick.
    pub fn allowance(&self, pair: &NodePair, c: &SubConnectionId) -> u64 {
        self.allowances.get(&(pair.clone(), c.clone())).copied().unwrap_or(0)
    }

    /// Overrides a balance. Useful for fixtures that need an exact budget.
    pub fn set_balance(&mut self, pair: &NodePair, c: &SubConnectionId, balance: Rate) {
        let key = (pair.clone(), c.clone());
        self.balances.insert(key.clone(), balance);
        self.allowances.insert(key, rate::floor_u64(&balance));
    }

    /// Generates this tick's key blocks on every physical link.
    pub fn generate(&mut self, tick: u64, seed: u64) -> Result<BTreeMap<NodePair, u64>, KmsError> {
        Ok(keymat::tick_generate(&mut self.vault, &self.graph, tick, seed)?)
    }

    /// Opens `tick`: refills budgets and fixes this tick's allowances.
    ///
    /// `plan` is the tick's expected workload; it lets contended trunks
    /// split their keys by actual demand. Without it every sub-connection
    /// is assumed to want its whole budget.
    pub fn begin_tick(&mut self, tick: u64, plan: Option<&[KeyRequest]>) -> Result<(), KmsError> {
        if let Some(current) = self.current_tick {
            if tick <= current {
                return Err(KmsError::StaleTick { tick, current });
            }
        }
        self.current_tick = Some(tick);
        self.usage.clear();
        self.allowances.clear();

        for trunk in self.trunks.values() {
            for (c, f) in &trunk.quotas {
                let rc = f * trunk.rate;
                let cap = rc * Rate::from_integer(BUDGET_CARRY_TICKS);
                let bal = self.balances.entry((trunk.pair.clone(), c.clone())).or_insert_with(Rate::zero);
                *bal = (*bal + rc).min(cap);
            }
        }

        let planned = plan.map(|reqs| self.planned_demand(reqs));
        for trunk in self.trunks.values() {
            let whole: BTreeMap<SubConnectionId, u64> = trunk
                .quotas
                .keys()
                .map(|c| (c.clone(), rate::floor_u64(&self.balances[&(trunk.pair.clone(), c.clone())])))
                .collect();
            let granted = if trunk.kind == TrunkKind::Physical
                && whole.values().sum::<u64>() > self.vault.available(&trunk.pair)
            {
                let demands: BTreeMap<SubConnectionId, u64> = whole
                    .iter()
                    .map(|(c, w)| {
                        let want = planned
                            .as_ref()
                            .map_or(*w, |p| p.get(&(trunk.pair.clone(), c.clone())).copied().unwrap_or(0));
                        (c.clone(), want.min(*w))
                    })
                    .collect();
                resolve_contention(trunk, &demands, self.vault.available(&trunk.pair))?
            } else {
                whole
            };
            for (c, g) in granted {
                self.allowances.insert((trunk.pair.clone(), c), g);
            }
        }
        Ok(())
    }

    fn planned_demand(&self, reqs: &[KeyRequest]) -> BTreeMap<BudgetKey, u64> {
        let mut demand = BTreeMap::new();
        for r in reqs {
            let (Some(q), Some(g)) = (self.qvnets.get(&r.qvnet), self.routing_graphs.get(&r.qvnet)) else {
                continue;
            };
            let Ok(path) = route_on(q, g, &r.src, &r.dst) else {
                continue;
            };
            for hop in path.hops() {
                *demand.entry((hop, r.qvnet.clone())).or_insert(0) += r.count;
            }
        }
        demand
    }

    /// Serves one request; partial grants are allowed.
    pub fn request_key(&mut self, req: &KeyRequest) -> Result<KeyGrant, KmsError> {
        if !self.qvnets.contains_key(&req.qvnet) {
            return Err(KmsError::QVNetNotFound(req.qvnet.clone()));
        }
        if req.count == 0 {
            return Err(KmsError::ZeroCount);
        }
        match self.current_tick {
            Some(current) if req.tick < current => {
                return Err(KmsError::StaleTick { tick: req.tick, current })
            }
            Some(current) if req.tick == current => {}
            _ => self.begin_tick(req.tick, None)?,
        }

        let mut entry = LedgerEntry {
            tick: req.tick,
            qvnet: req.qvnet.clone(),
            principal: req.principal.clone(),
            src: req.src.clone(),
            dst: req.dst.clone(),
            requested: req.count,
            granted: 0,
            denial: None,
            path: None,
            trunk_charges: BTreeMap::new(),
            phys_consumed: BTreeMap::new(),
            consumed_ids: Vec::new(),
        };
        let qvnet = &self.qvnets[&req.qvnet];
        let usage_key = (req.qvnet.clone(), req.principal.clone());
        let usage = self.usage.get(&usage_key).copied().unwrap_or(0);
        let pair = req.pair();

        if let Decision::Deny(reason) = authorize(qvnet, &req.principal, &pair, req.count, req.tick, usage) {
            return Ok(self.finish(req, entry, Vec::new(), Some(reason.into())));
        }
        let path = match route_on(qvnet, &self.routing_graphs[&req.qvnet], &req.src, &req.dst) {
            Ok(p) => p,
            Err(_) => return Ok(self.finish(req, entry, Vec::new(), Some(Denial::NoPath))),
        };

        // Every hop is charged to this QVNet's sub-connection on that hop's
        // trunk; a logical trunk on the end-to-end pair is charged as well.
        let mut charged: Vec<NodePair> = path.hops();
        let logical = self
            .trunks
            .get(&pair)
            .filter(|t| t.kind == TrunkKind::Logical && t.carries(&req.qvnet))
            .map(|t| t.pair.clone());
        charged.extend(logical);

        let mut grantable = req.count;
        for hop in &charged {
            let trunk = self.trunks.get(hop).ok_or_else(|| KmsError::UnknownTrunk(hop.clone()))?;
            let remaining = self.allowance(hop, &req.qvnet);
            let demand = BTreeMap::from([(req.qvnet.clone(), req.count)]);
            let grant = resolve_contention(trunk, &demand, remaining)?;
            let mut g = grant[&req.qvnet];
            if trunk.kind == TrunkKind::Physical {
                g = g.min(self.vault.available(hop));
            }
            grantable = grantable.min(g);
        }

        let mut transcripts = Vec::with_capacity(grantable as usize);
        for _ in 0..grantable {
            match keymat::xor_relay(&mut self.vault, &path, self.relay_mode) {
                Ok(t) => transcripts.push(t),
                Err(KeymatError::InsufficientKeys(_)) => break,
                Err(e) => return Err(e.into()),
            }
        }
        let granted = transcripts.len() as u64;
        for hop in &charged {
            let key = (hop.clone(), req.qvnet.clone());
            if let Some(a) = self.allowances.get_mut(&key) {
                *a -= granted.min(*a);
            }
            if let Some(b) = self.balances.get_mut(&key) {
                *b -= Rate::from_integer(granted as i64);
            }
            entry.trunk_charges.insert(hop.clone(), granted);
        }
        for hop in path.hops() {
            entry.phys_consumed.insert(hop, granted);
        }
        entry.consumed_ids = transcripts.iter().flat_map(|t| t.consumed_ids.iter().copied()).collect();
        entry.path = Some(path);
        *self.usage.entry(usage_key).or_insert(0) += granted;

        let denial = (granted < req.count).then_some(Denial::InsufficientKeys);
        Ok(self.finish(req, entry, transcripts, denial))
    }

    fn finish(
        &mut self,
        req: &KeyRequest,
        mut entry: LedgerEntry,
        transcripts: Vec<RelayTranscript>,
        denial: Option<Denial>,
    ) -> KeyGrant {
        entry.granted = transcripts.len() as u64;
        entry.denial = denial;
        self.ledger.push(entry);
        KeyGrant {
            request: req.clone(),
            granted: transcripts.len() as u64,
            transcripts,
            denial,
        }
    }

    /// Replaces a trunk's quota function and refreshes the QVNets on it.
    pub fn set_quotas(&mut self, pair: &NodePair, quotas: crate::virtlink::QuotaMap) -> Result<(), KmsError> {
        let trunk = self.trunks.get_mut(pair).ok_or_else(|| KmsError::UnknownTrunk(pair.clone()))?;
        crate::virtlink::split_trunk(trunk, &quotas)?;
        trunk.quotas = quotas;
        let trunk = trunk.clone();
        for q in self.qvnets.values_mut() {
            for link in q.qvlinks.iter_mut().filter(|l| &l.pair == pair) {
                if let Some(f) = trunk.quotas.get(&link.subconn) {
                    link.quota = *f;
                    link.rate = f * trunk.rate;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub requests: u64,
    pub requested: u64,
    pub granted: u64,
    pub phys_consumed: u64,
    /// Denied blocks by reason.
    pub denied: BTreeMap<Denial, u64>,
}

impl Totals {
    fn add(&mut self, e: &LedgerEntry) {
        self.requests += 1;
        self.requested += e.requested;
        self.granted += e.granted;
        self.phys_consumed += e.phys_total();
        if let Some(d) = e.denial {
            *self.denied.entry(d).or_insert(0) += e.requested - e.granted;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LedgerReport {
    pub total: Totals,
    pub per_qvnet: BTreeMap<SubConnectionId, Totals>,
    pub per_principal: BTreeMap<String, BTreeMap<SubConnectionId, Totals>>,
}

/// Aggregates ledger entries whose tick lies in `range`.
pub fn ledger_report(ledger: &[LedgerEntry], range: Range<u64>) -> LedgerReport {
    let mut report = LedgerReport::default();
    for e in ledger.iter().filter(|e| range.contains(&e.tick)) {
        report.total.add(e);
        report.per_qvnet.entry(e.qvnet.clone()).or_default().add(e);
        report
            .per_principal
            .entry(e.principal.clone())
            .or_default()
            .entry(e.qvnet.clone())
            .or_default()
            .add(e);
    }
    report
}
