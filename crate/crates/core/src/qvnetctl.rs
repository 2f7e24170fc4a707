//! QVNets: the subgraph of all QVLinks sharing one sub-connection id, plus
//! the policy bundle the KMS enforces for it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::topology::{NodeId, NodePair, Path};
use crate::virtlink::{QVLink, SubConnectionId, TrunkKind, TrunkLink};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    /// Max-min key rate over all member pairs.
    Balanced,
    /// Max-min key rate between `hub` and every other member.
    Broadcast { hub: NodeId },
    /// Max key rate between the two nodes of `pair`.
    HighThroughput { pair: NodePair },
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Balanced => "balanced",
            Behavior::Broadcast { .. } => "broadcast",
            Behavior::HighThroughput { .. } => "high_throughput",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingKind {
    #[default]
    ShortestPath,
    StaticMap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingPolicy {
    pub kind: RoutingKind,
    /// Keyed by unordered endpoint pair; the stored path may run either way.
    pub static_routes: BTreeMap<NodePair, Path>,
}

impl RoutingPolicy {
    pub fn static_map(routes: impl IntoIterator<Item = Path>) -> Self {
        RoutingPolicy {
            kind: RoutingKind::StaticMap,
            static_routes: routes.into_iter().map(|p| (p.endpoints(), p)).collect(),
        }
    }
}

/// Pairs a rule applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairScope {
    Any,
    Only(BTreeSet<NodePair>),
}

impl PairScope {
    pub fn covers(&self, pair: &NodePair) -> bool {
        match self {
            PairScope::Any => true,
            PairScope::Only(set) => set.contains(pair),
        }
    }
}

/// Principal `"*"` matches everyone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRule {
    pub principal: String,
    pub pairs: PairScope,
    pub max_blocks_per_tick: u64,
}

pub const ANY_PRINCIPAL: &str = "*";

impl AccessRule {
    pub fn new(principal: &str, pairs: PairScope, max_blocks_per_tick: u64) -> Self {
        AccessRule {
            principal: principal.to_string(),
            pairs,
            max_blocks_per_tick,
        }
    }

    pub fn matches(&self, principal: &str, pair: &NodePair) -> bool {
        (self.principal == principal || self.principal == ANY_PRINCIPAL) && self.pairs.covers(pair)
    }
}

/// Half-open tick window `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickWindow {
    pub from: u64,
    pub to: u64,
}

impl TickWindow {
    pub fn contains(&self, tick: u64) -> bool {
        self.from <= tick && tick < self.to
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QVNet {
    pub id: SubConnectionId,
    pub qvlinks: Vec<QVLink>,
    pub behavior: Behavior,
    pub routing: RoutingPolicy,
    pub access: Vec<AccessRule>,
    /// Empty means always open.
    pub schedule: Vec<TickWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    AccessDenied,
    QuotaExceeded,
    ScheduleClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

/// A freshly assembled QVNet and whether it came out empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub qvnet: QVNet,
    pub empty: bool,
}

/// Collects the QVLinks for `id` from every trunk carrying it.
/// Policy fields start at their defaults: balanced, shortest path, no
/// access rules, always open.
pub fn assemble_qvnet(trunks: &[TrunkLink], id: &SubConnectionId) -> Assembled {
    let mut qvlinks: Vec<QVLink> = trunks
        .iter()
        .filter_map(|t| {
            let quota = *t.quotas.get(id)?;
            Some(QVLink {
                pair: t.pair.clone(),
                subconn: id.clone(),
                kind: t.kind,
                quota,
                rate: quota * t.rate,
                trunk_rate: t.rate,
            })
        })
        .collect();
    qvlinks.sort_by(|a, b| (a.kind == TrunkKind::Logical, &a.pair).cmp(&(b.kind == TrunkKind::Logical, &b.pair)));
    let empty = qvlinks.is_empty();
    Assembled {
        qvnet: QVNet {
            id: id.clone(),
            qvlinks,
            behavior: Behavior::Balanced,
            routing: RoutingPolicy::default(),
            access: Vec::new(),
            schedule: Vec::new(),
        },
        empty,
    }
}

/// Union of QVLink endpoints.
pub fn member_nodes(qvnet: &QVNet) -> BTreeSet<NodeId> {
    qvnet
        .qvlinks
        .iter()
        .flat_map(|q| [q.pair.lo().clone(), q.pair.hi().clone()])
        .collect()
}

/// Access, then per-tick quota, then schedule. Pure.
///
/// When several rules match, the most permissive quota applies.
pub fn authorize(
    qvnet: &QVNet,
    principal: &str,
    pair: &NodePair,
    count: u64,
    tick: u64,
    usage_this_tick: u64,
) -> Decision {
    let Some(limit) = qvnet
        .access
        .iter()
        .filter(|r| r.matches(principal, pair))
        .map(|r| r.max_blocks_per_tick)
        .max()
    else {
        return Decision::Deny(DenyReason::AccessDenied);
    };
    if usage_this_tick.saturating_add(count) > limit {
        return Decision::Deny(DenyReason::QuotaExceeded);
    }
    if !qvnet.schedule.is_empty() && !qvnet.schedule.iter().any(|w| w.contains(tick)) {
        return Decision::Deny(DenyReason::ScheduleClosed);
    }
    Decision::Allow
}

impl QVNet {
    pub fn physical_links(&self) -> impl Iterator<Item = &QVLink> {
        self.qvlinks.iter().filter(|q| q.kind == TrunkKind::Physical)
    }

    pub fn logical_links(&self) -> impl Iterator<Item = &QVLink> {
        self.qvlinks.iter().filter(|q| q.kind == TrunkKind::Logical)
    }

    /// Every QVLink rate is within its trunk's rate.
    pub fn is_subgraph(&self) -> bool {
        self.qvlinks.iter().all(|q| q.rate <= q.trunk_rate)
    }

    pub fn qvlink(&self, pair: &NodePair, kind: TrunkKind) -> Option<&QVLink> {
        self.qvlinks.iter().find(|q| &q.pair == pair && q.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::{frac, int};

    fn trunk(a: &str, b: &str, ids: &[&str]) -> TrunkLink {
        ids.iter().fold(
            TrunkLink::new((a, b).into(), TrunkKind::Physical, int(8)),
            |t, id| t.with_quota(id, frac(1, 4)),
        )
    }

    fn open_net(rules: Vec<AccessRule>, schedule: Vec<TickWindow>) -> QVNet {
        let mut q = assemble_qvnet(&[trunk("A", "B", &["red"])], &"red".into()).qvnet;
        q.access = rules;
        q.schedule = schedule;
        q
    }

    #[test]
    fn full_membership() {
        let trunks = [
            trunk("A", "B", &["red"]),
            trunk("B", "C", &["red"]),
            trunk("C", "D", &["red"]),
            trunk("A", "D", &["red"]),
        ];
        let a = assemble_qvnet(&trunks, &"red".into());
        assert_eq!(a.qvnet.qvlinks.len(), 4);
        assert!(!a.empty);
        assert!(a.qvnet.is_subgraph());
        assert!(a.qvnet.qvlinks.iter().all(|q| q.rate == int(2)));
    }

    #[test]
    fn absent_id_gives_flagged_empty_net() {
        let a = assemble_qvnet(&[trunk("A", "B", &["red"])], &"green".into());
        assert!(a.empty);
        assert!(member_nodes(&a.qvnet).is_empty());
    }

    #[test]
    fn mixed_membership() {
        let trunks = [
            trunk("A", "B", &["red", "blue"]),
            trunk("B", "C", &["red"]),
            trunk("C", "D", &["red", "blue"]),
            trunk("A", "D", &["red"]),
        ];
        let a = assemble_qvnet(&trunks, &"blue".into());
        let pairs: Vec<String> = a.qvnet.qvlinks.iter().map(|q| q.pair.to_string()).collect();
        assert_eq!(pairs, ["A-B", "C-D"]);
    }

    #[test]
    fn members_from_links() {
        let trunks = [trunk("A", "B", &["red"]), trunk("B", "C", &["red"])];
        let q = assemble_qvnet(&trunks, &"red".into()).qvnet;
        let members = member_nodes(&q);
        let names: Vec<&str> = members.iter().map(|n| n.as_str()).collect();
        assert_eq!(names, ["A", "B", "C"]);
        let single = assemble_qvnet(&[trunk("X", "Y", &["s"])], &"s".into()).qvnet;
        assert_eq!(member_nodes(&single).len(), 2);
    }

    #[test]
    fn authorize_examples() {
        let q = open_net(
            vec![AccessRule::new("alice", PairScope::Any, 10)],
            vec![TickWindow { from: 0, to: 100 }],
        );
        let ab: NodePair = ("A", "B").into();
        assert_eq!(authorize(&q, "alice", &ab, 5, 0, 0), Decision::Allow);
        assert_eq!(
            authorize(&q, "alice", &ab, 6, 0, 5),
            Decision::Deny(DenyReason::QuotaExceeded)
        );
        assert_eq!(
            authorize(&q, "alice", &ab, 1, 100, 0),
            Decision::Deny(DenyReason::ScheduleClosed)
        );
        assert_eq!(authorize(&q, "alice", &ab, 1, 99, 0), Decision::Allow);
        assert_eq!(
            authorize(&q, "bob", &ab, 1, 0, 0),
            Decision::Deny(DenyReason::AccessDenied)
        );
    }

    #[test]
    fn pair_scoped_rules_and_permissive_union() {
        let ab: NodePair = ("A", "B").into();
        let q = open_net(
            vec![
                AccessRule::new("alice", PairScope::Only([ab.clone()].into()), 2),
                AccessRule::new("*", PairScope::Any, 5),
            ],
            vec![],
        );
        assert_eq!(authorize(&q, "alice", &ab, 4, 0, 0), Decision::Allow);
        assert_eq!(authorize(&q, "carol", &ab, 5, 7, 0), Decision::Allow);
        let scoped = open_net(vec![AccessRule::new("alice", PairScope::Only([ab].into()), 2)], vec![]);
        assert_eq!(
            authorize(&scoped, "alice", &("A", "C").into(), 1, 0, 0),
            Decision::Deny(DenyReason::AccessDenied)
        );
    }
}
