//! Physical network graph and path enumeration.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_traits::Signed;
use serde::{Deserialize, Serialize};

use crate::rate::{self, Rate};

/// Hop bound used when a caller does not pick one.
pub const DEFAULT_MAX_HOPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("unknown node '{0}'")]
    UnknownNode(NodeId),
    #[error("duplicate node '{0}'")]
    DuplicateNode(NodeId),
    #[error("empty node name")]
    EmptyNodeName,
    #[error("duplicate link {0}")]
    DuplicateLink(NodePair),
    #[error("self loop on '{0}'")]
    SelfLoop(NodeId),
    #[error("negative rate {rate} on link {pair}")]
    NegativeRate { pair: NodePair, rate: String },
    #[error("source and destination are both '{0}'")]
    SameEndpoints(NodeId),
    #[error("max_hops must be at least 1")]
    ZeroHops,
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Unordered node pair, stored with the smaller id first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodePair {
    lo: NodeId,
    hi: NodeId,
}

impl NodePair {
    pub fn new(a: impl Into<NodeId>, b: impl Into<NodeId>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            NodePair { lo: a, hi: b }
        } else {
            NodePair { lo: b, hi: a }
        }
    }

    pub fn lo(&self) -> &NodeId {
        &self.lo
    }

    pub fn hi(&self) -> &NodeId {
        &self.hi
    }

    pub fn contains(&self, n: &NodeId) -> bool {
        &self.lo == n || &self.hi == n
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    /// The endpoint that is not `n`.
    pub fn other(&self, n: &NodeId) -> Option<&NodeId> {
        if &self.lo == n {
            Some(&self.hi)
        } else if &self.hi == n {
            Some(&self.lo)
        } else {
            None
        }
    }
}

impl From<(&str, &str)> for NodePair {
    fn from((a, b): (&str, &str)) -> Self {
        NodePair::new(a, b)
    }
}

impl fmt::Display for NodePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl Serialize for NodePair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [&self.lo, &self.hi].serialize(s)
    }
}

impl<'de> Deserialize<'de> for NodePair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [a, b] = <[NodeId; 2]>::deserialize(d)?;
        Ok(NodePair::new(a, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalLink {
    pub pair: NodePair,
    pub rate: Rate,
    pub distance_km: Option<f64>,
}

/// Input description of a graph, as found in a scenario document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(with = "rate::serde_rate")]
    pub rate: Rate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
}

impl LinkSpec {
    pub fn new(a: &str, b: &str, rate: Rate) -> Self {
        LinkSpec {
            a: a.to_string(),
            b: b.to_string(),
            rate,
            distance_km: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NetworkGraph {
    nodes: BTreeSet<NodeId>,
    links: BTreeMap<NodePair, PhysicalLink>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

/// Validates a [`GraphSpec`], stopping at the first error.
pub fn build_graph(spec: &GraphSpec) -> Result<NetworkGraph, TopologyError> {
    build_graph_collect(spec).map_err(|mut errs| errs.remove(0))
}

/// Like [`build_graph`] but reports every problem in a `GraphSpec`.
pub fn build_graph_collect(spec: &GraphSpec) -> Result<NetworkGraph, Vec<TopologyError>> {
    let mut errors = Vec::new();
    let mut g = NetworkGraph::default();
    for name in &spec.nodes {
        if name.is_empty() {
            errors.push(TopologyError::EmptyNodeName);
            continue;
        }
        let id = NodeId::new(name.as_str());
        if !g.nodes.insert(id.clone()) {
            errors.push(TopologyError::DuplicateNode(id));
            continue;
        }
        g.adjacency.insert(id, BTreeSet::new());
    }
    for link in &spec.links {
        let (a, b) = (NodeId::new(link.a.as_str()), NodeId::new(link.b.as_str()));
        let pair = NodePair::new(a.clone(), b.clone());
        let mut ok = true;
        for n in [&a, &b] {
            if !g.nodes.contains(n) {
                errors.push(TopologyError::UnknownNode(n.clone()));
                ok = false;
            }
        }
        if a == b {
            errors.push(TopologyError::SelfLoop(a.clone()));
            ok = false;
        }
        if link.rate.is_negative() {
            errors.push(TopologyError::NegativeRate {
                pair: pair.clone(),
                rate: rate::format_rate(&link.rate),
            });
            ok = false;
        }
        if g.links.contains_key(&pair) {
            errors.push(TopologyError::DuplicateLink(pair.clone()));
            ok = false;
        }
        if !ok {
            continue;
        }
        g.adjacency.entry(a.clone()).or_default().insert(b.clone());
        g.adjacency.entry(b).or_default().insert(a);
        g.links.insert(
            pair.clone(),
            PhysicalLink {
                pair,
                rate: link.rate,
                distance_km: link.distance_km,
            },
        );
    }
    if errors.is_empty() {
        Ok(g)
    } else {
        Err(errors)
    }
}

impl NetworkGraph {
    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    pub fn links(&self) -> impl Iterator<Item = &PhysicalLink> {
        self.links.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn contains(&self, n: &NodeId) -> bool {
        self.nodes.contains(n)
    }

    pub fn link(&self, pair: &NodePair) -> Option<&PhysicalLink> {
        self.links.get(pair)
    }

    pub fn neighbors(&self, n: &NodeId) -> impl Iterator<Item = &NodeId> {
        self.adjacency.get(n).into_iter().flatten()
    }

    fn require(&self, n: &NodeId) -> Result<(), TopologyError> {
        if self.nodes.contains(n) {
            Ok(())
        } else {
            Err(TopologyError::UnknownNode(n.clone()))
        }
    }

    /// Restriction of this graph to the given links. Nodes are the link endpoints.
    pub fn subgraph<'a>(&self, pairs: impl IntoIterator<Item = &'a NodePair>) -> NetworkGraph {
        let mut g = NetworkGraph::default();
        for pair in pairs {
            let Some(link) = self.links.get(pair) else {
                continue;
            };
            for n in [&pair.lo, &pair.hi] {
                g.nodes.insert(n.clone());
            }
            g.adjacency.entry(pair.lo.clone()).or_default().insert(pair.hi.clone());
            g.adjacency.entry(pair.hi.clone()).or_default().insert(pair.lo.clone());
            g.links.insert(pair.clone(), link.clone());
        }
        g
    }

    /// Fewest-hop path with lexicographic tie-break on the node sequence.
    pub fn shortest_path(&self, src: &NodeId, dst: &NodeId) -> Result<Option<Path>, TopologyError> {
        self.require(src)?;
        self.require(dst)?;
        if src == dst {
            return Err(TopologyError::SameEndpoints(src.clone()));
        }
        // Distances to dst, then walk greedily from src picking the smallest
        // neighbour that stays on a shortest path.
        let mut dist: BTreeMap<&NodeId, usize> = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(dst, 0);
        queue.push_back(dst);
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            for m in self.neighbors(n) {
                if !dist.contains_key(m) {
                    dist.insert(m, d + 1);
                    queue.push_back(m);
                }
            }
        }
        let Some(&total) = dist.get(src) else {
            return Ok(None);
        };
        let mut nodes = vec![src.clone()];
        let mut cur = src;
        for remaining in (0..total).rev() {
            let next = self
                .neighbors(cur)
                .find(|m| dist.get(m) == Some(&remaining))
                .expect("bfs layer has a successor");
            nodes.push(next.clone());
            cur = next;
        }
        Ok(Some(Path { nodes }))
    }
}

/// Simple path through the graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    nodes: Vec<NodeId>,
}

impl Path {
    /// Checks simplicity and that every hop is a link of `g`.
    pub fn new(g: &NetworkGraph, nodes: Vec<NodeId>) -> Result<Path, TopologyError> {
        let path = Path::unchecked(nodes)?;
        for n in &path.nodes {
            g.require(n)?;
        }
        for hop in path.hops() {
            if g.link(&hop).is_none() {
                return Err(TopologyError::InvalidPath(format!("no link {hop}")));
            }
        }
        Ok(path)
    }

    /// Checks only the shape: at least one hop and no repeated node.
    pub fn unchecked(nodes: Vec<NodeId>) -> Result<Path, TopologyError> {
        if nodes.len() < 2 {
            return Err(TopologyError::InvalidPath("a path needs at least one hop".into()));
        }
        let distinct: BTreeSet<_> = nodes.iter().collect();
        if distinct.len() != nodes.len() {
            return Err(TopologyError::InvalidPath("repeated node".into()));
        }
        Ok(Path { nodes })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn source(&self) -> &NodeId {
        &self.nodes[0]
    }

    pub fn destination(&self) -> &NodeId {
        &self.nodes[self.nodes.len() - 1]
    }

    pub fn hop_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn hops(&self) -> Vec<NodePair> {
        self.nodes
            .windows(2)
            .map(|w| NodePair::new(w[0].clone(), w[1].clone()))
            .collect()
    }

    pub fn endpoints(&self) -> NodePair {
        NodePair::new(self.source().clone(), self.destination().clone())
    }

    pub fn reversed(&self) -> Path {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        Path { nodes }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// All simple paths from `src` to `dst` with at most `max_hops` hops,
/// sorted by hop count and then node sequence.
pub fn enumerate_paths(
    g: &NetworkGraph,
    src: &NodeId,
    dst: &NodeId,
    max_hops: usize,
) -> Result<Vec<Path>, TopologyError> {
    g.require(src)?;
    g.require(dst)?;
    if src == dst {
        return Err(TopologyError::SameEndpoints(src.clone()));
    }
    if max_hops == 0 {
        return Err(TopologyError::ZeroHops);
    }
    let mut out = Vec::new();
    let mut stack = vec![src.clone()];
    let mut on_path = BTreeSet::from([src.clone()]);
    extend_paths(g, dst, max_hops, &mut stack, &mut on_path, &mut out);
    out.sort_by(|a, b| a.hop_count().cmp(&b.hop_count()).then_with(|| a.nodes.cmp(&b.nodes)));
    Ok(out)
}

fn extend_paths(
    g: &NetworkGraph,
    dst: &NodeId,
    max_hops: usize,
    stack: &mut Vec<NodeId>,
    on_path: &mut BTreeSet<NodeId>,
    out: &mut Vec<Path>,
) {
    let cur = stack.last().expect("stack starts with src").clone();
    if &cur == dst {
        out.push(Path { nodes: stack.clone() });
        return;
    }
    if stack.len() > max_hops {
        return;
    }
    for next in g.neighbors(&cur) {
        if on_path.contains(next) {
            continue;
        }
        on_path.insert(next.clone());
        stack.push(next.clone());
        extend_paths(g, dst, max_hops, stack, on_path, out);
        stack.pop();
        on_path.remove(next);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reachability {
    pub a: NodeId,
    pub b: NodeId,
    pub reachable: bool,
}

/// Reachability flag for every requested pair, in input order.
pub fn validate_connectivity(
    g: &NetworkGraph,
    pairs: &[(NodeId, NodeId)],
) -> Result<Vec<Reachability>, TopologyError> {
    let mut component: BTreeMap<&NodeId, usize> = BTreeMap::new();
    let mut next = 0;
    for start in &g.nodes {
        if component.contains_key(start) {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        component.insert(start, next);
        while let Some(n) = queue.pop_front() {
            for m in g.neighbors(n) {
                if !component.contains_key(m) {
                    component.insert(m, next);
                    queue.push_back(m);
                }
            }
        }
        next += 1;
    }
    pairs
        .iter()
        .map(|(a, b)| {
            let ca = component.get(a).ok_or_else(|| TopologyError::UnknownNode(a.clone()))?;
            let cb = component.get(b).ok_or_else(|| TopologyError::UnknownNode(b.clone()))?;
            Ok(Reachability {
                a: a.clone(),
                b: b.clone(),
                reachable: ca == cb,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::int;

    fn graph(nodes: &[&str], links: &[(&str, &str, i64)]) -> NetworkGraph {
        build_graph(&GraphSpec {
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            links: links.iter().map(|&(a, b, r)| LinkSpec::new(a, b, int(r))).collect(),
        })
        .unwrap()
    }

    fn names(p: &Path) -> String {
        p.to_string()
    }

    #[test]
    fn minimal_graph() {
        let g = graph(&["A", "B"], &[("A", "B", 4)]);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.link_count(), 1);
        assert_eq!(g.link(&("B", "A").into()).unwrap().rate, int(4));
    }

    #[test]
    fn self_loop_rejected() {
        let spec = GraphSpec {
            nodes: vec!["A".into()],
            links: vec![LinkSpec::new("A", "A", int(1))],
        };
        assert_eq!(build_graph(&spec).unwrap_err(), TopologyError::SelfLoop("A".into()));
    }

    #[test]
    fn three_node_chain() {
        let g = graph(&["A", "B", "C"], &[("A", "B", 2), ("B", "C", 2)]);
        assert_eq!(g.node_count(), 3);
        assert!(g.link(&("A", "C").into()).is_none());
    }

    #[test]
    fn build_errors_are_all_reported() {
        let spec = GraphSpec {
            nodes: vec!["A".into(), "B".into(), "A".into()],
            links: vec![
                LinkSpec::new("A", "Z", int(1)),
                LinkSpec::new("A", "B", int(-1)),
                LinkSpec::new("A", "B", int(1)),
                LinkSpec::new("B", "A", int(1)),
            ],
        };
        let errs = build_graph_collect(&spec).unwrap_err();
        assert_eq!(
            errs,
            vec![
                TopologyError::DuplicateNode("A".into()),
                TopologyError::UnknownNode("Z".into()),
                TopologyError::NegativeRate {
                    pair: ("A", "B").into(),
                    rate: "-1".into()
                },
                TopologyError::DuplicateLink(("A", "B").into()),
            ]
        );
    }

    #[test]
    fn chain_has_unique_path() {
        let g = graph(&["A", "B", "C"], &[("A", "B", 2), ("B", "C", 2)]);
        let paths = enumerate_paths(&g, &"A".into(), &"C".into(), 4).unwrap();
        assert_eq!(paths.iter().map(names).collect::<Vec<_>>(), ["A-B-C"]);
    }

    #[test]
    fn diamond_paths_in_order() {
        let g = graph(
            &["A", "B", "C", "D"],
            &[("A", "B", 1), ("A", "C", 1), ("B", "D", 1), ("C", "D", 1)],
        );
        let paths = enumerate_paths(&g, &"A".into(), &"D".into(), 4).unwrap();
        assert_eq!(paths.iter().map(names).collect::<Vec<_>>(), ["A-B-D", "A-C-D"]);
        let sp = g.shortest_path(&"A".into(), &"D".into()).unwrap().unwrap();
        assert_eq!(names(&sp), "A-B-D");
    }

    #[test]
    fn disconnected_pair_has_no_paths() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "B", 1), ("C", "D", 1)]);
        assert!(enumerate_paths(&g, &"A".into(), &"D".into(), 8).unwrap().is_empty());
        assert!(g.shortest_path(&"A".into(), &"D".into()).unwrap().is_none());
    }

    #[test]
    fn enumerate_rejects_bad_arguments() {
        let g = graph(&["A", "B"], &[("A", "B", 1)]);
        assert!(matches!(
            enumerate_paths(&g, &"A".into(), &"Q".into(), 3),
            Err(TopologyError::UnknownNode(_))
        ));
        assert!(matches!(
            enumerate_paths(&g, &"A".into(), &"A".into(), 3),
            Err(TopologyError::SameEndpoints(_))
        ));
    }

    #[test]
    fn max_hops_bounds_paths() {
        let g = graph(
            &["A", "B", "C", "D"],
            &[("A", "B", 1), ("B", "C", 1), ("C", "D", 1), ("A", "D", 1)],
        );
        let paths = enumerate_paths(&g, &"A".into(), &"D".into(), 2).unwrap();
        assert_eq!(paths.iter().map(names).collect::<Vec<_>>(), ["A-D"]);
    }

    #[test]
    fn connectivity_report() {
        let g = graph(&["A", "B", "C", "X", "Y"], &[("A", "B", 1), ("B", "C", 1), ("X", "Y", 1)]);
        let r = validate_connectivity(&g, &[("A".into(), "C".into()), ("A".into(), "Y".into())]).unwrap();
        assert!(r[0].reachable);
        assert!(!r[1].reachable);
        assert!(validate_connectivity(&g, &[]).unwrap().is_empty());
        assert!(validate_connectivity(&g, &[("A".into(), "Q".into())]).is_err());
    }

    #[test]
    fn path_validation() {
        let g = graph(&["A", "B", "C"], &[("A", "B", 1), ("B", "C", 1)]);
        assert!(Path::new(&g, vec!["A".into(), "C".into()]).is_err());
        assert!(Path::new(&g, vec!["A".into()]).is_err());
        assert!(Path::new(&g, vec!["A".into(), "B".into(), "A".into()]).is_err());
        let p = Path::new(&g, vec!["C".into(), "B".into(), "A".into()]).unwrap();
        assert_eq!(p.hops(), vec![("B", "C").into(), ("A", "B").into()]);
        assert_eq!(p.reversed().to_string(), "A-B-C");
    }
}
