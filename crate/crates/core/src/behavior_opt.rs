//! Key-forwarding behaviors as path-based multi-commodity flow LPs.
//!
//! Each target pair is a commodity; each candidate simple path of the
//! QVNet subgraph carries a nonnegative flow variable. Link loads are
//! bounded by the QVLink rates. The balanced and broadcast behaviors
//! maximize the smallest commodity rate `t`; high-throughput maximizes the
//! rate of its single pair. Solving is exact over rationals.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::qvnetctl::{member_nodes, Behavior, QVNet};
use crate::rate::{self, Rate};
use crate::simplex::{LinearProgram, SimplexError, DEFAULT_PIVOT_LIMIT};
use crate::topology::{build_graph, enumerate_paths, GraphSpec, LinkSpec, NodeId, NodePair, Path};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BehaviorError {
    #[error("QVNet '{0}' has no links")]
    EmptyQVNet(String),
    #[error("no path for commodity {0}")]
    NoPath(NodePair),
    #[error("node '{0}' is not a member of the QVNet")]
    NotMember(NodeId),
    #[error("no capacity given for link {0}")]
    MissingCapacity(NodePair),
    #[error("solver failed: {0}")]
    NumericalFailure(String),
}

/// A target pair, oriented from the first node to the second for display.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Commodity {
    pub src: NodeId,
    pub dst: NodeId,
}

impl Commodity {
    pub fn pair(&self) -> NodePair {
        NodePair::new(self.src.clone(), self.dst.clone())
    }
}

/// Target pairs for a behavior over the given members.
pub fn commodity_set(
    behavior: &Behavior,
    members: &BTreeSet<NodeId>,
) -> Result<Vec<Commodity>, BehaviorError> {
    let require = |n: &NodeId| {
        if members.contains(n) {
            Ok(())
        } else {
            Err(BehaviorError::NotMember(n.clone()))
        }
    };
    Ok(match behavior {
        Behavior::Balanced => {
            let nodes: Vec<&NodeId> = members.iter().collect();
            let mut out = Vec::new();
            for (i, a) in nodes.iter().enumerate() {
                for b in &nodes[i + 1..] {
                    out.push(Commodity {
                        src: (*a).clone(),
                        dst: (*b).clone(),
                    });
                }
            }
            out
        }
        Behavior::Broadcast { hub } => {
            require(hub)?;
            members
                .iter()
                .filter(|n| *n != hub)
                .map(|n| Commodity {
                    src: hub.clone(),
                    dst: n.clone(),
                })
                .collect()
        }
        Behavior::HighThroughput { pair } => {
            require(pair.lo())?;
            require(pair.hi())?;
            vec![Commodity {
                src: pair.lo().clone(),
                dst: pair.hi().clone(),
            }]
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Maximize `t` with every commodity rate at least `t`.
    MaxMin,
    /// Maximize the rate of the single commodity.
    MaxRate,
}

#[derive(Debug, Clone)]
pub struct CommodityPaths {
    pub commodity: Commodity,
    pub paths: Vec<Path>,
    /// Upper bound from a logical QVLink on the same pair, if any.
    pub rate_cap: Option<Rate>,
}

#[derive(Debug, Clone)]
pub struct LpInstance {
    pub qvnet: String,
    pub behavior: Behavior,
    pub objective: Objective,
    pub commodities: Vec<CommodityPaths>,
    /// Effective capacity of every link some candidate path uses.
    pub capacities: BTreeMap<NodePair, Rate>,
}

impl LpInstance {
    pub fn variable_count(&self) -> usize {
        self.commodities.iter().map(|c| c.paths.len()).sum()
    }

    pub fn capacity_constraint_count(&self) -> usize {
        self.capacities.len()
    }
}

/// QVLink rates of the QVNet's physical links: the capacities it plans with.
pub fn qvnet_capacities(qvnet: &QVNet) -> BTreeMap<NodePair, Rate> {
    qvnet.physical_links().map(|q| (q.pair.clone(), q.rate)).collect()
}

pub fn build_lp(
    qvnet: &QVNet,
    behavior: &Behavior,
    capacities: &BTreeMap<NodePair, Rate>,
    max_hops: usize,
) -> Result<LpInstance, BehaviorError> {
    if qvnet.qvlinks.is_empty() {
        return Err(BehaviorError::EmptyQVNet(qvnet.id.to_string()));
    }
    let members = member_nodes(qvnet);
    let commodities = commodity_set(behavior, &members)?;

    let mut spec = GraphSpec {
        nodes: members.iter().map(|n| n.to_string()).collect(),
        links: Vec::new(),
    };
    let mut caps = BTreeMap::new();
    for q in qvnet.physical_links() {
        let cap = capacities
            .get(&q.pair)
            .ok_or_else(|| BehaviorError::MissingCapacity(q.pair.clone()))?;
        spec.links
            .push(LinkSpec::new(q.pair.lo().as_str(), q.pair.hi().as_str(), *cap));
        caps.insert(q.pair.clone(), *cap);
    }
    let graph = build_graph(&spec).map_err(|e| BehaviorError::NumericalFailure(e.to_string()))?;
    let logical: BTreeMap<NodePair, Rate> = qvnet.logical_links().map(|q| (q.pair.clone(), q.rate)).collect();

    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(commodities.len());
    for c in commodities {
        let paths = enumerate_paths(&graph, &c.src, &c.dst, max_hops)
            .map_err(|e| BehaviorError::NumericalFailure(e.to_string()))?;
        if paths.is_empty() {
            return Err(BehaviorError::NoPath(c.pair()));
        }
        for p in &paths {
            used.extend(p.hops());
        }
        let rate_cap = logical.get(&c.pair()).copied();
        out.push(CommodityPaths {
            commodity: c,
            paths,
            rate_cap,
        });
    }
    caps.retain(|pair, _| used.contains(pair));

    Ok(LpInstance {
        qvnet: qvnet.id.to_string(),
        behavior: behavior.clone(),
        objective: match behavior {
            Behavior::HighThroughput { .. } => Objective::MaxRate,
            _ => Objective::MaxMin,
        },
        commodities: out,
        capacities: caps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFlow {
    pub path: Path,
    pub flow: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommodityAllocation {
    pub commodity: Commodity,
    pub rate: BigRational,
    pub paths: Vec<PathFlow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub qvnet: String,
    pub behavior: Behavior,
    pub objective: BigRational,
    pub commodities: Vec<CommodityAllocation>,
}

impl Allocation {
    /// Load per link implied by the path flows.
    pub fn link_loads(&self) -> BTreeMap<NodePair, BigRational> {
        let mut loads: BTreeMap<NodePair, BigRational> = BTreeMap::new();
        for c in &self.commodities {
            for pf in &c.paths {
                for hop in pf.path.hops() {
                    *loads.entry(hop).or_insert_with(BigRational::zero) += &pf.flow;
                }
            }
        }
        loads
    }

    pub fn objective_f64(&self) -> f64 {
        rate::big_to_f64(&self.objective)
    }
}

pub fn solve_behavior(lp: &LpInstance) -> Result<Allocation, BehaviorError> {
    solve_with_limit(lp, DEFAULT_PIVOT_LIMIT)
}

pub fn solve_with_limit(lp: &LpInstance, pivot_limit: usize) -> Result<Allocation, BehaviorError> {
    let one = BigRational::from_integer(BigInt::from(1));
    let path_vars = lp.variable_count();
    let t = path_vars;
    let num_vars = match lp.objective {
        Objective::MaxMin => path_vars + 1,
        Objective::MaxRate => path_vars,
    };
    let mut program = LinearProgram::new(num_vars);

    let mut first_var = Vec::with_capacity(lp.commodities.len());
    let mut next = 0;
    for c in &lp.commodities {
        first_var.push(next);
        next += c.paths.len();
    }

    let mut link_rows: BTreeMap<&NodePair, Vec<(usize, BigRational)>> =
        lp.capacities.keys().map(|k| (k, Vec::new())).collect();
    for (ci, c) in lp.commodities.iter().enumerate() {
        for (pi, p) in c.paths.iter().enumerate() {
            for hop in p.hops() {
                link_rows
                    .get_mut(&hop)
                    .ok_or_else(|| BehaviorError::MissingCapacity(hop.clone()))?
                    .push((first_var[ci] + pi, one.clone()));
            }
        }
    }
    for (pair, row) in link_rows {
        program.add_le(row, rate::big(&lp.capacities[pair]));
    }

    for (ci, c) in lp.commodities.iter().enumerate() {
        let vars: Vec<(usize, BigRational)> =
            (0..c.paths.len()).map(|pi| (first_var[ci] + pi, one.clone())).collect();
        if let Some(cap) = &c.rate_cap {
            program.add_le(vars.clone(), rate::big(cap));
        }
        if lp.objective == Objective::MaxMin {
            // t - sum(paths) <= 0
            let mut row: Vec<(usize, BigRational)> = vars.into_iter().map(|(j, c)| (j, -c)).collect();
            row.push((t, one.clone()));
            program.add_le(row, BigRational::zero());
        }
    }

    program.objective = match lp.objective {
        Objective::MaxMin => vec![(t, one.clone())],
        Objective::MaxRate => (0..path_vars).map(|j| (j, one.clone())).collect(),
    };

    let solution = program.maximize(pivot_limit).map_err(|e| match e {
        SimplexError::IterationLimit(_) | SimplexError::Unbounded | SimplexError::NegativeRhs(_) => {
            BehaviorError::NumericalFailure(e.to_string())
        }
    })?;

    let commodities = lp
        .commodities
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let paths: Vec<PathFlow> = c
                .paths
                .iter()
                .enumerate()
                .map(|(pi, p)| PathFlow {
                    path: p.clone(),
                    flow: solution.x[first_var[ci] + pi].clone(),
                })
                .collect();
            let rate = paths.iter().map(|pf| pf.flow.clone()).sum();
            CommodityAllocation {
                commodity: c.commodity.clone(),
                rate,
                paths,
            }
        })
        .collect();

    Ok(Allocation {
        qvnet: lp.qvnet.clone(),
        behavior: lp.behavior.clone(),
        objective: solution.value,
        commodities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NegativeFlow { commodity: NodePair, path: String },
    UnknownLink { link: NodePair },
    Capacity { link: NodePair, load: String, capacity: String },
    RateSum { commodity: NodePair },
    RateCap { commodity: NodePair },
    Objective { expected: String, reported: String },
    CommodityMismatch,
}

/// Independent feasibility check of an allocation against an instance.
///
/// Recomputes link loads from the allocation's paths rather than from the
/// solver's variables.
pub fn verify_allocation(alloc: &Allocation, lp: &LpInstance) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if alloc.commodities.len() != lp.commodities.len()
        || alloc
            .commodities
            .iter()
            .zip(&lp.commodities)
            .any(|(a, b)| a.commodity != b.commodity)
    {
        violations.push(Violation::CommodityMismatch);
    }

    let mut loads: BTreeMap<NodePair, BigRational> = BTreeMap::new();
    for c in &alloc.commodities {
        let mut sum = BigRational::zero();
        for pf in &c.paths {
            if pf.flow.is_negative() {
                violations.push(Violation::NegativeFlow {
                    commodity: c.commodity.pair(),
                    path: pf.path.to_string(),
                });
            }
            sum += &pf.flow;
            let nodes = pf.path.nodes();
            for w in nodes.windows(2) {
                let hop = NodePair::new(w[0].clone(), w[1].clone());
                let entry = loads.entry(hop).or_insert_with(BigRational::zero);
                *entry = &*entry + &pf.flow;
            }
        }
        if sum != c.rate {
            violations.push(Violation::RateSum {
                commodity: c.commodity.pair(),
            });
        }
    }
    for (cp, c) in lp.commodities.iter().zip(&alloc.commodities) {
        if let Some(cap) = &cp.rate_cap {
            if c.rate > rate::big(cap) {
                violations.push(Violation::RateCap {
                    commodity: c.commodity.pair(),
                });
            }
        }
    }
    for (link, load) in &loads {
        match lp.capacities.get(link) {
            None if load.is_zero() => {}
            None => violations.push(Violation::UnknownLink { link: link.clone() }),
            Some(cap) => {
                let cap = rate::big(cap);
                if load > &cap {
                    violations.push(Violation::Capacity {
                        link: link.clone(),
                        load: rate::format_big(load),
                        capacity: rate::format_big(&cap),
                    });
                }
            }
        }
    }
    let expected = match lp.objective {
        Objective::MaxMin => alloc.commodities.iter().map(|c| c.rate.clone()).min(),
        Objective::MaxRate => alloc.commodities.first().map(|c| c.rate.clone()),
    }
    .unwrap_or_else(BigRational::zero);
    if expected != alloc.objective {
        violations.push(Violation::Objective {
            expected: rate::format_big(&expected),
            reported: rate::format_big(&alloc.objective),
        });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

struct BigJson<'a>(&'a BigRational);

impl Serialize for BigJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rate::format_big(self.0))
    }
}

impl Serialize for PathFlow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("PathFlow", 3)?;
        st.serialize_field("path", &self.path)?;
        st.serialize_field("flow", &BigJson(&self.flow))?;
        st.serialize_field("flow_f64", &rate::big_to_f64(&self.flow))?;
        st.end()
    }
}

impl Serialize for CommodityAllocation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("CommodityAllocation", 5)?;
        st.serialize_field("src", &self.commodity.src)?;
        st.serialize_field("dst", &self.commodity.dst)?;
        st.serialize_field("rate", &BigJson(&self.rate))?;
        st.serialize_field("rate_f64", &rate::big_to_f64(&self.rate))?;
        st.serialize_field("paths", &self.paths)?;
        st.end()
    }
}

impl Serialize for Allocation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Allocation", 6)?;
        st.serialize_field("qvnet", &self.qvnet)?;
        st.serialize_field("behavior", &self.behavior)?;
        st.serialize_field("objective", &BigJson(&self.objective))?;
        st.serialize_field("objective_f64", &self.objective_f64())?;
        st.serialize_field("commodities", &self.commodities)?;
        let loads: BTreeMap<String, String> = self
            .link_loads()
            .iter()
            .map(|(k, v)| (k.to_string(), rate::format_big(v)))
            .collect();
        st.serialize_field("link_loads", &loads)?;
        st.end()
    }
}
