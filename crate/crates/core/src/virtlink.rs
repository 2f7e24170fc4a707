//! Trunks and their sub-connections (QVLinks).
//!
//! A trunk is a physical or logical link `((a, b), r, k, C, f)`: a node pair,
//! a key rate `r`, and a quota function `f` from sub-connection ids to
//! fractions of `r`. The fractions need not sum to one. When they sum past
//! one the trunk is oversubscribed and clashing requests are settled by
//! [`resolve_contention`].

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::rate::{self, Rate};
use crate::topology::NodePair;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VirtlinkError {
    #[error("quota {quota} for '{subconn}' is outside [0, 1]")]
    InvalidQuota { subconn: SubConnectionId, quota: String },
    #[error("trunk {0} has no sub-connections")]
    EmptySubconnSet(NodePair),
    #[error("'{subconn}' is not a sub-connection of trunk {trunk}")]
    UnknownSubConnection { trunk: NodePair, subconn: SubConnectionId },
}

/// Sub-connection label, e.g. `"red"`. Also names the QVNet it belongs to.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubConnectionId(String);

impl SubConnectionId {
    pub fn new(label: impl Into<String>) -> Self {
        SubConnectionId(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubConnectionId {
    fn from(s: &str) -> Self {
        SubConnectionId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrunkKind {
    Physical,
    Logical,
}

pub type QuotaMap = BTreeMap<SubConnectionId, Rate>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrunkLink {
    pub pair: NodePair,
    pub kind: TrunkKind,
    pub rate: Rate,
    /// `f`; its key set is `C`.
    pub quotas: QuotaMap,
}

impl TrunkLink {
    pub fn new(pair: NodePair, kind: TrunkKind, rate: Rate) -> Self {
        TrunkLink {
            pair,
            kind,
            rate,
            quotas: QuotaMap::new(),
        }
    }

    pub fn with_quota(mut self, id: &str, f: Rate) -> Self {
        self.quotas.insert(id.into(), f);
        self
    }

    /// Number of sub-connections, `k`.
    pub fn k(&self) -> usize {
        self.quotas.len()
    }

    pub fn carries(&self, id: &SubConnectionId) -> bool {
        self.quotas.contains_key(id)
    }

    pub fn quota_sum(&self) -> Rate {
        self.quotas.values().sum()
    }

    pub fn is_oversubscribed(&self) -> bool {
        self.quota_sum() > Rate::one()
    }

    /// `f(c) * r`, or `None` when `c` is not on this trunk.
    pub fn subconn_rate(&self, id: &SubConnectionId) -> Option<Rate> {
        self.quotas.get(id).map(|f| f * self.rate)
    }

    pub fn qvlinks(&self) -> Result<TrunkSplit, VirtlinkError> {
        split_trunk(self, &self.quotas)
    }
}

/// One sub-connection of a trunk: `((a, b), c, r_c)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QVLink {
    pub pair: NodePair,
    pub subconn: SubConnectionId,
    pub kind: TrunkKind,
    #[serde(with = "rate::serde_rate")]
    pub quota: Rate,
    #[serde(with = "rate::serde_rate")]
    pub rate: Rate,
    /// Rate of the owning trunk.
    #[serde(with = "rate::serde_rate")]
    pub trunk_rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrunkSplit {
    pub qvlinks: Vec<QVLink>,
    pub oversubscribed: bool,
}

/// Splits `trunk` into one QVLink per entry of `quotas`, sorted by id.
/// Oversubscription is reported through the flag, not as an error.
pub fn split_trunk(trunk: &TrunkLink, quotas: &QuotaMap) -> Result<TrunkSplit, VirtlinkError> {
    if quotas.is_empty() {
        return Err(VirtlinkError::EmptySubconnSet(trunk.pair.clone()));
    }
    for (id, f) in quotas {
        if !rate::is_unit_interval(f) {
            return Err(VirtlinkError::InvalidQuota {
                subconn: id.clone(),
                quota: rate::format_rate(f),
            });
        }
    }
    let qvlinks = quotas
        .iter()
        .map(|(id, f)| QVLink {
            pair: trunk.pair.clone(),
            subconn: id.clone(),
            kind: trunk.kind,
            quota: *f,
            rate: f * trunk.rate,
            trunk_rate: trunk.rate,
        })
        .collect();
    let total: Rate = quotas.values().sum();
    Ok(TrunkSplit {
        qvlinks,
        oversubscribed: total > Rate::one(),
    })
}

/// Divides `available` whole blocks among the demanding sub-connections.
///
/// Weighted max-min water-filling with weights `f(c)`: nobody gets more
/// than they asked for, and whatever a satisfied sub-connection leaves
/// behind is re-shared in proportion to the remaining weights.
/// Sub-connections with zero weight only share what positive-weight
/// demanders could not use. Fractional shares are turned into whole blocks
/// with largest-remainder rounding, ties going to the smaller id.
pub fn resolve_contention(
    trunk: &TrunkLink,
    demands: &BTreeMap<SubConnectionId, u64>,
    available: u64,
) -> Result<BTreeMap<SubConnectionId, u64>, VirtlinkError> {
    for id in demands.keys() {
        if !trunk.carries(id) {
            return Err(VirtlinkError::UnknownSubConnection {
                trunk: trunk.pair.clone(),
                subconn: id.clone(),
            });
        }
    }

    let demand_big: BTreeMap<&SubConnectionId, BigRational> = demands
        .iter()
        .map(|(id, d)| (id, BigRational::from_integer(BigInt::from(*d))))
        .collect();
    let mut shares: BTreeMap<&SubConnectionId, BigRational> =
        demands.keys().map(|id| (id, BigRational::zero())).collect();
    let mut remaining = BigRational::from_integer(BigInt::from(available));

    let weighted: Vec<(&SubConnectionId, BigRational)> = demands
        .keys()
        .filter(|id| trunk.quotas[*id].is_positive())
        .map(|id| (id, rate::big(&trunk.quotas[id])))
        .collect();
    remaining = water_fill(&weighted, &demand_big, &mut shares, remaining);

    let unweighted: Vec<(&SubConnectionId, BigRational)> = demands
        .keys()
        .filter(|id| trunk.quotas[*id].is_zero())
        .map(|id| (id, BigRational::one()))
        .collect();
    water_fill(&unweighted, &demand_big, &mut shares, remaining);

    Ok(round_largest_remainder(&shares, demands))
}

/// Continuous weighted water-filling of `budget` over `members`; adds the
/// result to `shares` and returns what is left over.
fn water_fill<'a>(
    members: &[(&'a SubConnectionId, BigRational)],
    demands: &BTreeMap<&'a SubConnectionId, BigRational>,
    shares: &mut BTreeMap<&'a SubConnectionId, BigRational>,
    mut budget: BigRational,
) -> BigRational {
    let mut active: Vec<(&SubConnectionId, BigRational)> = members
        .iter()
        .filter(|(id, _)| demands[id].is_positive())
        .cloned()
        .collect();
    while !active.is_empty() && budget.is_positive() {
        let total_weight: BigRational = active.iter().map(|(_, w)| w.clone()).sum();
        let level = &budget / &total_weight;
        let (saturated, rest): (Vec<_>, Vec<_>) = active
            .into_iter()
            .partition(|(id, w)| &demands[id] - &shares[id] <= &level * w);
        if saturated.is_empty() {
            for (id, w) in &rest {
                let add = &level * w;
                *shares.get_mut(id).expect("member has a share") += add;
            }
            return BigRational::zero();
        }
        for (id, _) in &saturated {
            let need = &demands[id] - &shares[id];
            budget -= &need;
            *shares.get_mut(id).expect("member has a share") += need;
        }
        active = rest;
    }
    budget
}

fn round_largest_remainder(
    shares: &BTreeMap<&SubConnectionId, BigRational>,
    demands: &BTreeMap<SubConnectionId, u64>,
) -> BTreeMap<SubConnectionId, u64> {
    let mut grants: BTreeMap<SubConnectionId, u64> = BTreeMap::new();
    let mut remainders: Vec<(BigRational, &SubConnectionId)> = Vec::new();
    let mut total = BigRational::zero();
    for (id, share) in shares {
        total += share;
        let whole = share.floor();
        grants.insert(
            (*id).clone(),
            whole.to_integer().to_u64().expect("share is nonnegative and bounded"),
        );
        let rem = share - whole;
        if rem.is_positive() {
            remainders.push((rem, id));
        }
    }
    let floored: u64 = grants.values().sum();
    // Shares sum to an integer (min(available, total demand)), so the
    // leftover is exactly the number of units to hand out.
    let target = total.floor().to_integer().to_u64().unwrap_or(floored);
    let mut leftover = target.saturating_sub(floored);
    remainders.sort_by(|(ra, ia), (rb, ib)| rb.cmp(ra).then_with(|| ia.cmp(ib)));
    for (_, id) in remainders {
        if leftover == 0 {
            break;
        }
        let g = grants.get_mut(id).expect("every share has a grant");
        if *g < demands[id] {
            *g += 1;
            leftover -= 1;
        }
    }
    grants
}
