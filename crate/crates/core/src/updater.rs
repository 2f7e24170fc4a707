//! Demand-driven quota rebalancing (the QVNet update loop).
//!
//! Demand is tracked per trunk and sub-connection as an exponentially
//! weighted moving average of requested and granted blocks per tick.
//! Every `period` ticks each trunk's quota function is reset in proportion
//! to requested demand, clamped to per-sub-connection floors and ceilings.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::kms::LedgerEntry;
use crate::rate::{self, Rate};
use crate::topology::NodePair;
use crate::virtlink::{QuotaMap, SubConnectionId, TrunkLink};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UpdaterError {
    #[error("invalid update rule: {0}")]
    InvalidRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(with = "rate::serde_rate", default = "Rate::zero")]
    pub floor: Rate,
    #[serde(with = "rate::serde_rate", default = "Rate::one")]
    pub ceiling: Rate,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            floor: Rate::zero(),
            ceiling: Rate::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateRule {
    /// Ticks between rebalances.
    pub period: u64,
    #[serde(with = "rate::serde_rate")]
    pub ewma_alpha: Rate,
    /// Sub-connections not listed use floor 0 and ceiling 1.
    #[serde(default)]
    pub bounds: BTreeMap<SubConnectionId, Bounds>,
}

impl UpdateRule {
    pub fn bounds_for(&self, c: &SubConnectionId) -> Bounds {
        self.bounds.get(c).copied().unwrap_or_default()
    }

    /// Every problem with the rule, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.period == 0 {
            out.push("period must be at least 1".to_string());
        }
        if !self.ewma_alpha.is_positive() || self.ewma_alpha > Rate::one() {
            out.push(format!("ewma_alpha {} is outside (0, 1]", rate::format_rate(&self.ewma_alpha)));
        }
        for (c, b) in &self.bounds {
            if !rate::is_unit_interval(&b.floor) || !rate::is_unit_interval(&b.ceiling) {
                out.push(format!("bounds for '{c}' must lie in [0, 1]"));
            }
            if b.floor > b.ceiling {
                out.push(format!("floor exceeds ceiling for '{c}'"));
            }
        }
        let floors: Rate = self.bounds.values().map(|b| b.floor).sum();
        if floors > Rate::one() {
            out.push(format!("quota floors sum to {}, more than 1", rate::format_rate(&floors)));
        }
        out
    }

    pub fn validate(&self) -> Result<(), UpdaterError> {
        match self.problems().first() {
            None => Ok(()),
            Some(p) => Err(UpdaterError::InvalidRule(p.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Series {
    #[serde(with = "rate::serde_rate")]
    pub requested: Rate,
    #[serde(with = "rate::serde_rate")]
    pub granted: Rate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DemandStats {
    pub series: BTreeMap<(NodePair, SubConnectionId), Series>,
    pub last_tick: Option<u64>,
}

impl DemandStats {
    /// One zeroed series per trunk sub-connection.
    pub fn for_trunks<'a>(trunks: impl IntoIterator<Item = &'a TrunkLink>) -> Self {
        let series = trunks
            .into_iter()
            .flat_map(|t| t.quotas.keys().map(|c| ((t.pair.clone(), c.clone()), Series::default())))
            .collect();
        DemandStats { series, last_tick: None }
    }

    pub fn get(&self, pair: &NodePair, c: &SubConnectionId) -> Series {
        self.series.get(&(pair.clone(), c.clone())).copied().unwrap_or_default()
    }

    pub fn set_requested(&mut self, pair: &NodePair, c: &SubConnectionId, value: Rate) {
        self.series.entry((pair.clone(), c.clone())).or_default().requested = value;
    }
}

/// Off-grid values are rounded toward the observed value, so a steady
/// series settles on it exactly instead of stalling a few steps short.
fn ewma(alpha: &BigRational, current: u64, previous: &Rate) -> Rate {
    let cur = BigRational::from_integer(BigInt::from(current));
    let next = alpha * &cur + (BigRational::one() - alpha) * rate::big(previous);
    let rounded = if next < cur { rate::narrow(&-next).map(|r| -r) } else { rate::narrow(&next) };
    rounded.expect("moving average stays in range")
}

/// Folds one tick of ledger entries into the moving averages.
///
/// Every tracked series is updated, with zero for series the tick did not
/// touch. A request counts toward each trunk it was charged to; requests
/// denied before routing count nowhere.
pub fn observe(stats: &DemandStats, tick: u64, entries: &[LedgerEntry], rule: &UpdateRule) -> DemandStats {
    let mut requested: BTreeMap<(NodePair, SubConnectionId), u64> = BTreeMap::new();
    let mut granted: BTreeMap<(NodePair, SubConnectionId), u64> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.tick == tick) {
        for (pair, g) in &e.trunk_charges {
            let key = (pair.clone(), e.qvnet.clone());
            *requested.entry(key.clone()).or_insert(0) += e.requested;
            *granted.entry(key).or_insert(0) += g;
        }
    }
    let alpha = rate::big(&rule.ewma_alpha);
    let mut out = stats.clone();
    for (key, series) in out.series.iter_mut() {
        series.requested = ewma(&alpha, requested.get(key).copied().unwrap_or(0), &series.requested);
        series.granted = ewma(&alpha, granted.get(key).copied().unwrap_or(0), &series.granted);
    }
    out.last_tick = Some(tick);
    out
}

/// New quota function for `trunk`, proportional to requested demand.
///
/// Finds `λ` with `Σ clamp(λ·d(c), floor(c), ceiling(c)) = 1`, so shares
/// stay proportional among unclamped sub-connections. When even every
/// ceiling leaves the sum below one, the ceilings are returned. Zero
/// total demand leaves the quotas unchanged.
pub fn rebalance(trunk: &TrunkLink, stats: &DemandStats, rule: &UpdateRule) -> Result<QuotaMap, UpdaterError> {
    rule.validate()?;
    let demand: BTreeMap<&SubConnectionId, BigRational> = trunk
        .quotas
        .keys()
        .map(|c| (c, rate::big(&stats.get(&trunk.pair, c).requested)))
        .collect();
    if demand.values().all(Zero::is_zero) {
        return Ok(trunk.quotas.clone());
    }
    let bounds: BTreeMap<&SubConnectionId, (BigRational, BigRational)> = trunk
        .quotas
        .keys()
        .map(|c| {
            let b = rule.bounds_for(c);
            (c, (rate::big(&b.floor), rate::big(&b.ceiling)))
        })
        .collect();

    let at = |lambda: Option<&BigRational>| -> BTreeMap<&SubConnectionId, BigRational> {
        demand
            .iter()
            .map(|(c, d)| {
                let (lo, hi) = &bounds[c];
                let raw = match lambda {
                    Some(l) => l * d,
                    None if d.is_positive() => hi.clone(),
                    None => BigRational::zero(),
                };
                (*c, raw.max(lo.clone()).min(hi.clone()))
            })
            .collect()
    };
    let sum = |m: &BTreeMap<&SubConnectionId, BigRational>| m.values().cloned().sum::<BigRational>();
    let one = BigRational::one();

    let saturated = at(None);
    let shares = if sum(&saturated) <= one {
        saturated
    } else {
        // Breakpoints of the piecewise-linear sum, in increasing order.
        let mut breaks: Vec<BigRational> = demand
            .iter()
            .filter(|(_, d)| d.is_positive())
            .flat_map(|(c, d)| {
                let (lo, hi) = &bounds[c];
                [lo / d.clone(), hi / d.clone()]
            })
            .collect();
        breaks.sort();
        breaks.dedup();
        let mut lower = BigRational::zero();
        for b in breaks {
            if sum(&at(Some(&b))) >= one {
                break;
            }
            lower = b;
        }
        // Between breakpoints the sum is `fixed + λ * slope`.
        let base = at(Some(&lower));
        let mut fixed = BigRational::zero();
        let mut slope = BigRational::zero();
        for (c, d) in &demand {
            let (lo, hi) = &bounds[c];
            let v = &base[c];
            let free = d.is_positive() && v == &(&lower * d) && &lower * d >= *lo && &lower * d < *hi;
            if free {
                slope += d;
            } else {
                fixed += v;
            }
        }
        let lambda = if slope.is_zero() { lower } else { (&one - fixed) / slope };
        at(Some(&lambda))
    };

    Ok(shares
        .into_iter()
        .map(|(c, v)| (c.clone(), rate::narrow(&v).expect("quota lies in [0, 1]")))
        .collect())
}
