//! Deterministic tick loop over a scenario.
//!
//! Each tick: generate keys on every link, open the KMS tick with the
//! tick's workload as plan, serve requests in order, fold the tick into
//! the demand averages, and rebalance quotas when the update period ends.

mod metrics;
mod scenario;

use std::collections::BTreeMap;

pub use metrics::{
    emit_metrics, window_rates, AllocationSummary, Format, MetricsReport, Occupancy, QuotaChange, TickRow,
    WindowRate, CSV_HEADER, RATE_WINDOW,
};
pub use scenario::{
    load_scenario, parse_scenario, quota_strings, validate, AccessDoc, PairsDoc, QVNetDoc, QuotaValue,
    RequestDoc, RoutingDoc, Scenario, ScenarioDoc, ScenarioError, TrunkDoc,
};

use crate::behavior_opt::{build_lp, qvnet_capacities, solve_behavior, Allocation, BehaviorError};
use crate::keymat::vault_snapshot;
use crate::kms::{ledger_report, KmsError, KmsState, LedgerEntry};
use crate::qvnetctl::QVNet;
use crate::rate;
use crate::updater::{observe, rebalance, DemandStats, UpdaterError};
use crate::virtlink::SubConnectionId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("engine fault at tick {tick}: {source}")]
    Kms { tick: u64, source: KmsError },
    #[error("updater fault at tick {tick}: {source}")]
    Updater { tick: u64, source: UpdaterError },
}

/// Solves a QVNet's own behavior on its current QVLink rates.
pub fn plan_allocation(qvnet: &QVNet, max_hops: usize) -> Result<Allocation, BehaviorError> {
    let lp = build_lp(qvnet, &qvnet.behavior, &qvnet_capacities(qvnet), max_hops)?;
    solve_behavior(&lp)
}

fn summarize(qvnet: &QVNet, max_hops: usize) -> AllocationSummary {
    let result = plan_allocation(qvnet, max_hops);
    AllocationSummary {
        qvnet: qvnet.id.clone(),
        behavior: qvnet.behavior.name().to_string(),
        objective: result.as_ref().ok().map(|a| rate::format_big(&a.objective)),
        objective_f64: result.as_ref().ok().map(Allocation::objective_f64),
        error: result.err().map(|e| e.to_string()),
    }
}

pub fn run(s: &Scenario) -> Result<MetricsReport, SimError> {
    run_with_ledger(s).map(|(report, _)| report)
}

/// Like [`run`], also returning the full KMS ledger.
pub fn run_with_ledger(s: &Scenario) -> Result<(MetricsReport, Vec<LedgerEntry>), SimError> {
    let allocations = s.qvnets.iter().map(|q| summarize(q, s.max_hops)).collect();

    let mut kms =
        KmsState::new(s.graph.clone(), s.trunks.clone(), s.qvnets.clone()).with_relay_mode(s.relay_mode);
    let mut stats = DemandStats::for_trunks(&s.trunks);
    let ids: Vec<SubConnectionId> = s.qvnets.iter().map(|q| q.id.clone()).collect();
    let mut rows = Vec::with_capacity(ids.len() * s.duration as usize);
    let mut occupancy = Vec::new();
    let mut quota_changes = Vec::new();

    for tick in 0..s.duration {
        let fault = |source| SimError::Kms { tick, source };
        kms.generate(tick, s.seed).map_err(fault)?;
        let requests = s.requests_at(tick);
        kms.begin_tick(tick, Some(requests)).map_err(fault)?;
        let first = kms.ledger().len();
        for req in requests {
            kms.request_key(req).map_err(fault)?;
        }
        let entries = &kms.ledger()[first..];

        let mut tick_rows: BTreeMap<&SubConnectionId, TickRow> =
            ids.iter().map(|id| (id, TickRow::new(tick, id.clone()))).collect();
        for e in entries {
            if let Some(row) = tick_rows.get_mut(&e.qvnet) {
                row.add(e);
            }
        }
        rows.extend(tick_rows.into_values());
        occupancy.extend(vault_snapshot(kms.vault()).into_iter().map(|(link, c)| Occupancy {
            tick,
            link,
            available: c.available,
        }));

        if let Some(rule) = &s.updater {
            stats = observe(&stats, tick, entries, rule);
            if (tick + 1) % rule.period == 0 {
                for trunk in &s.trunks {
                    let current = kms.trunk(&trunk.pair).expect("scenario trunk").clone();
                    let next = rebalance(&current, &stats, rule).map_err(|source| SimError::Updater { tick, source })?;
                    if next != current.quotas {
                        quota_changes.push(QuotaChange {
                            tick,
                            trunk: current.pair.clone(),
                            quotas: quota_strings(&next),
                        });
                        kms.set_quotas(&current.pair, next).map_err(fault)?;
                    }
                }
            }
        }
    }

    let report = MetricsReport {
        scenario: s.name.clone(),
        seed: s.seed,
        duration: s.duration,
        rows,
        occupancy,
        windows: window_rates(kms.ledger(), s.duration, RATE_WINDOW),
        allocations,
        quota_changes,
        totals: ledger_report(kms.ledger(), 0..s.duration),
        final_vault: vault_snapshot(kms.vault()),
    };
    Ok((report, kms.ledger().to_vec()))
}

/// Parses, validates and runs a scenario, optionally overriding its seed.
pub fn run_text(text: &str, seed: Option<u64>) -> Result<MetricsReport, RunTextError> {
    let mut s = load_scenario(text)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(run(&s)?)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunTextError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
