//! Run metrics and their CSV / JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::keymat::VaultSnapshot;
use crate::kms::{Denial, LedgerEntry, LedgerReport};
use crate::topology::NodePair;
use crate::virtlink::SubConnectionId;

/// Window length, in ticks, for achieved-rate reporting.
pub const RATE_WINDOW: u64 = 100;

pub const CSV_HEADER: &str = "tick,qvnet,requested,granted,denied_access,denied_quota,denied_schedule,denied_nopath,denied_insufficient,phys_consumed";

/// Block counts for one QVNet in one tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TickRow {
    pub tick: u64,
    pub qvnet: SubConnectionId,
    pub requested: u64,
    pub granted: u64,
    pub denied_access: u64,
    pub denied_quota: u64,
    pub denied_schedule: u64,
    pub denied_nopath: u64,
    pub denied_insufficient: u64,
    pub phys_consumed: u64,
}

impl TickRow {
    pub fn new(tick: u64, qvnet: SubConnectionId) -> Self {
        TickRow {
            tick,
            qvnet,
            ..Default::default()
        }
    }

    pub fn add(&mut self, e: &LedgerEntry) {
        self.requested += e.requested;
        self.granted += e.granted;
        self.phys_consumed += e.phys_total();
        let denied = e.requested - e.granted;
        match e.denial {
            None => {}
            Some(Denial::AccessDenied) => self.denied_access += denied,
            Some(Denial::QuotaExceeded) => self.denied_quota += denied,
            Some(Denial::ScheduleClosed) => self.denied_schedule += denied,
            Some(Denial::NoPath) => self.denied_nopath += denied,
            Some(Denial::InsufficientKeys) => self.denied_insufficient += denied,
        }
    }

    pub fn denied(&self) -> u64 {
        self.denied_access + self.denied_quota + self.denied_schedule + self.denied_nopath + self.denied_insufficient
    }
}

/// Keys held by one link's vault at the end of a tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Occupancy {
    pub tick: u64,
    pub link: NodePair,
    pub available: u64,
}

/// Blocks granted to one endpoint pair of a QVNet within one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowRate {
    pub qvnet: SubConnectionId,
    pub pair: NodePair,
    pub start: u64,
    pub end: u64,
    pub granted: u64,
}

/// Planned key rate of a QVNet under its behavior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationSummary {
    pub qvnet: SubConnectionId,
    pub behavior: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_f64: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Quota function a trunk switched to at the end of `tick`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuotaChange {
    pub tick: u64,
    pub trunk: NodePair,
    pub quotas: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub duration: u64,
    /// One row per tick and QVNet, sorted by (tick, qvnet).
    pub rows: Vec<TickRow>,
    pub occupancy: Vec<Occupancy>,
    pub windows: Vec<WindowRate>,
    pub allocations: Vec<AllocationSummary>,
    pub quota_changes: Vec<QuotaChange>,
    pub totals: LedgerReport,
    #[serde(serialize_with = "pair_keys")]
    pub final_vault: VaultSnapshot,
}

impl MetricsReport {
    pub fn rows_for<'a>(&'a self, qvnet: &'a str) -> impl Iterator<Item = &'a TickRow> + 'a {
        self.rows.iter().filter(move |r| r.qvnet.as_str() == qvnet)
    }

    pub fn windows_for<'a>(&'a self, qvnet: &'a str) -> impl Iterator<Item = &'a WindowRate> + 'a {
        self.windows.iter().filter(move |w| w.qvnet.as_str() == qvnet)
    }

    pub fn phys_consumed(&self) -> u64 {
        self.rows.iter().map(|r| r.phys_consumed).sum()
    }
}

fn pair_keys<S: serde::Serializer, V: Serialize>(map: &BTreeMap<NodePair, V>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format '{other}', expected csv or json")),
        }
    }
}

pub fn emit_metrics(report: &MetricsReport, format: Format) -> String {
    match format {
        Format::Csv => to_csv(report),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

fn to_csv(report: &MetricsReport) -> String {
    let mut out = String::with_capacity(64 * (report.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.tick,
            csv_field(r.qvnet.as_str()),
            r.requested,
            r.granted,
            r.denied_access,
            r.denied_quota,
            r.denied_schedule,
            r.denied_nopath,
            r.denied_insufficient,
            r.phys_consumed
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Windowed grant totals for every (QVNet, pair) seen in the ledger.
pub fn window_rates(ledger: &[LedgerEntry], duration: u64, window: u64) -> Vec<WindowRate> {
    let mut per: BTreeMap<(SubConnectionId, NodePair), BTreeMap<u64, u64>> = BTreeMap::new();
    for e in ledger {
        let pair = NodePair::new(e.src.clone(), e.dst.clone());
        *per.entry((e.qvnet.clone(), pair)).or_default().entry(e.tick / window).or_insert(0) += e.granted;
    }
    let mut out = Vec::new();
    for ((qvnet, pair), counts) in per {
        let mut start = 0;
        while start < duration {
            let end = (start + window).min(duration);
            out.push(WindowRate {
                qvnet: qvnet.clone(),
                pair: pair.clone(),
                start,
                end,
                granted: counts.get(&(start / window)).copied().unwrap_or(0),
            });
            start = end;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let csv = emit_metrics(&MetricsReport::default(), Format::Csv);
        assert_eq!(csv, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn denied_blocks_follow_reason() {
        let mut row = TickRow::new(0, "red".into());
        let mut e = LedgerEntry {
            tick: 0,
            qvnet: "red".into(),
            principal: "app".into(),
            src: "A".into(),
            dst: "C".into(),
            requested: 5,
            granted: 2,
            denial: Some(Denial::InsufficientKeys),
            path: None,
            trunk_charges: BTreeMap::new(),
            phys_consumed: BTreeMap::from([(("A", "B").into(), 2), (("B", "C").into(), 2)]),
            consumed_ids: vec![],
        };
        row.add(&e);
        e.granted = 0;
        e.denial = Some(Denial::ScheduleClosed);
        e.phys_consumed.clear();
        row.add(&e);
        assert_eq!((row.requested, row.granted, row.phys_consumed), (10, 2, 4));
        assert_eq!((row.denied_insufficient, row.denied_schedule), (3, 5));
        assert_eq!(row.denied(), 8);
    }

    #[test]
    fn quoted_ids() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
