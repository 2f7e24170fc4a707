use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qvnet_core::behavior_opt::{build_lp, qvnet_capacities, solve_behavior, Allocation};
use qvnet_core::qvnetctl::{Behavior, QVNet};
use qvnet_core::rate;
use qvnet_core::sim::{self, Format, Scenario, ScenarioError};
use qvnet_core::topology::{NodeId, NodePair};
use qvnet_core::virtlink::split_trunk;

#[derive(Parser)]
#[command(name = "qvnet", version, about = "Simulate QKD networks partitioned into QVNets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and list every problem found.
    Validate { scenario: PathBuf },
    /// Solve a QVNet's key-rate allocation and print it as JSON.
    Solve {
        scenario: PathBuf,
        /// QVNet id. `all` solves every QVNet unless one is named "all".
        #[arg(long)]
        qvnet: String,
        /// Override the QVNet's behavior.
        #[arg(long, value_enum)]
        behavior: Option<BehaviorArg>,
        /// Hub node for broadcast.
        #[arg(long)]
        hub: Option<String>,
        /// Endpoint pair for high throughput, as `A-B` or `A,B`.
        #[arg(long, value_parser = parse_pair)]
        pair: Option<NodePair>,
        #[arg(long)]
        max_hops: Option<usize>,
    },
    /// Run a scenario and write its metrics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the QVLinks a trunk splits into.
    Split {
        scenario: PathBuf,
        /// Trunk endpoints, as `A-B` or `A,B`.
        #[arg(long, value_parser = parse_pair)]
        trunk: NodePair,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BehaviorArg {
    Balanced,
    Broadcast,
    #[value(name = "high_throughput", alias = "high-throughput")]
    HighThroughput,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn parse_pair(s: &str) -> Result<NodePair, String> {
    let (a, b) = s
        .split_once(',')
        .or_else(|| s.split_once('-'))
        .ok_or_else(|| format!("expected A-B or A,B, got '{s}'"))?;
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() || b.is_empty() || a == b {
        return Err(format!("expected two distinct nodes, got '{s}'"));
    }
    Ok(NodePair::new(a, b))
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn failed(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Solve {
            scenario,
            qvnet,
            behavior,
            hub,
            pair,
            max_hops,
        } => solve(&scenario, &qvnet, behavior, hub, pair, max_hops),
        Command::Run {
            scenario,
            out,
            format,
            seed,
        } => run(&scenario, &out, format, seed),
        Command::Split { scenario, trunk } => split(&scenario, &trunk),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::failed(format!("{}: {e}", path.display())))?;
    sim::load_scenario(&text).map_err(|e| match e {
        ScenarioError::Parse(msg) => Failure::failed(format!("{}: cannot parse: {msg}", path.display())),
        ScenarioError::Validation(errs) => {
            let mut msg = format!("{}: {} validation error(s)", path.display(), errs.len());
            for err in errs {
                msg.push_str("\n  ");
                msg.push_str(&err);
            }
            Failure::failed(msg)
        }
    })
}

fn validate(path: &Path) -> Result<(), Failure> {
    let s = load(path)?;
    println!(
        "ok: {} ({} nodes, {} links, {} trunks, {} QVNets, {} requests over {} ticks)",
        if s.name.is_empty() { path.display().to_string() } else { s.name.clone() },
        s.graph.node_count(),
        s.graph.link_count(),
        s.trunks.len(),
        s.qvnets.len(),
        s.workload.len(),
        s.duration
    );
    Ok(())
}

fn behavior_override(
    q: &QVNet,
    arg: Option<BehaviorArg>,
    hub: &Option<String>,
    pair: &Option<NodePair>,
) -> Result<Behavior, Failure> {
    Ok(match arg {
        None => q.behavior.clone(),
        Some(BehaviorArg::Balanced) => Behavior::Balanced,
        Some(BehaviorArg::Broadcast) => Behavior::Broadcast {
            hub: NodeId::new(hub.clone().ok_or_else(|| Failure::usage("--behavior broadcast needs --hub"))?),
        },
        Some(BehaviorArg::HighThroughput) => Behavior::HighThroughput {
            pair: pair
                .clone()
                .ok_or_else(|| Failure::usage("--behavior high_throughput needs --pair"))?,
        },
    })
}

fn solve_one(q: &QVNet, behavior: &Behavior, max_hops: usize) -> Result<Allocation, Failure> {
    let lp = build_lp(q, behavior, &qvnet_capacities(q), max_hops)
        .map_err(|e| Failure::failed(format!("QVNet '{}': {e}", q.id)))?;
    solve_behavior(&lp).map_err(|e| Failure::failed(format!("QVNet '{}': {e}", q.id)))
}

fn solve(
    path: &Path,
    id: &str,
    arg: Option<BehaviorArg>,
    hub: Option<String>,
    pair: Option<NodePair>,
    max_hops: Option<usize>,
) -> Result<(), Failure> {
    if max_hops == Some(0) {
        return Err(Failure::usage("--max-hops must be at least 1"));
    }
    let s = load(path)?;
    let max_hops = max_hops.unwrap_or(s.max_hops);
    let json = match s.qvnet(id) {
        Some(q) => {
            let behavior = behavior_override(q, arg, &hub, &pair)?;
            serde_json::to_string_pretty(&solve_one(q, &behavior, max_hops)?)
        }
        None if id == "all" => {
            let mut all = Vec::with_capacity(s.qvnets.len());
            for q in &s.qvnets {
                let behavior = behavior_override(q, arg, &hub, &pair)?;
                all.push(solve_one(q, &behavior, max_hops)?);
            }
            serde_json::to_string_pretty(&all)
        }
        None => return Err(Failure::failed(format!("no QVNet '{id}' in {}", path.display()))),
    };
    println!("{}", json.expect("allocation serializes"));
    Ok(())
}

fn run(path: &Path, out: &Path, format: FormatArg, seed: Option<u64>) -> Result<(), Failure> {
    let mut s = load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let report = sim::run(&s).map_err(|e| Failure::failed(e.to_string()))?;
    let format = match format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    fs::write(out, sim::emit_metrics(&report, format))
        .map_err(|e| Failure::failed(format!("{}: {e}", out.display())))?;
    eprintln!(
        "wrote {} ({} ticks, {} granted of {} requested blocks)",
        out.display(),
        report.duration,
        report.totals.total.granted,
        report.totals.total.requested
    );
    Ok(())
}

fn split(path: &Path, pair: &NodePair) -> Result<(), Failure> {
    let s = load(path)?;
    let trunk = s
        .trunk(pair)
        .ok_or_else(|| Failure::failed(format!("no trunk {pair} in {}", path.display())))?;
    let result = split_trunk(trunk, &trunk.quotas).map_err(|e| Failure::failed(e.to_string()))?;
    let kind = format!("{:?}", trunk.kind).to_lowercase();
    println!("trunk {} ({kind}), rate {}", trunk.pair, rate::format_rate(&trunk.rate));
    let width = result.qvlinks.iter().map(|q| q.subconn.as_str().len()).max().unwrap_or(0).max(6);
    println!("{:<width$}  {:>10}  {:>10}", "subconn", "quota", "rate");
    for q in &result.qvlinks {
        println!(
            "{:<width$}  {:>10}  {:>10}",
            q.subconn.as_str(),
            rate::format_rate(&q.quota),
            rate::format_rate(&q.rate)
        );
    }
    if result.oversubscribed {
        println!(
            "oversubscribed: quotas sum to {}; contention is resolved by water-filling",
            rate::format_rate(&trunk.quota_sum())
        );
    }
    Ok(())
}
