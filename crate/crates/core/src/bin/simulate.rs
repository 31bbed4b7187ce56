use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;

use mofanet::campaign::{run_campaign, write_outputs, CampaignResult};
use mofanet::config::{load_config, FailureCondition, Protocol, ScenarioConfig};

/// Monte Carlo campaigns over the four-group diversion scenario.
///
/// `--protocol`, `--nodes` and `--condition` accept comma-separated lists;
/// every combination is run and written to the same output directory.
#[derive(Parser, Debug)]
#[command(name = "simulate", version)]
struct Args {
    /// TOML scenario file; omit to use the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    protocol: Vec<Protocol>,
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<usize>,
    /// 1 = all nodes healthy, 2 = central node of every group failed.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=2))]
    condition: Vec<u8>,
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a per-run event trace.
    #[arg(long)]
    trace: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let base = match &args.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };

    let mut base = base;
    if let Some(r) = args.runs {
        base.runs = r;
    }
    if let Some(s) = args.seed {
        base.base_seed = s;
    }
    if let Some(o) = &args.out {
        base.output_dir = o.clone();
    }
    let protocols = if args.protocol.is_empty() { vec![base.protocol] } else { args.protocol.clone() };
    let sizes = if args.nodes.is_empty() { vec![base.node_count] } else { args.nodes.clone() };
    let conditions: Vec<FailureCondition> = if args.condition.is_empty() {
        vec![base.condition]
    } else {
        args.condition.iter().filter_map(|&c| FailureCondition::from_number(c)).collect()
    };
    if args.workers == Some(0) {
        bail!("--workers must be at least 1");
    }

    let mut results: Vec<CampaignResult> = Vec::new();
    for &node_count in &sizes {
        for &condition in &conditions {
            for &protocol in &protocols {
                let cfg = ScenarioConfig { node_count, condition, protocol, ..base.clone() };
                cfg.validate().context("invalid scenario")?;
                let started = Instant::now();
                let c = run_campaign(&cfg, args.workers, args.trace)
                    .with_context(|| format!("campaign {protocol} / {node_count} nodes / condition {}", condition.number()))?;
                let fmt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
                eprintln!(
                    "{:<16} runs={} pdr={} oe={} latency={} ({:.1}s)",
                    c.label(),
                    c.runs.len(),
                    fmt(c.aggregate.get("pdr").mean),
                    fmt(c.aggregate.get("oe").mean),
                    fmt(c.aggregate.get("latency").mean),
                    started.elapsed().as_secs_f64()
                );
                results.push(c);
            }
        }
    }

    let files = write_outputs(&results, &base.output_dir)
        .with_context(|| format!("writing results to {}", base.output_dir.display()))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
