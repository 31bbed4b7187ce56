//! Monte Carlo campaigns: traffic generation, per-run engine setup,
//! aggregation across runs and CSV output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{AodvAgent, DsdvAgent};
use crate::config::{ConfigError, FailureCondition, Protocol, ScenarioConfig};
use crate::connectivity::{build_timeline, ConnectivityTimeline, LinkChange};
use crate::metrics::{ControlKind, ControlTally, MetricSummary, PacketLedger};
use crate::mobility::{build_scenario, FormationSpec, MobilityError, Phase, PositionTable};
use crate::netsim::{Agent, AppPacket, Engine, EngineConfig, EngineStats, RunOutput, TraceRecord};
use crate::protocol::CprTdAgent;
use crate::NodeId;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario: {0}")]
    Mobility(#[from] MobilityError),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("nothing to write")]
    Empty,
}

/// Everything about a scenario that does not depend on the seed.
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub formation: FormationSpec,
    pub positions: Arc<PositionTable>,
    /// Planned connectivity handed to CPR-TD.
    pub prior: Arc<ConnectivityTimeline>,
    pub failed: Vec<NodeId>,
}

impl PreparedScenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self, CampaignError> {
        config.validate()?;
        let formation = build_scenario(config.node_count, &config.phases, &config.formation, &config.earth_model())?;
        let failed = match config.condition {
            FailureCondition::None => Vec::new(),
            FailureCondition::CentralPerGroup => formation.central_nodes(),
        };
        let range = config.radio.comm_range();
        let prior_failed: &[NodeId] = if config.oracle_knows_failures { &failed } else { &[] };
        let prior = Arc::new(build_timeline(&formation, range, prior_failed));
        let positions = Arc::new(PositionTable::from_spec(&formation));
        Ok(Self { config: config.clone(), formation, positions, prior, failed })
    }

    pub fn alive_nodes(&self) -> Vec<NodeId> {
        (0..self.config.node_count as u16).map(NodeId).filter(|n| !self.failed.contains(n)).collect()
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.config.base_seed.wrapping_add(run as u64)
    }
}

/// One application packet request: source, destination, generation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficItem {
    pub src: NodeId,
    pub dst: NodeId,
    pub at: f64,
}

fn traffic_rng(cfg: &ScenarioConfig, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Node RNGs use streams 1..=n; stay clear of them.
    let stream = if cfg.common_random_numbers {
        0
    } else {
        u64::MAX - cfg.protocol as u64
    };
    rng.set_stream(stream);
    rng
}

/// A fresh uniform (source, destination) pair of distinct live nodes per tick.
pub fn generate_traffic(cfg: &ScenarioConfig, alive: &[NodeId], seed: u64) -> Vec<TrafficItem> {
    assert!(alive.len() >= 2, "traffic needs two live nodes");
    let mut rng = traffic_rng(cfg, seed);
    cfg.packet_times()
        .into_iter()
        .map(|at| {
            let s = rng.gen_range(0..alive.len());
            let mut d = rng.gen_range(0..alive.len() - 1);
            if d >= s {
                d += 1;
            }
            TrafficItem { src: alive[s], dst: alive[d], at }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub summary: MetricSummary,
    pub phases: [MetricSummary; 5],
    pub control: BTreeMap<ControlKind, ControlTally>,
    pub stats: EngineStats,
    pub ledger: PacketLedger,
    pub trace: Vec<TraceRecord>,
}

fn drive<A: Agent>(prep: &PreparedScenario, agents: Vec<A>, ledger: PacketLedger, packets: &[AppPacket], seed: u64, trace: bool) -> RunOutput {
    let cfg = &prep.config;
    let engine_cfg = EngineConfig { radio: cfg.radio, mac: cfg.mac, end_time: cfg.phases.end(), trace };
    Engine::new(engine_cfg, Arc::clone(&prep.positions), agents, &prep.failed, ledger, packets, seed).run()
}

/// Runs replica `run` of the prepared scenario.
pub fn run_single(prep: &PreparedScenario, run: usize, trace: bool) -> RunResult {
    let cfg = &prep.config;
    let seed = prep.run_seed(run);
    let traffic = generate_traffic(cfg, &prep.alive_nodes(), seed);
    let mut ledger = PacketLedger::new(cfg.phases);
    let packets: Vec<AppPacket> = traffic
        .iter()
        .map(|t| {
            let expires_at = t.at + cfg.expiry;
            let id = ledger.register(t.src, t.dst, t.at, expires_at, cfg.packet_size);
            AppPacket { id, src: t.src, dst: t.dst, generated_at: t.at, expires_at, payload_bytes: cfg.packet_size }
        })
        .collect();

    let nodes = (0..cfg.node_count as u16).map(NodeId);
    let out = match cfg.protocol {
        Protocol::Cprtd => {
            let agents = nodes.map(|n| CprTdAgent::new(n, Arc::clone(&prep.prior), cfg.cprtd)).collect();
            drive(prep, agents, ledger, &packets, seed, trace)
        }
        Protocol::Aodv => {
            let agents = nodes.map(|n| AodvAgent::new(n, cfg.aodv)).collect();
            drive(prep, agents, ledger, &packets, seed, trace)
        }
        Protocol::Dsdv => {
            let agents = nodes.map(|n| DsdvAgent::new(n, cfg.dsdv)).collect();
            drive(prep, agents, ledger, &packets, seed, trace)
        }
    };

    let phases = Phase::ALL.map(|p| out.ledger.phase_summary(p));
    RunResult {
        run,
        seed,
        summary: out.ledger.summary(),
        phases,
        control: out.ledger.control().clone(),
        stats: out.stats,
        ledger: out.ledger,
        trace: out.trace,
    }
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    /// Runs where the metric was defined.
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let xs: Vec<f64> = values.into_iter().flatten().collect();
        Stat {
            n: xs.len(),
            mean: crate::metrics::mean(&xs).ok(),
            std: crate::metrics::jitter(&xs).ok(),
        }
    }
}

pub const METRICS: [&str; 10] =
    ["pdr", "oe", "latency", "jitter", "delivered", "proactive_drop", "expired", "lost", "control_bytes", "duplicates"];

fn metric(s: &MetricSummary, name: &str) -> Option<f64> {
    match name {
        "pdr" => s.pdr,
        "oe" => s.oe,
        "latency" => s.latency,
        "jitter" => s.jitter,
        "delivered" => Some(s.delivered as f64),
        "proactive_drop" => Some(s.proactive_drop as f64),
        "expired" => Some(s.expired as f64),
        "lost" => Some(s.lost as f64),
        "control_bytes" => Some(s.control_bytes as f64),
        "duplicates" => Some(s.duplicates as f64),
        _ => None,
    }
}

/// Per-metric statistics across runs, in `METRICS` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub overall: Vec<(&'static str, Stat)>,
    pub by_phase: [Vec<(&'static str, Stat)>; 5],
}

impl Aggregate {
    fn from_runs(runs: &[RunResult]) -> Self {
        let collect = |pick: &dyn Fn(&RunResult) -> &MetricSummary| {
            METRICS.iter().map(|&m| (m, Stat::of(runs.iter().map(|r| metric(pick(r), m))))).collect::<Vec<_>>()
        };
        Aggregate {
            overall: collect(&|r| &r.summary),
            by_phase: [0, 1, 2, 3, 4].map(|i| collect(&move |r: &RunResult| &r.phases[i])),
        }
    }

    pub fn get(&self, name: &str) -> Stat {
        lookup(&self.overall, name)
    }

    pub fn phase(&self, p: Phase, name: &str) -> Stat {
        lookup(&self.by_phase[p.index()], name)
    }
}

fn lookup(rows: &[(&'static str, Stat)], name: &str) -> Stat {
    rows.iter().find(|(m, _)| *m == name).map(|&(_, s)| s).unwrap_or_default()
}

pub struct CampaignResult {
    pub config: ScenarioConfig,
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
}

impl CampaignResult {
    pub fn label(&self) -> String {
        format!("{}-{}-c{}", self.config.protocol, self.config.node_count, self.config.condition.number())
    }
}

/// Runs every replica; `workers = None` uses rayon's default pool.
/// Results are ordered by run index whatever the worker count.
pub fn run_campaign(cfg: &ScenarioConfig, workers: Option<usize>, trace: bool) -> Result<CampaignResult, CampaignError> {
    let prep = PreparedScenario::new(cfg)?;
    let work = || (0..cfg.runs).into_par_iter().map(|i| run_single(&prep, i, trace)).collect::<Vec<_>>();
    let runs = match workers {
        None => work(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CampaignError::Pool(e.to_string()))?
            .install(work),
    };
    let aggregate = Aggregate::from_runs(&runs);
    Ok(CampaignResult { config: cfg.clone(), runs, aggregate })
}

// ---- CSV output -------------------------------------------------------

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CampaignError> {
    let file = File::create(path).map_err(|source| CampaignError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<(), CampaignError> {
    w.flush().map_err(|source| CampaignError::Io { path: path.to_path_buf(), source })
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    protocol: &'a str,
    nodes: usize,
    condition: u8,
    run: usize,
    seed: u64,
    phase: Option<u8>,
    generated: usize,
    delivered: usize,
    proactive_drop: usize,
    expired: usize,
    lost: usize,
    duplicates: u64,
    payload_bytes: u64,
    control_bytes: u64,
    control_frames: u64,
    pdr: Option<f64>,
    oe: Option<f64>,
    latency: Option<f64>,
    jitter: Option<f64>,
}

impl<'a> SummaryRow<'a> {
    fn new(c: &'a CampaignResult, r: &RunResult, phase: Option<u8>, s: &MetricSummary) -> Self {
        SummaryRow {
            protocol: c.config.protocol.name(),
            nodes: c.config.node_count,
            condition: c.config.condition.number(),
            run: r.run,
            seed: r.seed,
            phase,
            generated: s.generated,
            delivered: s.delivered,
            proactive_drop: s.proactive_drop,
            expired: s.expired,
            lost: s.lost,
            duplicates: s.duplicates,
            payload_bytes: s.payload_bytes,
            control_bytes: s.control_bytes,
            control_frames: s.control_frames,
            pdr: s.pdr,
            oe: s.oe,
            latency: s.latency,
            jitter: s.jitter,
        }
    }
}

/// `runs.csv`: one row per run with whole-run metrics.
pub fn write_runs(results: &[CampaignResult], path: &Path) -> Result<(), CampaignError> {
    let mut w = create(path)?;
    for c in results {
        for r in &c.runs {
            w.serialize(SummaryRow::new(c, r, None, &r.summary))?;
        }
    }
    finish(w, path)
}

/// `by_phase.csv`: one row per run and phase.
pub fn write_by_phase(results: &[CampaignResult], path: &Path) -> Result<(), CampaignError> {
    let mut w = create(path)?;
    for c in results {
        for r in &c.runs {
            for p in Phase::ALL {
                w.serialize(SummaryRow::new(c, r, Some(p.0), &r.phases[p.index()]))?;
            }
        }
    }
    finish(w, path)
}

#[derive(Serialize)]
struct StatRow<'a> {
    protocol: &'a str,
    nodes: usize,
    condition: u8,
    phase: Option<u8>,
    metric: &'a str,
    n: usize,
    mean: Option<f64>,
    std: Option<f64>,
}

/// `aggregate.csv`: mean and standard deviation across runs per metric.
pub fn write_aggregate(results: &[CampaignResult], path: &Path) -> Result<(), CampaignError> {
    let mut w = create(path)?;
    for c in results {
        for &(m, s) in &c.aggregate.overall {
            w.serialize(StatRow {
                protocol: c.config.protocol.name(),
                nodes: c.config.node_count,
                condition: c.config.condition.number(),
                phase: None,
                metric: m,
                n: s.n,
                mean: s.mean,
                std: s.std,
            })?;
        }
    }
    finish(w, path)
}

/// Arrangement of the plot tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotLayout {
    /// Whole-run metrics grouped by condition and protocol, one row per size.
    BySize,
    /// Per-phase metrics, five rows per protocol and size.
    ByPhase,
    /// Whole-run metrics grouped by size and protocol, one row per condition.
    ByCondition,
}

impl PlotLayout {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotLayout::BySize => "plot_by_size.csv",
            PlotLayout::ByPhase => "plot_by_phase.csv",
            PlotLayout::ByCondition => "plot_by_condition.csv",
        }
    }
}

#[derive(Serialize)]
struct PlotRow<'a> {
    protocol: &'a str,
    nodes: usize,
    condition: u8,
    phase: Option<u8>,
    runs: usize,
    generated_mean: Option<f64>,
    delivered_mean: Option<f64>,
    pdr_mean: Option<f64>,
    pdr_std: Option<f64>,
    oe_mean: Option<f64>,
    oe_std: Option<f64>,
    latency_mean: Option<f64>,
    latency_std: Option<f64>,
    jitter_mean: Option<f64>,
    jitter_std: Option<f64>,
}

fn plot_row<'a>(c: &'a CampaignResult, phase: Option<Phase>) -> PlotRow<'a> {
    let stat = |m: &str| match phase {
        Some(p) => c.aggregate.phase(p, m),
        None => c.aggregate.get(m),
    };
    let generated = Stat::of(c.runs.iter().map(|r| {
        let s = phase.map_or(&r.summary, |p| &r.phases[p.index()]);
        Some(s.generated as f64)
    }));
    PlotRow {
        protocol: c.config.protocol.name(),
        nodes: c.config.node_count,
        condition: c.config.condition.number(),
        phase: phase.map(|p| p.0),
        runs: c.runs.len(),
        generated_mean: generated.mean,
        delivered_mean: stat("delivered").mean,
        pdr_mean: stat("pdr").mean,
        pdr_std: stat("pdr").std,
        oe_mean: stat("oe").mean,
        oe_std: stat("oe").std,
        latency_mean: stat("latency").mean,
        latency_std: stat("latency").std,
        jitter_mean: stat("jitter").mean,
        jitter_std: stat("jitter").std,
    }
}

pub fn write_plot(results: &[CampaignResult], layout: PlotLayout, path: &Path) -> Result<(), CampaignError> {
    if results.is_empty() {
        return Err(CampaignError::Empty);
    }
    let mut order: Vec<&CampaignResult> = results.iter().collect();
    let key = |c: &CampaignResult| (c.config.protocol, c.config.node_count, c.config.condition);
    match layout {
        PlotLayout::BySize => order.sort_by_key(|c| {
            let (p, n, k) = key(c);
            (k, p, n)
        }),
        PlotLayout::ByPhase => order.sort_by_key(|c| key(c)),
        PlotLayout::ByCondition => order.sort_by_key(|c| {
            let (p, n, k) = key(c);
            (n, p, k)
        }),
    }
    let mut w = create(path)?;
    for c in order {
        match layout {
            PlotLayout::ByPhase => {
                for p in Phase::ALL {
                    w.serialize(plot_row(c, Some(p)))?;
                }
            }
            _ => w.serialize(plot_row(c, None))?,
        }
    }
    finish(w, path)
}

pub fn write_trace(trace: &[TraceRecord], path: &Path) -> Result<(), CampaignError> {
    let mut w = create(path)?;
    if trace.is_empty() {
        w.write_record(["t", "node", "event", "frame", "packet", "peer"])?;
    }
    for r in trace {
        w.serialize(r)?;
    }
    finish(w, path)
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    node: u16,
    group: usize,
    x: f64,
    y: f64,
    z: f64,
    psi: f64,
    theta: f64,
    gamma: f64,
}

/// `trajectories.csv`: local east/north/up position and attitude per node
/// on the export grid.
pub fn write_trajectories(spec: &FormationSpec, path: &Path) -> Result<(), CampaignError> {
    let mut w = create(path)?;
    for i in 0..spec.sample_count() {
        let positions = spec.positions_at_sample(i);
        for (g, group) in spec.groups.iter().enumerate() {
            let s = &group.track[i];
            for node in &group.nodes {
                let p = positions[node.index()];
                w.serialize(TrajectoryRow {
                    t: s.t,
                    node: node.0,
                    group: g,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    psi: s.attitude.psi,
                    theta: s.attitude.theta,
                    gamma: s.attitude.gamma,
                })?;
            }
        }
    }
    finish(w, path)
}

#[derive(Serialize)]
struct LinkRow {
    t: f64,
    a: u16,
    b: u16,
    change: &'static str,
    components: usize,
}

/// `links.csv`: link up/down events of a timeline with the component
/// count after each change.
pub fn write_link_events(timeline: &ConnectivityTimeline, skip: &[bool], path: &Path) -> Result<(), CampaignError> {
    let mut w = create(path)?;
    for e in timeline.events() {
        let idx = timeline.sample_index(e.t);
        w.serialize(LinkRow {
            t: e.t,
            a: e.a.0,
            b: e.b.0,
            change: match e.change {
                LinkChange::Up => "up",
                LinkChange::Down => "down",
            },
            components: timeline.sample(idx).component_count(skip),
        })?;
    }
    finish(w, path)
}

/// Writes every standard output file into `dir`.
pub fn write_outputs(results: &[CampaignResult], dir: &Path) -> Result<Vec<PathBuf>, CampaignError> {
    if results.is_empty() {
        return Err(CampaignError::Empty);
    }
    std::fs::create_dir_all(dir).map_err(|source| CampaignError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    let mut put = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_runs(results, &put("runs.csv".into()))?;
    write_aggregate(results, &put("aggregate.csv".into()))?;
    write_by_phase(results, &put("by_phase.csv".into()))?;
    for layout in [PlotLayout::BySize, PlotLayout::ByPhase, PlotLayout::ByCondition] {
        write_plot(results, layout, &put(layout.file_name().into()))?;
    }

    let single = results.len() == 1;
    for c in results {
        for r in c.runs.iter().filter(|r| !r.trace.is_empty()) {
            let name = if single { format!("trace_{}.csv", r.run) } else { format!("trace_{}_{}.csv", c.label(), r.run) };
            write_trace(&r.trace, &put(name))?;
        }
    }

    let mut sizes: Vec<&ScenarioConfig> = Vec::new();
    for c in results {
        if !sizes.iter().any(|s| s.node_count == c.config.node_count) {
            sizes.push(&c.config);
        }
    }
    for cfg in &sizes {
        let spec = build_scenario(cfg.node_count, &cfg.phases, &cfg.formation, &cfg.earth_model())?;
        let suffix = if sizes.len() == 1 { String::new() } else { format!("_{}", cfg.node_count) };
        write_trajectories(&spec, &put(format!("trajectories{suffix}.csv")))?;
        let timeline = build_timeline(&spec, cfg.radio.comm_range(), &[]);
        write_link_events(&timeline, &vec![false; cfg.node_count], &put(format!("links{suffix}.csv")))?;
    }
    Ok(written)
}
