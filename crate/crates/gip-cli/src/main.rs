mod config;
mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gip_core::bench::{self, Method};
use gip_core::filter::{build_cover, filter_memories_sequential, read_cover_csv, FilterConfig, LabelFilter};
use gip_core::metrics::{crisp_projection, modularity, overlap_report};
use gip_core::propagation::{run_propagation, NeighborMode, PropagationConfig};
use gip_core::spatial_graph::io::{load_edge_list, load_trips, load_zones, write_edge_list, TripInput};
use gip_core::spatial_graph::{aggregate_flows, build_graph, FlowMatrix};
use gip_core::synth::{generate_planted, PlantedConfig};
use gip_core::{DistanceMetric, Error};
use serde_json::json;

use config::ConfigFile;
use manifest::{sha256_hex, RunOutput};

const MODULARITY_NOTE: &str =
    "modularity is that of the crisp projection: each zone goes to its retained community with the highest memory count";

#[derive(Parser)]
#[command(name = "gip", version, about = "Overlapping spatial community detection from trip flows")]
struct Cli {
    /// Output directory; every file a command writes lands here.
    #[arg(long, global = true, default_value = "gip-out")]
    out: PathBuf,
    /// Seed for all randomness. When absent a seed is drawn and recorded in
    /// the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for commands that run several seeds or ν values.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate trips onto zones and write the weighted edge list.
    BuildGraph(BuildGraphArgs),
    /// Run propagation and label filtering on an edge list.
    Detect(DetectArgs),
    /// Community and overlap counts across a ν grid.
    SweepNu(SweepArgs),
    /// Time and modularity of a single filtered run against a threshold sweep.
    Bench(BenchArgs),
    /// Generate a planted overlapping-community dataset.
    Synth(SynthArgs),
    /// Compare zone attributes between overlapping and other zones.
    Report(ReportArgs),
}

#[derive(Args)]
struct GeometryArgs {
    /// Coordinates are planar meters rather than lon/lat degrees.
    #[arg(long)]
    planar: bool,
}

#[derive(Args)]
struct PropagationArgs {
    /// Propagation iterations.
    #[arg(short = 'T', long = "iterations", visible_alias = "T")]
    iterations: Option<u32>,
    /// symmetrized, in-edges or out-edges.
    #[arg(long)]
    neighbor_mode: Option<NeighborMode>,
}

#[derive(Args)]
struct BuildGraphArgs {
    /// Zones as CSV (id,lon,lat,...) or GeoJSON.
    #[arg(long)]
    zones: PathBuf,
    /// Trips as o_lon,o_lat,d_lon,d_lat[,timestamp] or o_id,d_id,count.
    #[arg(long)]
    trips: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Drop zone pairs with fewer trips than this.
    #[arg(long)]
    min_flow: Option<u64>,
}

#[derive(Args)]
struct DetectArgs {
    /// Edge list written by build-graph.
    #[arg(long)]
    graph: PathBuf,
    /// Zones, to include isolated zones and to write GeoJSON.
    #[arg(long)]
    zones: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// One-class SVM ν in (0, 1].
    #[arg(long)]
    nu: Option<f64>,
    /// `ocsvm` or `threshold:<r>`.
    #[arg(long)]
    filter: Option<String>,
    #[command(flatten)]
    propagation: PropagationArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Comma-separated ν values; default 0.1 to 1.0 in steps of 0.1.
    #[arg(long, value_delimiter = ',')]
    nu_grid: Option<Vec<f64>>,
    /// Number of seeds, counted up from --seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[command(flatten)]
    propagation: PropagationArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    nu: Option<f64>,
    /// Comma-separated thresholds for the sweep; default 0.05 to 0.50.
    #[arg(long, value_delimiter = ',')]
    r_grid: Option<Vec<f64>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[command(flatten)]
    propagation: PropagationArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long)]
    zones_per_community: Option<usize>,
    #[arg(long)]
    overlap_zones: Option<usize>,
    #[arg(long)]
    lambda_in: Option<f64>,
    #[arg(long)]
    lambda_out: Option<f64>,
    /// Grid cell size in meters.
    #[arg(long)]
    grid_spacing: Option<f64>,
    #[arg(long)]
    block_width: Option<usize>,
    #[arg(long)]
    blocks_per_row: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// Cover CSV written by detect.
    #[arg(long)]
    cover: PathBuf,
    #[arg(long)]
    zones: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Comma-separated attribute names; default every numeric attribute.
    #[arg(long, value_delimiter = ',')]
    attributes: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

/// A problem with how the tool was invoked.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

struct Ctx {
    out: RunOutput,
    cfg: ConfigFile,
    seed_flag: Option<u64>,
}

impl Ctx {
    fn seed(&mut self) -> u64 {
        let (seed, source) = match (self.seed_flag, self.cfg.seed) {
            (Some(s), _) => (s, "flag"),
            (None, Some(s)) => (s, "config"),
            (None, None) => (rand::random::<u64>(), "drawn"),
        };
        self.out.set_seed(seed, source);
        if source == "drawn" {
            eprintln!("gip: no seed given, drew {seed}");
        }
        seed
    }

    fn metric(&self, g: &GeometryArgs) -> DistanceMetric {
        if g.planar || self.cfg.planar.unwrap_or(false) {
            DistanceMetric::Planar
        } else {
            DistanceMetric::Haversine
        }
    }

    fn propagation(&self, p: &PropagationArgs, seed: u64) -> PropagationConfig {
        let d = PropagationConfig::default();
        PropagationConfig {
            iterations: p.iterations.or(self.cfg.iterations).unwrap_or(d.iterations),
            seed,
            neighbor_mode: p.neighbor_mode.or(self.cfg.neighbor_mode).unwrap_or(d.neighbor_mode),
        }
    }

    fn seeds(&self, flag: Option<usize>, first: u64) -> anyhow::Result<Vec<u64>> {
        let n = flag.or(self.cfg.seeds).unwrap_or(10);
        if n == 0 {
            return Err(UsageError("--seeds must be at least 1".into()).into());
        }
        Ok((0..n as u64).map(|k| first.wrapping_add(k)).collect())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            report_failure(2, "usage", first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let input = e.downcast_ref::<UsageError>().is_some()
                || e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_input_error));
            let (code, kind) = if input { (2, "input") } else { (1, "internal") };
            report_failure(code, kind, &chain_message(&e));
            ExitCode::from(code)
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn chain_message(e: &anyhow::Error) -> String {
    let mut message = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !message.contains(&text) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&text);
        }
    }
    message
}

/// One JSON object on one stderr line.
fn report_failure(code: u8, kind: &str, message: &str) {
    eprintln!("{}", json!({"status": "error", "exit_code": code, "kind": kind, "message": message}));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let name = match &cli.command {
        Command::BuildGraph(_) => "build-graph",
        Command::Detect(_) => "detect",
        Command::SweepNu(_) => "sweep-nu",
        Command::Bench(_) => "bench",
        Command::Synth(_) => "synth",
        Command::Report(_) => "report",
    };
    let mut out = RunOutput::create(&cli.out, name)?;
    let cfg = match &cli.config {
        Some(path) => ConfigFile::from_bytes(&out.input(path)?, path)?,
        None => ConfigFile::default(),
    };
    if let Some(jobs) = cli.jobs.or(cfg.jobs) {
        if jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker threads")?;
    }
    let mut ctx = Ctx { out, cfg, seed_flag: cli.seed };
    match &cli.command {
        Command::BuildGraph(a) => cmd_build_graph(&mut ctx, a)?,
        Command::Detect(a) => cmd_detect(&mut ctx, a)?,
        Command::SweepNu(a) => cmd_sweep_nu(&mut ctx, a)?,
        Command::Bench(a) => cmd_bench(&mut ctx, a)?,
        Command::Synth(a) => cmd_synth(&mut ctx, a)?,
        Command::Report(a) => cmd_report(&mut ctx, a)?,
    }
    ctx.out.finish()?;
    Ok(())
}

fn edge_list_bytes(graph: &gip_core::SpatialGraph) -> Vec<u8> {
    let mut buf = Vec::new();
    write_edge_list(graph, &mut buf).expect("writing to memory");
    buf
}

fn cmd_build_graph(ctx: &mut Ctx, a: &BuildGraphArgs) -> anyhow::Result<()> {
    let metric = ctx.metric(&a.geometry);
    let min_flow = a.min_flow.or(ctx.cfg.min_flow).unwrap_or(1);
    ctx.out.input(&a.zones)?;
    ctx.out.input(&a.trips)?;
    let zones = load_zones(&a.zones, metric)?;
    let (flows, diag) = match load_trips(&a.trips, metric)? {
        TripInput::Trips(trips) => aggregate_flows(&trips, &zones, min_flow)?,
        TripInput::Aggregated(rows) => {
            if let Some((o, d, _)) = rows.iter().find(|(o, d, _)| zones.get(o).is_none() || zones.get(d).is_none()) {
                let missing = if zones.get(o).is_none() { o } else { d };
                return Err(Error::UnknownZone(missing.clone()).into());
            }
            FlowMatrix::from_counts(rows, min_flow)?
        }
    };
    let graph = build_graph(&flows, &zones)?;
    ctx.out.set_config(json!({
        "zones": a.zones.display().to_string(),
        "trips": a.trips.display().to_string(),
        "metric": if metric == DistanceMetric::Planar { "planar" } else { "haversine" },
        "min_flow": min_flow,
    }));
    ctx.out.write("graph.csv", &edge_list_bytes(&graph))?;
    ctx.out.write_json("flow_diagnostics.json", &diag)?;
    println!(
        "nodes={} edges={} trips={} unresolved={} self_loops={} dropped_pairs={}",
        graph.node_count(),
        graph.edge_count(),
        diag.trips_total,
        diag.unresolved_trips,
        diag.self_loop_trips,
        diag.below_min_pairs
    );
    Ok(())
}

fn resolve_filter(ctx: &Ctx, filter: Option<&str>, nu: Option<f64>) -> anyhow::Result<LabelFilter> {
    let spec = filter.or(ctx.cfg.filter.as_deref()).unwrap_or("ocsvm");
    let nu = nu.or(ctx.cfg.nu);
    let parsed: LabelFilter = spec.parse()?;
    Ok(match parsed {
        LabelFilter::Ocsvm(cfg) => {
            let cfg = FilterConfig { nu: nu.unwrap_or(cfg.nu), ..cfg };
            cfg.validate()?;
            LabelFilter::Ocsvm(cfg)
        }
        other => {
            if let Some(nu) = nu {
                FilterConfig::with_nu(nu).validate()?;
            }
            other
        }
    })
}

fn graph_with_zones(
    ctx: &mut Ctx,
    graph: &Path,
    zones: Option<&Path>,
    metric: DistanceMetric,
) -> anyhow::Result<(gip_core::SpatialGraph, Option<gip_core::ZoneSet>)> {
    ctx.out.input(graph)?;
    let zones = match zones {
        Some(path) => {
            ctx.out.input(path)?;
            Some(load_zones(path, metric)?)
        }
        None => None,
    };
    let extra: Vec<String> = zones.iter().flat_map(|z| z.ids().map(String::from)).collect();
    Ok((load_edge_list(graph, &extra)?, zones))
}

fn cmd_detect(ctx: &mut Ctx, a: &DetectArgs) -> anyhow::Result<()> {
    let filter = resolve_filter(ctx, a.filter.as_deref(), a.nu)?;
    let metric = ctx.metric(&a.geometry);
    let (graph, zones) = graph_with_zones(ctx, &a.graph, a.zones.as_deref(), metric)?;
    let seed = ctx.seed();
    let pcfg = ctx.propagation(&a.propagation, seed);
    pcfg.validate()?;
    let state = run_propagation(&graph, &pcfg)?;
    let retained = filter_memories_sequential(&state, &filter)?;
    let cover = build_cover(&retained)?;
    let q = match modularity(&graph, &crisp_projection(&state, &cover)?) {
        Ok(q) => Some(q),
        Err(Error::ZeroWeight) => None,
        Err(e) => return Err(e.into()),
    };
    let ids = graph.node_ids().to_vec();
    let filter_name = match filter {
        LabelFilter::Ocsvm(c) => format!("ocsvm(nu={})", c.nu),
        LabelFilter::Threshold(r) => format!("threshold:{r}"),
    };
    ctx.out.set_config(json!({
        "graph": a.graph.display().to_string(),
        "zones": a.zones.as_ref().map(|p| p.display().to_string()),
        "filter": filter_name,
        "iterations": pcfg.iterations,
        "neighbor_mode": pcfg.neighbor_mode,
    }));
    ctx.out.note(MODULARITY_NOTE);

    let mut csv = Vec::new();
    cover.write_csv(&ids, &mut csv)?;
    ctx.out.write("cover.csv", &csv)?;
    ctx.out.write_json("cover.json", &cover.to_json(&ids))?;
    if let Some(z) = zones.as_ref().filter(|z| z.has_polygons()) {
        ctx.out.write_json("cover.geojson", &cover.to_geojson(&ids, z.zones()))?;
    }
    let mut mem = Vec::new();
    state.write_memory_csv(&ids, &mut mem)?;
    ctx.out.write("memories.csv", &mem)?;
    ctx.out.write_json(
        "summary.json",
        &json!({
            "communities": cover.community_count(),
            "overlap_zones": cover.overlap_count(),
            "modularity": q,
            "modularity_convention": MODULARITY_NOTE,
            "seed": seed,
        }),
    )?;
    let q_text = q.map_or_else(|| "undefined".to_string(), |q| format!("{q:.6}"));
    println!(
        "communities={} overlap_zones={} modularity={q_text} seed={seed}",
        cover.community_count(),
        cover.overlap_count()
    );
    Ok(())
}

fn cmd_sweep_nu(ctx: &mut Ctx, a: &SweepArgs) -> anyhow::Result<()> {
    let grid = a.nu_grid.clone().or_else(|| ctx.cfg.nu_grid.clone()).unwrap_or_else(bench::default_nu_grid);
    let (graph, _) = graph_with_zones(ctx, &a.graph, None, DistanceMetric::Haversine)?;
    let seed = ctx.seed();
    let seeds = ctx.seeds(a.seeds, seed)?;
    let pcfg = ctx.propagation(&a.propagation, seed);
    let rows = bench::sweep_nu(&graph, &grid, &seeds, &pcfg)?;
    ctx.out.set_config(json!({
        "graph": a.graph.display().to_string(),
        "nu_grid": grid,
        "seeds": seeds,
        "iterations": pcfg.iterations,
        "neighbor_mode": pcfg.neighbor_mode,
    }));
    let table = bench::nu_table(&rows);
    ctx.out.write("nu_sweep.txt", table.as_bytes())?;
    ctx.out.write("nu_sweep.csv", bench::nu_csv(&rows).as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_bench(ctx: &mut Ctx, a: &BenchArgs) -> anyhow::Result<()> {
    let nu = a.nu.or(ctx.cfg.nu).unwrap_or(FilterConfig::default().nu);
    let grid = a.r_grid.clone().or_else(|| ctx.cfg.r_grid.clone()).unwrap_or_else(Method::default_sweep_grid);
    let (graph, _) = graph_with_zones(ctx, &a.graph, None, DistanceMetric::Haversine)?;
    let seed = ctx.seed();
    let seeds = ctx.seeds(a.seeds, seed)?;
    let pcfg = ctx.propagation(&a.propagation, seed);
    let methods = [Method::Gip { nu }, Method::RSweep { grid: grid.clone() }];
    let result = bench::run_benchmark(&graph, &methods, &seeds, &pcfg)?;
    ctx.out.set_config(json!({
        "graph": a.graph.display().to_string(),
        "nu": nu,
        "r_grid": grid,
        "seeds": seeds,
        "iterations": pcfg.iterations,
        "neighbor_mode": pcfg.neighbor_mode,
    }));
    ctx.out.note(bench::TIMING_NOTE);
    ctx.out.note(MODULARITY_NOTE);
    let table = result.to_table();
    ctx.out.write("bench.txt", table.as_bytes())?;
    ctx.out.write_json("bench.json", &result)?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(ctx: &mut Ctx, a: &SynthArgs) -> anyhow::Result<()> {
    let base = ctx.cfg.planted.clone().unwrap_or_default();
    let seed = ctx.seed();
    let cfg = PlantedConfig {
        communities: a.communities.unwrap_or(base.communities),
        zones_per_community: a.zones_per_community.unwrap_or(base.zones_per_community),
        overlap_zones: a.overlap_zones.unwrap_or(base.overlap_zones),
        lambda_in: a.lambda_in.unwrap_or(base.lambda_in),
        lambda_out: a.lambda_out.unwrap_or(base.lambda_out),
        grid_spacing: a.grid_spacing.unwrap_or(base.grid_spacing),
        block_width: a.block_width.unwrap_or(base.block_width),
        blocks_per_row: a.blocks_per_row.unwrap_or(base.blocks_per_row),
        seed,
    };
    let inst = generate_planted(&cfg)?;
    let graph = build_graph(&inst.flows, &inst.zones)?;
    ctx.out.set_config(serde_json::to_value(&cfg)?);

    let mut zones = String::from("id,lon,lat\n");
    for z in inst.zones.zones() {
        let _ = writeln!(zones, "{},{},{}", z.id, z.centroid.lon, z.centroid.lat);
    }
    let mut trips = String::from("o_id,d_id,count\n");
    for (o, d, c) in inst.flows.iter() {
        let _ = writeln!(trips, "{o},{d},{c}");
    }
    let ids: Vec<String> = inst.zones.ids().map(String::from).collect();
    let mut truth = Vec::new();
    inst.ground_truth.write_csv(&ids, &mut truth)?;
    let as_config = ConfigFile { seed: Some(seed), planar: Some(true), planted: Some(cfg), ..Default::default() };

    ctx.out.write("zones.csv", zones.as_bytes())?;
    ctx.out.write("trips.csv", trips.as_bytes())?;
    ctx.out.write("truth.csv", &truth)?;
    ctx.out.write("graph.csv", &edge_list_bytes(&graph))?;
    ctx.out.write_json("synth.json", &as_config)?;
    ctx.out.note("zones.csv holds planar meters; pass --planar when loading it");
    let digest = sha256_hex(&[zones.as_bytes(), trips.as_bytes()].concat());
    println!(
        "zones={} pairs={} overlap_zones={} dataset_sha256={digest}",
        inst.zones.len(),
        inst.flows.len(),
        inst.ground_truth.overlap_count()
    );
    Ok(())
}

fn cmd_report(ctx: &mut Ctx, a: &ReportArgs) -> anyhow::Result<()> {
    let metric = ctx.metric(&a.geometry);
    let cover_bytes = ctx.out.input(&a.cover)?;
    ctx.out.input(&a.zones)?;
    let (ids, cover) = read_cover_csv(&cover_bytes[..], &a.cover.display().to_string())?;
    let zones = load_zones(&a.zones, metric)?;
    if let Some(id) = ids.iter().find(|id| zones.get(id).is_none()) {
        return Err(Error::UnknownZone(id.clone()).into());
    }
    let attributes = a.attributes.clone().or_else(|| ctx.cfg.attributes.clone()).unwrap_or_default();
    let report = overlap_report(&cover, &ids, &zones, &attributes)?;
    ctx.out.set_config(json!({
        "cover": a.cover.display().to_string(),
        "zones": a.zones.display().to_string(),
        "attributes": attributes,
    }));
    let (name, body) = match a.format {
        Format::Text => ("report.txt", report.to_text()),
        Format::Csv => ("report.csv", report.to_csv()),
        Format::Json => ("report.json", serde_json::to_string_pretty(&report)? + "\n"),
    };
    ctx.out.write(name, body.as_bytes())?;
    print!("{body}");
    Ok(())
}
