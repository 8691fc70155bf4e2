//! Benchmark harness: a single OCSVM-filtered run against a threshold sweep,
//! and the ν sweep.
//!
//! Wall times cover propagation, filtering and cover assembly. The sweep
//! also pays for the modularity evaluations it needs to pick its best `r`.
//! Propagation runs once per seed and its time is charged to every method,
//! so methods differ only in their post-processing. I/O is never timed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{build_cover, filter_memories_sequential, Cover, FilterConfig, LabelFilter};
use crate::metrics::{crisp_projection, modularity};
use crate::propagation::{run_propagation, PropagationConfig, PropagationState};
use crate::rng;
use crate::spatial_graph::SpatialGraph;

pub const TIMING_NOTE: &str = "wall time covers propagation, filtering and cover assembly; the r-sweep adds its modularity evaluations; I/O excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Gip { nu: f64 },
    RSweep { grid: Vec<f64> },
}

impl Method {
    pub fn default_sweep_grid() -> Vec<f64> {
        (1..=10).map(|k| k as f64 * 0.05).collect()
    }

    pub fn name(&self) -> String {
        match self {
            Method::Gip { nu } => format!("GIP (nu={nu})"),
            Method::RSweep { grid } => format!("r-sweep ({} r)", grid.len()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Method::Gip { nu } => FilterConfig::with_nu(*nu).validate(),
            Method::RSweep { grid } => {
                if grid.is_empty() {
                    return Err(Error::param("grid", "r grid is empty"));
                }
                if let Some(r) = grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
                    return Err(Error::param("grid", format!("r = {r} outside (0, 1]")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub wall_seconds: f64,
    pub modularity: f64,
    pub communities: usize,
    pub overlap_nodes: usize,
    /// Best threshold for sweep runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub runs: Vec<RunRecord>,
}

impl MethodResult {
    pub fn time_stats(&self) -> (f64, f64) {
        mean_sd(self.runs.iter().map(|r| r.wall_seconds))
    }

    pub fn modularity_stats(&self) -> (f64, f64) {
        mean_sd(self.runs.iter().map(|r| r.modularity))
    }

    pub fn total_time(&self) -> f64 {
        self.runs.iter().map(|r| r.wall_seconds).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub methods: Vec<MethodResult>,
    pub iterations: u32,
    pub timing: String,
}

/// Population mean and standard deviation.
pub fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

struct Outcome {
    seconds: f64,
    q: f64,
    cover: Cover,
    chosen_r: Option<f64>,
}

fn cover_quality(graph: &SpatialGraph, state: &PropagationState, cover: &Cover) -> Result<f64> {
    modularity(graph, &crisp_projection(state, cover)?)
}

fn apply(graph: &SpatialGraph, state: &PropagationState, method: &Method) -> Result<Outcome> {
    match method {
        Method::Gip { nu } => {
            let start = Instant::now();
            let retained = filter_memories_sequential(state, &LabelFilter::Ocsvm(FilterConfig::with_nu(*nu)))?;
            let cover = build_cover(&retained)?;
            let seconds = start.elapsed().as_secs_f64();
            let q = cover_quality(graph, state, &cover)?;
            Ok(Outcome { seconds, q, cover, chosen_r: None })
        }
        Method::RSweep { grid } => {
            let start = Instant::now();
            let mut best: Option<(f64, Cover, f64)> = None;
            for &r in grid {
                let retained = filter_memories_sequential(state, &LabelFilter::Threshold(r))?;
                let cover = build_cover(&retained)?;
                let q = cover_quality(graph, state, &cover)?;
                if best.as_ref().is_none_or(|b| q > b.0) {
                    best = Some((q, cover, r));
                }
            }
            let seconds = start.elapsed().as_secs_f64();
            let (q, cover, r) = best.expect("grid validated non-empty");
            Ok(Outcome { seconds, q, cover, chosen_r: Some(r) })
        }
    }
}

/// Runs every method on every seed. Seeds fan out over the rayon pool while
/// each run stays on one thread.
pub fn run_benchmark(
    graph: &SpatialGraph,
    methods: &[Method],
    seeds: &[u64],
    base: &PropagationConfig,
) -> Result<BenchResult> {
    if seeds.is_empty() {
        return Err(Error::param("seeds", "need at least one seed"));
    }
    if methods.is_empty() {
        return Err(Error::param("methods", "need at least one method"));
    }
    for m in methods {
        m.validate()?;
    }
    base.validate()?;
    let per_seed: Vec<Vec<RunRecord>> = seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let state = run_propagation(graph, &PropagationConfig { seed, ..*base })?;
            let propagation = start.elapsed().as_secs_f64();
            methods
                .iter()
                .map(|m| {
                    let out = apply(graph, &state, m)?;
                    Ok(RunRecord {
                        seed,
                        wall_seconds: propagation + out.seconds,
                        modularity: out.q,
                        communities: out.cover.community_count(),
                        overlap_nodes: out.cover.overlap_count(),
                        chosen_r: out.chosen_r,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let methods = methods
        .iter()
        .enumerate()
        .map(|(k, m)| MethodResult { method: m.clone(), runs: per_seed.iter().map(|runs| runs[k].clone()).collect() })
        .collect();
    Ok(BenchResult { methods, iterations: base.iterations, timing: TIMING_NOTE.to_string() })
}

const NAME_WIDTH: usize = 22;

impl BenchResult {
    pub fn summary(&self) -> Vec<TableRow> {
        self.methods
            .iter()
            .map(|m| {
                let (time_mean, time_sd) = m.time_stats();
                let (q_mean, q_sd) = m.modularity_stats();
                TableRow { method: m.method.name(), time_mean, time_sd, q_mean, q_sd }
            })
            .collect()
    }

    /// Two metrics by average and SD, one row per method.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let head = format!("{:<NAME_WIDTH$}  {:<48}  {}", "Method", "Time (s)", "Modularity");
        let _ = writeln!(s, "{head}");
        let _ = writeln!(s, "{:<NAME_WIDTH$}  {:<23}  {:<23}  {:<23}  SD", "", "Average", "SD", "Average");
        for m in &self.methods {
            let (tm, ts) = m.time_stats();
            let (qm, qs) = m.modularity_stats();
            // shortest round-trip repr, so the table parses back exactly
            let line = format!("{:<NAME_WIDTH$}  {tm:<23}  {ts:<23}  {qm:<23}  {qs:<23}", m.method.name());
            let _ = writeln!(s, "{}", line.trim_end());
        }
        s
    }
}

/// A row read back from [`BenchResult::to_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub time_mean: f64,
    pub time_sd: f64,
    pub q_mean: f64,
    pub q_sd: f64,
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let bad = |line: usize, msg: &str| Error::parse("bench table", format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match (lines.next(), lines.next()) {
        (Some((_, h1)), Some((_, h2))) if h1.starts_with("Method") && h2.trim_start().starts_with("Average") => {}
        _ => return Err(bad(1, "missing Time/Modularity header")),
    }
    let mut rows = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if line.len() < NAME_WIDTH {
            return Err(bad(k + 1, "row too short"));
        }
        let (name, rest) = line.split_at(NAME_WIDTH);
        let nums: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(k + 1, &format!("not a number: {t}"))))
            .collect::<Result<_>>()?;
        if nums.len() != 4 {
            return Err(bad(k + 1, "expected four numbers"));
        }
        rows.push(TableRow {
            method: name.trim_end().to_string(),
            time_mean: nums[0],
            time_sd: nums[1],
            q_mean: nums[2],
            q_sd: nums[3],
        });
    }
    Ok(rows)
}

pub fn default_nu_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuRow {
    pub nu: f64,
    pub mean_communities: f64,
    pub mean_overlap_nodes: f64,
    pub median_communities: f64,
    pub median_overlap_nodes: f64,
}

/// Community and overlap-node counts per ν. Propagation runs once per seed
/// and every ν filters the same memories.
pub fn sweep_nu(graph: &SpatialGraph, grid: &[f64], seeds: &[u64], base: &PropagationConfig) -> Result<Vec<NuRow>> {
    if grid.is_empty() {
        return Err(Error::param("nu", "ν grid is empty"));
    }
    for &nu in grid {
        FilterConfig::with_nu(nu).validate()?;
    }
    if seeds.is_empty() {
        return Err(Error::param("seeds", "need at least one seed"));
    }
    base.validate()?;
    let counts: Vec<Vec<(f64, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            let state = run_propagation(graph, &PropagationConfig { seed, ..*base })?;
            grid.iter()
                .map(|&nu| {
                    let retained = filter_memories_sequential(&state, &LabelFilter::Ocsvm(FilterConfig::with_nu(nu)))?;
                    let cover = build_cover(&retained)?;
                    Ok((cover.community_count() as f64, cover.overlap_count() as f64))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &nu)| {
            let c: Vec<f64> = counts.iter().map(|s| s[k].0).collect();
            let o: Vec<f64> = counts.iter().map(|s| s[k].1).collect();
            NuRow {
                nu,
                mean_communities: mean_sd(c.iter().copied()).0,
                mean_overlap_nodes: mean_sd(o.iter().copied()).0,
                median_communities: median(&c),
                median_overlap_nodes: median(&o),
            }
        })
        .collect())
}

pub fn nu_table(rows: &[NuRow]) -> String {
    let mut s = format!("{:<6}  {:>11}  {:>13}\n", "nu", "communities", "overlap nodes");
    for r in rows {
        let _ = writeln!(s, "{:<6.2}  {:>11.2}  {:>13.2}", r.nu, r.mean_communities, r.mean_overlap_nodes);
    }
    s
}

pub fn nu_csv(rows: &[NuRow]) -> String {
    let mut s = String::from("nu,mean_communities,mean_overlap_nodes,median_communities,median_overlap_nodes\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.nu, r.mean_communities, r.mean_overlap_nodes, r.median_communities, r.median_overlap_nodes
        );
    }
    s
}

/// Relabels the nodes of `cover` by a uniform random permutation, keeping
/// community sizes and per-node membership counts.
pub fn random_cover_like(cover: &Cover, seed: u64) -> Result<Cover> {
    let mut perm: Vec<usize> = (0..cover.node_count()).collect();
    perm.shuffle(&mut rng::stream(seed, rng::STREAM_BASELINE));
    let mut memberships = vec![BTreeSet::new(); cover.node_count()];
    for (node, ms) in cover.memberships().iter().enumerate() {
        memberships[perm[node]] = ms.clone();
    }
    Cover::from_memberships(&memberships)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blocks() -> SpatialGraph {
        let mut edges = Vec::new();
        for b in 0..2 {
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        edges.push((b * 5 + i, b * 5 + j, 1.0));
                    }
                }
            }
        }
        edges.push((4, 5, 0.05));
        SpatialGraph::from_weights(10, &edges).unwrap()
    }

    #[test]
    fn single_seed_has_zero_sd() {
        let g = two_blocks();
        let res = run_benchmark(&g, &[Method::Gip { nu: 0.8 }], &[7], &PropagationConfig::default()).unwrap();
        assert_eq!(res.methods[0].time_stats().1, 0.0);
        assert_eq!(res.methods[0].modularity_stats().1, 0.0);
        assert!(res.methods[0].runs[0].wall_seconds > 0.0);
    }

    #[test]
    fn sweep_reports_its_best_threshold() {
        let g = two_blocks();
        let grid = Method::default_sweep_grid();
        let res = run_benchmark(&g, &[Method::RSweep { grid: grid.clone() }], &[1, 2], &PropagationConfig::default())
            .unwrap();
        for run in &res.methods[0].runs {
            let state = run_propagation(&g, &PropagationConfig::with_seed(run.seed)).unwrap();
            let best = grid
                .iter()
                .map(|&r| {
                    let cover =
                        build_cover(&filter_memories_sequential(&state, &LabelFilter::Threshold(r)).unwrap()).unwrap();
                    cover_quality(&g, &state, &cover).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(run.modularity, best);
            assert!(grid.contains(&run.chosen_r.unwrap()));
        }
    }

    #[test]
    fn table_round_trip() {
        let g = two_blocks();
        let methods = [Method::Gip { nu: 0.8 }, Method::RSweep { grid: Method::default_sweep_grid() }];
        let res = run_benchmark(&g, &methods, &[1, 2, 3], &PropagationConfig::default()).unwrap();
        let table = res.to_table();
        let rows = parse_table(&table).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, "GIP (nu=0.8)");
        assert_eq!(rows[1].method, "r-sweep (10 r)");
        assert_eq!(rows, res.summary());
        assert!(parse_table("nonsense").is_err());
    }

    #[test]
    fn nu_sweep_single_value() {
        let g = two_blocks();
        let rows = sweep_nu(&g, &[0.5], &[1, 2], &PropagationConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(nu_csv(&rows).lines().count() == 2);
        assert!(sweep_nu(&g, &[0.0], &[1], &PropagationConfig::default()).is_err());
        assert!(sweep_nu(&g, &[], &[1], &PropagationConfig::default()).is_err());
    }

    #[test]
    fn bad_inputs() {
        let g = two_blocks();
        let cfg = PropagationConfig::default();
        assert!(run_benchmark(&g, &[Method::Gip { nu: 0.8 }], &[], &cfg).is_err());
        assert!(run_benchmark(&g, &[Method::RSweep { grid: vec![] }], &[1], &cfg).is_err());
        assert!(run_benchmark(&g, &[Method::Gip { nu: 1.5 }], &[1], &cfg).is_err());
    }

    #[test]
    fn random_cover_keeps_sizes() {
        let ms: Vec<BTreeSet<usize>> =
            (0..12).map(|i| if i == 5 { BTreeSet::from([0, 1]) } else { BTreeSet::from([i / 6]) }).collect();
        let cover = Cover::from_memberships(&ms).unwrap();
        let rand = random_cover_like(&cover, 3).unwrap();
        let sizes = |c: &Cover| {
            let mut v: Vec<usize> = c.communities().iter().map(|s| s.len()).collect();
            v.sort();
            v
        };
        assert_eq!(sizes(&cover), sizes(&rand));
        assert_eq!(rand.overlap_count(), 1);
    }

    #[test]
    fn mean_sd_and_median() {
        let (m, s) = mean_sd([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0].into_iter());
        assert_eq!((m, s), (5.0, 2.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
