//! Weighted speaker-listener label propagation.
//!
//! Each node starts with a memory holding its own index as the only label.
//! In every iteration nodes are visited in a freshly shuffled order; each
//! neighbor of the visited node (the listener) speaks one label sampled from
//! its own memory, and the listener stores the label whose offers carry the
//! largest summed edge weight. Updates are asynchronous: a memory appended
//! earlier in the iteration is already visible to later speakers.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RunRng};
use crate::spatial_graph::SpatialGraph;

/// A community label; always the index of the node that introduced it.
pub type Label = u32;

/// Multiset of labels a node has accepted so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMemory {
    // sorted by label
    counts: Vec<(Label, u32)>,
    total: u32,
}

impl NodeMemory {
    pub fn singleton(label: Label) -> Self {
        Self { counts: vec![(label, 1)], total: 1 }
    }

    /// Builds a memory from `(label, count)` pairs; zero counts are skipped
    /// and repeated labels merged.
    pub fn from_counts(pairs: impl IntoIterator<Item = (Label, u32)>) -> Self {
        let mut m = Self { counts: Vec::new(), total: 0 };
        for (l, c) in pairs {
            for _ in 0..c {
                m.add(l);
            }
        }
        m
    }

    pub fn add(&mut self, label: Label) {
        match self.counts.binary_search_by_key(&label, |&(l, _)| l) {
            Ok(k) => self.counts[k].1 += 1,
            Err(k) => self.counts.insert(k, (label, 1)),
        }
        self.total += 1;
    }

    pub fn count(&self, label: Label) -> u32 {
        self.counts.binary_search_by_key(&label, |&(l, _)| l).map_or(0, |k| self.counts[k].1)
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `(label, count)` pairs in ascending label order.
    pub fn entries(&self) -> &[(Label, u32)] {
        &self.counts
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Highest-count label, lowest label on ties.
    pub fn dominant(&self) -> Option<Label> {
        self.counts.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|&(l, _)| l)
    }
}

/// Which edges supply a listener's speakers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborMode {
    /// Both directions, weight `w_ij + w_ji`.
    #[default]
    Symmetrized,
    /// Speakers `j` with an edge `j -> i`, weight `w_ji`.
    InEdges,
    /// Speakers `j` with an edge `i -> j`, weight `w_ij`.
    OutEdges,
}

impl std::str::FromStr for NeighborMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetrized" => Ok(Self::Symmetrized),
            "in-edges" | "in" => Ok(Self::InEdges),
            "out-edges" | "out" => Ok(Self::OutEdges),
            other => Err(Error::param("neighbor_mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub iterations: u32,
    pub seed: u64,
    pub neighbor_mode: NeighborMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { iterations: 100, seed: 0, neighbor_mode: NeighborMode::Symmetrized }
    }
}

impl PropagationConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    memories: Vec<NodeMemory>,
    rng: RunRng,
    iterations: u32,
}

impl PropagationState {
    pub fn memories(&self) -> &[NodeMemory] {
        &self.memories
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn node_count(&self) -> usize {
        self.memories.len()
    }

    /// Writes `node_id,label,count`, one row per distinct label per node.
    pub fn write_memory_csv<W: Write>(&self, node_ids: &[String], mut out: W) -> std::io::Result<()> {
        writeln!(out, "node_id,label,count")?;
        for (id, mem) in node_ids.iter().zip(&self.memories) {
            for &(l, c) in mem.entries() {
                writeln!(out, "{id},{l},{c}")?;
            }
        }
        Ok(())
    }
}

/// Every node holds only its own label; the generator is the propagation
/// stream of `seed`.
pub fn init_memories(graph: &SpatialGraph, seed: u64) -> Result<PropagationState> {
    if graph.node_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    Ok(PropagationState {
        memories: (0..graph.node_count() as Label).map(NodeMemory::singleton).collect(),
        rng: rng::stream(seed, rng::STREAM_PROPAGATION),
        iterations: 0,
    })
}

/// Samples a label with probability proportional to its count.
pub fn speaker_rule<R: Rng + ?Sized>(memory: &NodeMemory, rng: &mut R) -> Label {
    debug_assert!(!memory.is_empty());
    let mut ticket = rng.random_range(0..memory.total);
    for &(label, count) in &memory.counts {
        if ticket < count {
            return label;
        }
        ticket -= count;
    }
    unreachable!("ticket below total")
}

/// Relative gap under which two summed weights count as tied. Sums that are
/// equal in exact arithmetic can differ in the last bits depending on
/// summation order and weight scale.
pub const TIE_RTOL: f64 = 1e-9;

/// Label with the largest summed offer weight. Ties (see [`TIE_RTOL`]) are
/// broken uniformly at random; the generator is only consulted on a tie.
pub fn listener_rule<R: Rng + ?Sized>(offers: &[(Label, f64)], rng: &mut R) -> Label {
    let mut sums: Vec<(Label, f64)> = Vec::with_capacity(8);
    accumulate(offers, &mut sums);
    pick_max(&sums, rng)
}

fn accumulate(offers: &[(Label, f64)], sums: &mut Vec<(Label, f64)>) {
    sums.clear();
    for &(label, w) in offers {
        match sums.iter_mut().find(|(l, _)| *l == label) {
            Some(slot) => slot.1 += w,
            None => sums.push((label, w)),
        }
    }
}

fn pick_max<R: Rng + ?Sized>(sums: &[(Label, f64)], rng: &mut R) -> Label {
    let best = sums.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let floor = best - best.abs() * TIE_RTOL;
    let mut tied = sums.iter().filter(|s| s.1 >= floor);
    let first = tied.next().expect("offers non-empty").0;
    let n_tied = 1 + tied.count();
    if n_tied == 1 {
        return first;
    }
    let pick = rng.random_range(0..n_tied);
    sums.iter().filter(|s| s.1 >= floor).nth(pick).expect("pick < n_tied").0
}

/// Compressed speaker lists per listener, in ascending speaker order.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    offsets: Vec<usize>,
    speakers: Vec<u32>,
    weights: Vec<f64>,
}

impl Neighborhood {
    pub fn new(graph: &SpatialGraph, mode: NeighborMode) -> Self {
        let n = graph.node_count();
        let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(graph.edge_count() * 2);
        for e in graph.edges() {
            match mode {
                NeighborMode::Symmetrized => {
                    pairs.push((e.source, e.target, e.weight));
                    pairs.push((e.target, e.source, e.weight));
                }
                NeighborMode::InEdges => pairs.push((e.target, e.source, e.weight)),
                NeighborMode::OutEdges => pairs.push((e.source, e.target, e.weight)),
            }
        }
        // Stable sort keeps (i->j) before (j->i) contributions in edge order,
        // so the combined weight is summed in a fixed order.
        pairs.sort_by_key(|&(l, s, _)| (l, s));
        let mut offsets = vec![0; n + 1];
        let mut speakers = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut last: Option<(usize, usize)> = None;
        for (l, s, w) in pairs {
            if last == Some((l, s)) {
                *weights.last_mut().expect("previous entry") += w;
                continue;
            }
            last = Some((l, s));
            speakers.push(s as u32);
            weights.push(w);
            offsets[l + 1] = speakers.len();
        }
        for i in 1..=n {
            offsets[i] = offsets[i].max(offsets[i - 1]);
        }
        Self { offsets, speakers, weights }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn speakers_of(&self, listener: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[listener]..self.offsets[listener + 1];
        self.speakers[r.clone()].iter().map(|&s| s as usize).zip(self.weights[r].iter().copied())
    }

    pub fn degree(&self, listener: usize) -> usize {
        self.offsets[listener + 1] - self.offsets[listener]
    }
}

pub fn run_propagation(graph: &SpatialGraph, config: &PropagationConfig) -> Result<PropagationState> {
    config.validate()?;
    let mut state = init_memories(graph, config.seed)?;
    let hood = Neighborhood::new(graph, config.neighbor_mode);
    evolve(&mut state, &hood, config.iterations);
    Ok(state)
}

/// Runs `iterations` more rounds on `state` over a prepared neighborhood.
pub fn evolve(state: &mut PropagationState, hood: &Neighborhood, iterations: u32) {
    assert_eq!(state.memories.len(), hood.node_count(), "neighborhood built for another graph");
    let n = state.memories.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut offers: Vec<(Label, f64)> = Vec::new();
    let mut sums: Vec<(Label, f64)> = Vec::new();
    for _ in 0..iterations {
        order.shuffle(&mut state.rng);
        for &listener in &order {
            offers.clear();
            for (speaker, w) in hood.speakers_of(listener) {
                offers.push((speaker_rule(&state.memories[speaker], &mut state.rng), w));
            }
            if offers.is_empty() {
                offers.push((speaker_rule(&state.memories[listener], &mut state.rng), 1.0));
            }
            accumulate(&offers, &mut sums);
            let winner = pick_max(&sums, &mut state.rng);
            state.memories[listener].add(winner);
        }
        state.iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_gives_singletons() {
        let g = SpatialGraph::from_weights(3, &[(0, 1, 1.0)]).unwrap();
        let s = init_memories(&g, 1).unwrap();
        let expected: Vec<_> = (0..3).map(NodeMemory::singleton).collect();
        assert_eq!(s.memories(), expected.as_slice());
        assert!(s.memories().iter().all(|m| m.total() == 1));
        assert!(init_memories(&SpatialGraph::from_weights(0, &[]).unwrap(), 1).is_err());
    }

    #[test]
    fn memory_bookkeeping() {
        let mut m = NodeMemory::singleton(4);
        m.add(2);
        m.add(4);
        assert_eq!(m.entries(), &[(2, 1), (4, 2)]);
        assert_eq!(m.total(), 3);
        assert_eq!(m.dominant(), Some(4));
        let tie = NodeMemory::from_counts([(9, 2), (3, 2)]);
        assert_eq!(tie.dominant(), Some(3));
    }

    #[test]
    fn speaker_proportional() {
        let m = NodeMemory::from_counts([(0, 3), (1, 1)]);
        let mut r = rng(3);
        let draws = 100_000;
        let zeros = (0..draws).filter(|_| speaker_rule(&m, &mut r) == 0).count();
        let p = zeros as f64 / draws as f64;
        assert!((p - 0.75).abs() < 0.01, "{p}");
    }

    #[test]
    fn speaker_single_label() {
        let m = NodeMemory::from_counts([(7, 5)]);
        let mut r = rng(4);
        assert!((0..1000).all(|_| speaker_rule(&m, &mut r) == 7));
    }

    #[test]
    fn speaker_chi_square() {
        let m = NodeMemory::from_counts([(0, 2), (1, 2), (2, 4)]);
        let mut r = rng(5);
        let draws = 100_000;
        let mut obs = [0f64; 3];
        for _ in 0..draws {
            obs[speaker_rule(&m, &mut r) as usize] += 1.0;
        }
        let expected = [0.25, 0.25, 0.5].map(|p| p * draws as f64);
        let chi2: f64 = obs.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
        // chi-square critical value, 2 degrees of freedom, alpha = 0.001
        assert!(chi2 < 13.816, "chi2 = {chi2}");
    }

    #[test]
    fn listener_sums_weights() {
        let mut r = rng(6);
        assert_eq!(listener_rule(&[(0, 0.5), (1, 0.3), (0, 0.2)], &mut r), 0);
        // a single heavy offer beats two light ones
        assert_eq!(listener_rule(&[(0, 0.2), (0, 0.2), (1, 0.5)], &mut r), 1);
    }

    #[test]
    fn listener_tie_is_fair() {
        let mut r = rng(7);
        let trials = 20_000;
        let a = (0..trials).filter(|_| listener_rule(&[(0, 0.4), (1, 0.4)], &mut r) == 0).count();
        let p = a as f64 / trials as f64;
        assert!((p - 0.5).abs() < 0.02, "{p}");
    }

    #[test]
    fn rounding_level_gap_is_a_tie() {
        // 0.1 + 0.2 != 0.3 in binary
        let offers = [(0, 0.1), (0, 0.2), (1, 0.3)];
        let mut r = rng(9);
        let zeros = (0..2000).filter(|_| listener_rule(&offers, &mut r) == 0).count();
        assert!((800..1200).contains(&zeros), "{zeros}");
        assert_eq!(listener_rule(&[(0, 0.3), (1, 0.3 * (1.0 + 1e-6))], &mut r), 1);
    }

    #[test]
    fn listener_matches_group_and_argmax() {
        let mut r = rng(8);
        for _ in 0..50 {
            let k = r.random_range(1..12);
            let offers: Vec<(Label, f64)> = (0..k).map(|_| (r.random_range(0..4), r.random_range(0.01..1.0))).collect();
            let mut totals = [0.0f64; 4];
            for &(l, w) in &offers {
                totals[l as usize] += w;
            }
            let best = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<_> = (0..4).filter(|&l| totals[l] == best).collect();
            if winners.len() == 1 {
                assert_eq!(listener_rule(&offers, &mut r) as usize, winners[0]);
            }
        }
    }

    #[test]
    fn neighborhood_modes() {
        let g = SpatialGraph::from_weights(3, &[(0, 1, 1.0), (1, 0, 2.0), (1, 2, 4.0)]).unwrap();
        let sym = Neighborhood::new(&g, NeighborMode::Symmetrized);
        assert_eq!(sym.speakers_of(1).collect::<Vec<_>>(), vec![(0, 3.0), (2, 4.0)]);
        assert_eq!(sym.speakers_of(2).collect::<Vec<_>>(), vec![(1, 4.0)]);
        let inn = Neighborhood::new(&g, NeighborMode::InEdges);
        assert_eq!(inn.speakers_of(2).collect::<Vec<_>>(), vec![(1, 4.0)]);
        assert_eq!(inn.degree(1), 1);
        let out = Neighborhood::new(&g, NeighborMode::OutEdges);
        assert_eq!(out.speakers_of(2).count(), 0);
        assert_eq!(out.speakers_of(1).collect::<Vec<_>>(), vec![(0, 2.0), (2, 4.0)]);
    }

    #[test]
    fn isolated_nodes_keep_own_label() {
        let g = SpatialGraph::from_weights(4, &[]).unwrap();
        let s = run_propagation(&g, &PropagationConfig { iterations: 15, ..Default::default() }).unwrap();
        for (i, m) in s.memories().iter().enumerate() {
            assert_eq!(m.entries(), &[(i as Label, 16)]);
        }
    }

    #[test]
    fn totals_track_iterations() {
        let g = SpatialGraph::from_weights(5, &[(0, 1, 1.0), (1, 2, 2.0), (3, 4, 0.5)]).unwrap();
        let s = run_propagation(&g, &PropagationConfig { iterations: 37, seed: 2, ..Default::default() }).unwrap();
        assert_eq!(s.iterations(), 37);
        assert!(s.memories().iter().all(|m| m.total() == 38));
    }

    #[test]
    fn zero_iterations_rejected() {
        let g = SpatialGraph::from_weights(2, &[(0, 1, 1.0)]).unwrap();
        assert!(run_propagation(&g, &PropagationConfig { iterations: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn two_nodes_share_a_label() {
        // Independent simulation of the two-node urn puts the rate at 0.922.
        let g = SpatialGraph::from_weights(2, &[(0, 1, 5.0)]).unwrap();
        let runs = 2000;
        let mut hits = 0;
        for seed in 0..runs {
            let s = run_propagation(&g, &PropagationConfig { iterations: 20, seed, ..Default::default() }).unwrap();
            let m = s.memories();
            let shared = (0..2).any(|l| m.iter().all(|mem| 2 * mem.count(l) > mem.total()));
            hits += shared as u32;
        }
        let rate = hits as f64 / runs as f64;
        assert!((rate - 0.922).abs() < 0.025, "{rate}");
    }

    #[test]
    fn memory_dump_format() {
        let g = SpatialGraph::from_weights(2, &[(0, 1, 1.0)]).unwrap();
        let s = run_propagation(&g, &PropagationConfig { iterations: 3, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        s.write_memory_csv(g.node_ids(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("node_id,label,count\nn0,"));
        let rows: u32 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u32>().unwrap()).sum();
        assert_eq!(rows, 8);
    }
}
