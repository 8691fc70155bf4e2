//! Evaluation of detected covers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Cover;
use crate::propagation::PropagationState;
use crate::spatial_graph::{SpatialGraph, ZoneSet};

/// One community id per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition(pub Vec<usize>);

impl Partition {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.0[node]
    }
}

/// Assigns each node to the retained community whose originating label is
/// most frequent in the node's memory (lowest community id on ties).
pub fn crisp_projection(state: &PropagationState, cover: &Cover) -> Result<Partition> {
    if state.node_count() != cover.node_count() {
        return Err(Error::UniverseMismatch(state.node_count(), cover.node_count()));
    }
    let mut out = Vec::with_capacity(cover.node_count());
    for (node, ms) in cover.memberships().iter().enumerate() {
        let mem = &state.memories()[node];
        let best = ms
            .iter()
            .map(|&c| (mem.count(cover.original_label(c)), c))
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .ok_or_else(|| Error::InvalidPartition(format!("node {node} has no community")))?;
        out.push(best.1);
    }
    Ok(Partition(out))
}

/// Modularity of `p` over the symmetrized adjacency `A = W + Wᵀ`:
/// `Q = (1/2m) Σᵢⱼ [Aᵢⱼ − kᵢkⱼ/2m] δ(cᵢ, cⱼ)`.
pub fn modularity(graph: &SpatialGraph, p: &Partition) -> Result<f64> {
    if p.len() != graph.node_count() {
        return Err(Error::InvalidPartition(format!("{} assignments for {} nodes", p.len(), graph.node_count())));
    }
    let two_m = 2.0 * graph.total_weight();
    if two_m <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    let mut degree_sum: HashMap<usize, f64> = HashMap::new();
    let mut internal = 0.0;
    for e in graph.edges() {
        // each directed edge contributes w to A_ij and to A_ji
        *degree_sum.entry(p.0[e.source]).or_default() += e.weight;
        *degree_sum.entry(p.0[e.target]).or_default() += e.weight;
        if p.0[e.source] == p.0[e.target] {
            internal += 2.0 * e.weight;
        }
    }
    let mut expected = 0.0;
    let mut keys: Vec<_> = degree_sum.into_iter().collect();
    keys.sort_by_key(|&(c, _)| c);
    for (_, k) in keys {
        expected += (k / two_m).powi(2);
    }
    Ok(internal / two_m - expected)
}

/// Omega index: chance-corrected agreement on the number of communities each
/// node pair shares. Identical covers (up to relabeling) score 1.
pub fn omega_index(a: &Cover, b: &Cover) -> Result<f64> {
    let n = a.node_count();
    if n != b.node_count() {
        return Err(Error::UniverseMismatch(n, b.node_count()));
    }
    if n < 2 {
        return Ok(1.0);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut agree = 0u64;
    let mut hist_a: BTreeMap<usize, u64> = BTreeMap::new();
    let mut hist_b: BTreeMap<usize, u64> = BTreeMap::new();
    let (ma, mb) = (a.memberships(), b.memberships());
    for i in 0..n {
        for j in (i + 1)..n {
            let ta = ma[i].intersection(&ma[j]).count();
            let tb = mb[i].intersection(&mb[j]).count();
            agree += (ta == tb) as u64;
            *hist_a.entry(ta).or_default() += 1;
            *hist_b.entry(tb).or_default() += 1;
        }
    }
    let observed = agree as f64 / pairs;
    let expected: f64 =
        hist_a.iter().map(|(t, &ca)| ca as f64 * *hist_b.get(t).unwrap_or(&0) as f64).sum::<f64>() / (pairs * pairs);
    if (1.0 - expected).abs() < 1e-15 {
        return Ok(if observed == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl GroupStats {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            count: values.len(),
            mean,
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            sd: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeComparison {
    pub attribute: String,
    /// `None` when the group has no zone with a value.
    pub overlap: Option<GroupStats>,
    pub non_overlap: Option<GroupStats>,
    /// Zones of each group lacking this attribute.
    pub overlap_missing: usize,
    pub non_overlap_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub overlap_zones: usize,
    pub non_overlap_zones: usize,
    pub attributes: Vec<AttributeComparison>,
}

/// Per-attribute comparison of overlapping and non-overlapping zones. An
/// empty `attributes` list selects every attribute present on any zone.
pub fn overlap_report(
    cover: &Cover,
    node_ids: &[String],
    zones: &ZoneSet,
    attributes: &[String],
) -> Result<GroupReport> {
    if node_ids.len() != cover.node_count() {
        return Err(Error::UniverseMismatch(node_ids.len(), cover.node_count()));
    }
    let names: Vec<String> = if attributes.is_empty() {
        let all: BTreeSet<&String> = zones.zones().iter().flat_map(|z| z.attributes.keys()).collect();
        all.into_iter().cloned().collect()
    } else {
        attributes.to_vec()
    };
    let mut rows = Vec::with_capacity(names.len());
    for name in &names {
        let mut ov = Vec::new();
        let mut non = Vec::new();
        let (mut ov_missing, mut non_missing) = (0, 0);
        for (node, id) in node_ids.iter().enumerate() {
            let value = zones.get(id).and_then(|z| z.attributes.get(name)).copied().filter(|v| v.is_finite());
            match (cover.is_overlapping(node), value) {
                (true, Some(v)) => ov.push(v),
                (false, Some(v)) => non.push(v),
                (true, None) => ov_missing += 1,
                (false, None) => non_missing += 1,
            }
        }
        if ov.is_empty() && non.is_empty() {
            return Err(Error::MissingAttribute(name.clone()));
        }
        rows.push(AttributeComparison {
            attribute: name.clone(),
            overlap: GroupStats::from_values(&ov),
            non_overlap: GroupStats::from_values(&non),
            overlap_missing: ov_missing,
            non_overlap_missing: non_missing,
        });
    }
    let overlap_zones = cover.overlap_count();
    Ok(GroupReport { overlap_zones, non_overlap_zones: cover.node_count() - overlap_zones, attributes: rows })
}

fn stat_cells(s: &Option<GroupStats>) -> [String; 5] {
    match s {
        Some(s) => [
            format!("{:.4}", s.mean),
            format!("{:.4}", s.max),
            format!("{:.4}", s.min),
            format!("{:.4}", s.sd),
            s.count.to_string(),
        ],
        None => ["undefined".into(), "undefined".into(), "undefined".into(), "undefined".into(), "0".into()],
    }
}

impl GroupReport {
    /// Aligned text table: one block per attribute, one row per group.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<[String; 7]> = Vec::new();
        for a in &self.attributes {
            for (group, stats) in [("overlap", &a.overlap), ("non-overlap", &a.non_overlap)] {
                let [mean, max, min, sd, n] = stat_cells(stats);
                rows.push([a.attribute.clone(), group.into(), mean, max, min, sd, n]);
            }
        }
        let header = ["attribute", "group", "mean", "max", "min", "sd", "n"].map(String::from);
        let mut widths = header.clone().map(|h| h.len());
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "zones: {} overlapping, {} non-overlapping", self.overlap_zones, self.non_overlap_zones);
        for r in std::iter::once(&header).chain(&rows) {
            let line: Vec<String> = r
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(k, (c, w))| if k < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("attribute,group,mean,max,min,sd,n,missing\n");
        for a in &self.attributes {
            for (group, stats, missing) in
                [("overlap", &a.overlap, a.overlap_missing), ("non-overlap", &a.non_overlap, a.non_overlap_missing)]
            {
                let cells = match stats {
                    Some(s) => format!("{},{},{},{},{}", s.mean, s.max, s.min, s.sd, s.count),
                    None => "undefined,undefined,undefined,undefined,0".to_string(),
                };
                let _ = writeln!(out, "{},{group},{cells},{missing}", a.attribute);
            }
        }
        out
    }
}

/// Shannon entropy (natural log) of category proportions.
pub fn complexity_index(counts: &[f64]) -> Result<f64> {
    if let Some(&bad) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::param("poi_counts", format!("counts must be non-negative, got {bad}")));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("poi_counts", "at least one count must be positive"));
    }
    Ok(-counts.iter().filter(|&&c| c > 0.0).map(|&c| c / total * (c / total).ln()).sum::<f64>())
}
