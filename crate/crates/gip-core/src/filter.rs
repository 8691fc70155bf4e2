//! Post-processing of label memories into an overlapping cover.
//!
//! Each node's memory is turned into a one-class training set: the k-th
//! distinct label (most frequent first) contributes `count` copies of the
//! scalar `k·Δ`. With `exp(-γΔ²)` negligible the kernel is block-diagonal
//! and the fitted boundary keeps exactly the labels whose share reaches a
//! data-driven level, so no manual threshold is needed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocsvm::{train_ocsvm, Gamma};
use crate::propagation::{Label, NodeMemory, PropagationState};
use crate::spatial_graph::Zone;

/// Largest admissible cross-label kernel value `exp(-γΔ²)`.
pub const MAX_KERNEL_LEAK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub label: Label,
    pub count: u32,
    pub probability: f64,
}

/// Distinct labels of one memory, by descending count then ascending label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub entries: Vec<HistogramEntry>,
    pub total: u32,
}

impl LabelHistogram {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest-count label (lowest label among ties).
    pub fn dominant(&self) -> Label {
        self.entries[0].label
    }
}

pub fn histogram(memory: &NodeMemory) -> LabelHistogram {
    let total = memory.total();
    let mut entries: Vec<HistogramEntry> = memory
        .entries()
        .iter()
        .map(|&(label, count)| HistogramEntry { label, count, probability: count as f64 / total as f64 })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then(a.label.cmp(&b.label)));
    LabelHistogram { entries, total }
}

/// One scalar per memory occurrence: `count` copies of `k·spacing` for the
/// k-th histogram entry.
pub fn encode_samples(hist: &LabelHistogram, spacing: f64) -> Vec<f64> {
    hist.entries
        .iter()
        .enumerate()
        .flat_map(|(k, e)| std::iter::repeat_n(k as f64 * spacing, e.count as usize))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub nu: f64,
    pub gamma: Gamma,
    pub spacing: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        // exp(-1·5²) ≈ 1.4e-11
        Self { nu: 0.8, gamma: Gamma::Value(1.0), spacing: 5.0 }
    }
}

impl FilterConfig {
    pub fn with_nu(nu: f64) -> Self {
        Self { nu, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::param("nu", format!("must lie in (0, 1], got {}", self.nu)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::param("spacing", format!("must be positive, got {}", self.spacing)));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::param("gamma", format!("must be positive, got {g}")));
            }
            let leak = (-g * self.spacing * self.spacing).exp();
            if leak > MAX_KERNEL_LEAK {
                return Err(Error::param(
                    "spacing",
                    format!("exp(-gamma·spacing²) = {leak:.3e} exceeds {MAX_KERNEL_LEAK:e}; increase spacing or gamma"),
                ));
            }
        }
        Ok(())
    }
}

/// Labels whose encoded feature lies inside the fitted one-class boundary.
/// Never empty: if nothing survives, the dominant label is kept.
pub fn filter_node_labels(hist: &LabelHistogram, cfg: &FilterConfig) -> Result<BTreeSet<Label>> {
    cfg.validate()?;
    if hist.len() == 1 {
        return Ok(BTreeSet::from([hist.dominant()]));
    }
    let samples = encode_samples(hist, cfg.spacing);
    let model = train_ocsvm(&samples, cfg.nu, cfg.gamma)?;
    let kept: BTreeSet<Label> = hist
        .entries
        .iter()
        .enumerate()
        .filter(|(k, _)| model.is_inlier(*k as f64 * cfg.spacing))
        .map(|(_, e)| e.label)
        .collect();
    Ok(if kept.is_empty() { BTreeSet::from([hist.dominant()]) } else { kept })
}

/// Labels with probability at least `r`, falling back to the dominant label.
pub fn threshold_filter(hist: &LabelHistogram, r: f64) -> Result<BTreeSet<Label>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::param("r", format!("must lie in [0, 1], got {r}")));
    }
    let kept: BTreeSet<Label> = hist.entries.iter().filter(|e| e.probability >= r).map(|e| e.label).collect();
    Ok(if kept.is_empty() { BTreeSet::from([hist.dominant()]) } else { kept })
}

/// How each node's memory is reduced to retained labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelFilter {
    Ocsvm(FilterConfig),
    Threshold(f64),
}

impl std::str::FromStr for LabelFilter {
    type Err = Error;

    /// `ocsvm` or `threshold:<r>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "ocsvm" {
            return Ok(LabelFilter::Ocsvm(FilterConfig::default()));
        }
        if let Some(r) = s.strip_prefix("threshold:") {
            let r: f64 = r.parse().map_err(|_| Error::param("filter", format!("bad threshold `{r}`")))?;
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::param("filter", format!("threshold must lie in [0, 1], got {r}")));
            }
            return Ok(LabelFilter::Threshold(r));
        }
        Err(Error::param("filter", format!("expected `ocsvm` or `threshold:<r>`, got `{s}`")))
    }
}

/// Filters every node, fanning out across nodes; results are in node order.
pub fn filter_memories(state: &PropagationState, filter: &LabelFilter) -> Result<Vec<BTreeSet<Label>>> {
    state
        .memories()
        .par_iter()
        .map(|m| {
            let h = histogram(m);
            match filter {
                LabelFilter::Ocsvm(cfg) => filter_node_labels(&h, cfg),
                LabelFilter::Threshold(r) => threshold_filter(&h, *r),
            }
        })
        .collect()
}

/// Sequential variant of [`filter_memories`], used where a run must stay on
/// one thread (timed benchmark runs).
pub fn filter_memories_sequential(state: &PropagationState, filter: &LabelFilter) -> Result<Vec<BTreeSet<Label>>> {
    state
        .memories()
        .iter()
        .map(|m| {
            let h = histogram(m);
            match filter {
                LabelFilter::Ocsvm(cfg) => filter_node_labels(&h, cfg),
                LabelFilter::Threshold(r) => threshold_filter(&h, *r),
            }
        })
        .collect()
}

/// An overlapping community assignment over nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cover {
    communities: Vec<BTreeSet<usize>>,
    memberships: Vec<BTreeSet<usize>>,
    /// Label each dense community id came from.
    original_labels: Vec<Label>,
}

impl Cover {
    /// Builds a cover from per-node label sets. Communities are numbered
    /// densely by descending size, then ascending original label.
    pub fn from_labels(retained: &[BTreeSet<Label>]) -> Result<Self> {
        let mut by_label: BTreeMap<Label, BTreeSet<usize>> = BTreeMap::new();
        for (node, labels) in retained.iter().enumerate() {
            if labels.is_empty() {
                return Err(Error::param("retained", format!("node {node} retains no label")));
            }
            for &l in labels {
                by_label.entry(l).or_default().insert(node);
            }
        }
        let mut ordered: Vec<(Label, BTreeSet<usize>)> = by_label.into_iter().collect();
        ordered.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        let mut memberships = vec![BTreeSet::new(); retained.len()];
        for (cid, (_, members)) in ordered.iter().enumerate() {
            for &node in members {
                memberships[node].insert(cid);
            }
        }
        let original_labels = ordered.iter().map(|(l, _)| *l).collect();
        let communities = ordered.into_iter().map(|(_, m)| m).collect();
        Ok(Self { communities, memberships, original_labels })
    }

    /// Cover from explicit per-node community memberships (for ground truth
    /// and baselines). Community ids are kept as given; ids with no member
    /// are dropped and the rest renumbered as in [`Cover::from_labels`].
    pub fn from_memberships(memberships: &[BTreeSet<usize>]) -> Result<Self> {
        let as_labels: Vec<BTreeSet<Label>> =
            memberships.iter().map(|s| s.iter().map(|&c| c as Label).collect()).collect();
        Self::from_labels(&as_labels)
    }

    pub fn node_count(&self) -> usize {
        self.memberships.len()
    }

    pub fn community_count(&self) -> usize {
        self.communities.len()
    }

    pub fn communities(&self) -> &[BTreeSet<usize>] {
        &self.communities
    }

    pub fn memberships(&self) -> &[BTreeSet<usize>] {
        &self.memberships
    }

    pub fn original_label(&self, community: usize) -> Label {
        self.original_labels[community]
    }

    pub fn original_labels(&self) -> &[Label] {
        &self.original_labels
    }

    pub fn is_overlapping(&self, node: usize) -> bool {
        self.memberships[node].len() >= 2
    }

    pub fn overlapping_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.is_overlapping(i)).collect()
    }

    pub fn overlap_count(&self) -> usize {
        self.memberships.iter().filter(|m| m.len() >= 2).count()
    }

    /// `zone_id,community_id`, one row per membership in node order.
    pub fn write_csv<W: Write>(&self, zone_ids: &[String], mut out: W) -> std::io::Result<()> {
        writeln!(out, "zone_id,community_id")?;
        for (id, ms) in zone_ids.iter().zip(&self.memberships) {
            for c in ms {
                writeln!(out, "{id},{c}")?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self, zone_ids: &[String]) -> serde_json::Value {
        let communities: serde_json::Map<String, serde_json::Value> = self
            .communities
            .iter()
            .enumerate()
            .map(|(c, members)| (c.to_string(), members.iter().map(|&i| zone_ids[i].clone()).collect()))
            .collect();
        let labels: serde_json::Map<String, serde_json::Value> =
            self.original_labels.iter().enumerate().map(|(c, &l)| (c.to_string(), l.into())).collect();
        serde_json::json!({
            "communities": communities,
            "overlapping": self.overlapping_nodes().into_iter().map(|i| zone_ids[i].clone()).collect::<Vec<_>>(),
            "original_labels": labels,
        })
    }

    /// GeoJSON FeatureCollection of the zones' polygons with `communities`
    /// and `is_overlap` properties. Zones are matched to nodes by id.
    pub fn to_geojson(&self, zone_ids: &[String], zones: &[Zone]) -> serde_json::Value {
        let index: BTreeMap<&str, usize> = zone_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let ring_json = |r: &crate::geo::Ring| {
            let mut pts: Vec<serde_json::Value> =
                r.vertices().iter().map(|p| serde_json::json!([p.lon, p.lat])).collect();
            pts.push(pts[0].clone());
            serde_json::Value::Array(pts)
        };
        let features: Vec<serde_json::Value> = zones
            .iter()
            .filter_map(|z| {
                let node = *index.get(z.id.as_str())?;
                let polys: Vec<serde_json::Value> = z
                    .polygons
                    .iter()
                    .map(|p| {
                        let mut rings = vec![ring_json(&p.exterior)];
                        rings.extend(p.holes.iter().map(ring_json));
                        serde_json::Value::Array(rings)
                    })
                    .collect();
                let geometry = match polys.len() {
                    0 => serde_json::json!({"type": "Point", "coordinates": [z.centroid.lon, z.centroid.lat]}),
                    1 => serde_json::json!({"type": "Polygon", "coordinates": polys[0]}),
                    _ => serde_json::json!({"type": "MultiPolygon", "coordinates": polys}),
                };
                Some(serde_json::json!({
                    "type": "Feature",
                    "properties": {
                        "id": z.id,
                        "communities": self.memberships[node].iter().collect::<Vec<_>>(),
                        "is_overlap": self.is_overlapping(node),
                    },
                    "geometry": geometry,
                }))
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

pub fn build_cover(retained: &[BTreeSet<Label>]) -> Result<Cover> {
    Cover::from_labels(retained)
}

/// Reads a `zone_id,community_id` file back. Zones are numbered in order of
/// first appearance.
pub fn read_cover_csv<R: std::io::Read>(reader: R, origin: &str) -> Result<(Vec<String>, Cover)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["zone_id", "community_id"] {
        return Err(Error::parse(origin, "expected header zone_id,community_id"));
    }
    let mut ids: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut memberships: Vec<BTreeSet<usize>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let community: usize = rec[1]
            .parse()
            .map_err(|_| Error::parse(origin, format!("row {}: bad community id {:?}", k + 2, &rec[1])))?;
        let node = *index.entry(rec[0].to_string()).or_insert_with(|| {
            ids.push(rec[0].to_string());
            memberships.push(BTreeSet::new());
            ids.len() - 1
        });
        memberships[node].insert(community);
    }
    if ids.is_empty() {
        return Err(Error::parse(origin, "cover has no rows"));
    }
    Ok((ids, Cover::from_memberships(&memberships)?))
}
