//! Zones, OD flow aggregation and the distance-decayed interaction graph.
//!
//! Edge weights are `flow / distance` with distances between zone centroids
//! in meters. The graph is directed and never carries a self-edge.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{DistanceMetric, GeoPoint, Polygon};

pub mod io;

/// A spatial analysis unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    pub centroid: GeoPoint,
    /// Empty for centroid-only zones.
    #[serde(default)]
    pub polygons: Vec<Polygon>,
    #[serde(default)]
    pub attributes: BTreeMap<String, f64>,
}

impl Zone {
    pub fn new(id: impl Into<String>, centroid: GeoPoint) -> Self {
        Self { id: id.into(), centroid, polygons: Vec::new(), attributes: BTreeMap::new() }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: f64) -> Self {
        self.attributes.insert(name.into(), value);
        self
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

/// A validated set of zones, ordered by id.
#[derive(Debug, Clone)]
pub struct ZoneSet {
    zones: Vec<Zone>,
    index: HashMap<String, usize>,
    metric: DistanceMetric,
    bboxes: Vec<[f64; 4]>,
}

impl ZoneSet {
    pub fn new(mut zones: Vec<Zone>, metric: DistanceMetric) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::EmptyZoneSet);
        }
        zones.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = zones.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateZone(w[0].id.clone()));
        }
        let with_polygons = zones.iter().filter(|z| !z.polygons.is_empty()).count();
        if with_polygons != 0 && with_polygons != zones.len() {
            return Err(Error::MixedGeometry);
        }
        for z in &zones {
            metric.point(z.centroid.lon, z.centroid.lat)?;
        }
        let index = zones.iter().enumerate().map(|(i, z)| (z.id.clone(), i)).collect();
        let bboxes = zones
            .iter()
            .map(|z| {
                z.polygons
                    .iter()
                    .map(|p| p.exterior.bbox())
                    .fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |a, b| {
                        [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]
                    })
            })
            .collect();
        Ok(Self { zones, index, metric, bboxes })
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn has_polygons(&self) -> bool {
        !self.zones[0].polygons.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Zone> {
        self.index.get(id).map(|&i| &self.zones[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.zones.iter().map(|z| z.id.as_str())
    }

    /// Zone containing `p` when polygons are present (first by id on shared
    /// boundaries), otherwise the zone with the nearest centroid (lowest id
    /// on ties).
    pub fn assign_zone(&self, p: GeoPoint) -> Option<&Zone> {
        if self.has_polygons() {
            self.zones.iter().zip(&self.bboxes).find_map(|(z, b)| {
                let in_box = p.lon >= b[0] && p.lon <= b[2] && p.lat >= b[1] && p.lat <= b[3];
                (in_box && z.contains(p)).then_some(z)
            })
        } else {
            let mut best: Option<(f64, &Zone)> = None;
            for z in &self.zones {
                let d = self.metric.distance(p, z.centroid);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, z));
                }
            }
            best.map(|(_, z)| z)
        }
    }

    fn resolve(&self, end: &Endpoint) -> Option<&str> {
        match end {
            Endpoint::Point(p) => self.assign_zone(*p).map(|z| z.id.as_str()),
            Endpoint::Zone(id) => self.get(id).map(|z| z.id.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Endpoint {
    Point(GeoPoint),
    Zone(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin: Endpoint,
    pub destination: Endpoint,
    pub timestamp: Option<String>,
}

impl TripRecord {
    pub fn between_zones(origin: &str, destination: &str) -> Self {
        Self {
            origin: Endpoint::Zone(origin.to_string()),
            destination: Endpoint::Zone(destination.to_string()),
            timestamp: None,
        }
    }
}

/// What was dropped while aggregating trips into flows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub trips_total: u64,
    pub unresolved_trips: u64,
    pub self_loop_trips: u64,
    pub below_min_pairs: u64,
    pub below_min_trips: u64,
    pub kept_pairs: u64,
    pub kept_trips: u64,
}

/// Sparse zone-level OD counts. Keys are `(origin id, destination id)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMatrix {
    flows: BTreeMap<(String, String), u64>,
}

impl FlowMatrix {
    /// Builds a matrix from pre-aggregated counts, summing duplicate pairs and
    /// applying the same self-loop and minimum-count rules as trip aggregation.
    pub fn from_counts<I, S>(entries: I, min_flow: u64) -> Result<(Self, FlowDiagnostics)>
    where
        I: IntoIterator<Item = (S, S, u64)>,
        S: Into<String>,
    {
        let mut diag = FlowDiagnostics::default();
        let mut tally: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (o, d, count) in entries {
            let (o, d) = (o.into(), d.into());
            diag.trips_total += count;
            if o == d {
                diag.self_loop_trips += count;
                continue;
            }
            *tally.entry((o, d)).or_insert(0) += count;
        }
        Self::finish(tally, min_flow, diag)
    }

    fn finish(
        tally: BTreeMap<(String, String), u64>,
        min_flow: u64,
        mut diag: FlowDiagnostics,
    ) -> Result<(Self, FlowDiagnostics)> {
        if min_flow < 1 {
            return Err(Error::param("min_flow", "must be at least 1"));
        }
        let mut flows = BTreeMap::new();
        for (key, count) in tally {
            if count < min_flow {
                diag.below_min_pairs += 1;
                diag.below_min_trips += count;
            } else {
                diag.kept_pairs += 1;
                diag.kept_trips += count;
                flows.insert(key, count);
            }
        }
        if flows.is_empty() {
            return Err(Error::EmptyFlowMatrix(format!(
                "{} trips, {} unresolved, {} self-loops, {} pairs below min_flow={min_flow}",
                diag.trips_total, diag.unresolved_trips, diag.self_loop_trips, diag.below_min_pairs
            )));
        }
        Ok((Self { flows }, diag))
    }

    pub fn get(&self, origin: &str, destination: &str) -> Option<u64> {
        self.flows.get(&(origin.to_string(), destination.to_string())).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.flows.iter().map(|((o, d), &c)| (o.as_str(), d.as_str(), c))
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.flows.values().sum()
    }
}

/// Tallies trips per ordered zone pair. Trips with an endpoint outside every
/// zone are dropped and counted in the diagnostics.
pub fn aggregate_flows(trips: &[TripRecord], zones: &ZoneSet, min_flow: u64) -> Result<(FlowMatrix, FlowDiagnostics)> {
    if min_flow < 1 {
        return Err(Error::param("min_flow", "must be at least 1"));
    }
    let mut diag = FlowDiagnostics::default();
    let mut tally: BTreeMap<(String, String), u64> = BTreeMap::new();
    for trip in trips {
        diag.trips_total += 1;
        let (Some(o), Some(d)) = (zones.resolve(&trip.origin), zones.resolve(&trip.destination)) else {
            diag.unresolved_trips += 1;
            continue;
        };
        if o == d {
            diag.self_loop_trips += 1;
            continue;
        }
        *tally.entry((o.to_string(), d.to_string())).or_insert(0) += 1;
    }
    FlowMatrix::finish(tally, min_flow, diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub flow: u64,
    pub distance_m: f64,
    pub weight: f64,
}

/// Directed weighted interaction graph. Node `i` is `node_ids()[i]`; node ids
/// are sorted and edges are sorted by `(source, target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    node_ids: Vec<String>,
    edges: Vec<Edge>,
}

impl SpatialGraph {
    /// Assembles a graph from explicit edges. Node ids are sorted and edge
    /// endpoints remapped accordingly.
    pub fn from_edges(node_ids: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let n = node_ids.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| node_ids[a].cmp(&node_ids[b]));
        let mut remap = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let sorted_ids: Vec<String> = order.iter().map(|&i| node_ids[i].clone()).collect();
        if let Some(w) = sorted_ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateZone(w[0].clone()));
        }
        let mut out = Vec::with_capacity(edges.len());
        for e in edges {
            if e.source >= n || e.target >= n {
                return Err(Error::param("edges", format!("endpoint out of range for {n} nodes")));
            }
            if e.source == e.target {
                return Err(Error::param("edges", format!("self-edge on `{}`", node_ids[e.source])));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::param(
                    "edges",
                    format!("non-positive weight {} on ({}, {})", e.weight, node_ids[e.source], node_ids[e.target]),
                ));
            }
            out.push(Edge { source: remap[e.source], target: remap[e.target], ..e });
        }
        out.sort_by_key(|e| (e.source, e.target));
        if let Some(w) = out.windows(2).find(|w| (w[0].source, w[0].target) == (w[1].source, w[1].target)) {
            return Err(Error::param(
                "edges",
                format!("duplicate edge ({}, {})", sorted_ids[w[0].source], sorted_ids[w[0].target]),
            ));
        }
        Ok(Self { node_ids: sorted_ids, edges: out })
    }

    /// Convenience constructor from `(source, target, weight)` triples over
    /// `n` anonymous nodes with zero-padded ids. Flow is unset (0) and the
    /// distance is 1.
    pub fn from_weights(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let width = n.max(1).to_string().len();
        let ids = (0..n).map(|i| format!("n{i:0width$}")).collect();
        let edges = edges
            .iter()
            .map(|&(source, target, weight)| Edge { source, target, flow: 0, distance_m: 1.0, weight })
            .collect();
        Self::from_edges(ids, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn weight(&self, source: usize, target: usize) -> Option<f64> {
        self.edges.binary_search_by_key(&(source, target), |e| (e.source, e.target)).ok().map(|k| self.edges[k].weight)
    }

    /// Copy with every weight multiplied by `factor`.
    pub fn with_scaled_weights(&self, factor: f64) -> Self {
        let edges = self.edges.iter().map(|e| Edge { weight: e.weight * factor, ..*e }).collect();
        Self { node_ids: self.node_ids.clone(), edges }
    }
}

/// Builds the graph with `w_ij = flow_ij / d_ij` over every zone of `zones`.
/// Zones without any flow become isolated nodes.
pub fn build_graph(flows: &FlowMatrix, zones: &ZoneSet) -> Result<SpatialGraph> {
    let mut edges = Vec::with_capacity(flows.len());
    for (o, d, count) in flows.iter() {
        let i = zones.position(o).ok_or_else(|| Error::UnknownZone(o.to_string()))?;
        let j = zones.position(d).ok_or_else(|| Error::UnknownZone(d.to_string()))?;
        let dist = zones.metric().distance(zones.zones()[i].centroid, zones.zones()[j].centroid);
        if dist <= 0.0 || !dist.is_finite() {
            return Err(Error::DegenerateDistance(o.to_string(), d.to_string()));
        }
        edges.push(Edge { source: i, target: j, flow: count, distance_m: dist, weight: count as f64 / dist });
    }
    // ZoneSet is already id-sorted and flows are key-sorted, so indices and
    // edge order already match the canonical layout.
    Ok(SpatialGraph { node_ids: zones.ids().map(str::to_string).collect(), edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Ring;

    fn planar_zones(coords: &[(&str, f64, f64)]) -> ZoneSet {
        let zones = coords.iter().map(|&(id, x, y)| Zone::new(id, GeoPoint::projected(x, y).unwrap())).collect();
        ZoneSet::new(zones, DistanceMetric::Planar).unwrap()
    }

    fn square_zone(id: &str, x0: f64, y0: f64) -> Zone {
        let pts = [(x0, y0), (x0 + 1.0, y0), (x0 + 1.0, y0 + 1.0), (x0, y0 + 1.0)]
            .iter()
            .map(|&(x, y)| GeoPoint::new(x, y).unwrap())
            .collect();
        let ring = Ring::new(id, pts).unwrap();
        let centroid = ring.centroid();
        Zone { id: id.into(), centroid, polygons: vec![Polygon::new(ring)], attributes: BTreeMap::new() }
    }

    #[test]
    fn assign_by_polygon() {
        let zs = ZoneSet::new(vec![square_zone("a", 0.0, 0.0), square_zone("b", 2.0, 0.0)], DistanceMetric::Haversine)
            .unwrap();
        let b = zs.get("b").unwrap().centroid;
        assert_eq!(zs.assign_zone(b).unwrap().id, "b");
        assert!(zs.assign_zone(GeoPoint::new(1.5, 0.5).unwrap()).is_none());
        assert!(zs.assign_zone(GeoPoint::new(10.0, 10.0).unwrap()).is_none());
    }

    #[test]
    fn assign_by_nearest_centroid() {
        let zs = planar_zones(&[("a", 0.0, 0.0), ("b", 10.0, 0.0)]);
        assert_eq!(zs.assign_zone(GeoPoint::projected(4.0, 3.0).unwrap()).unwrap().id, "a");
        assert_eq!(zs.assign_zone(GeoPoint::projected(6.0, -30.0).unwrap()).unwrap().id, "b");
        // equidistant → lowest id
        assert_eq!(zs.assign_zone(GeoPoint::projected(5.0, 0.0).unwrap()).unwrap().id, "a");
    }

    #[test]
    fn zone_set_validation() {
        let p = GeoPoint::new(0.0, 0.0).unwrap();
        assert!(matches!(ZoneSet::new(vec![], DistanceMetric::Planar), Err(Error::EmptyZoneSet)));
        assert!(matches!(
            ZoneSet::new(vec![Zone::new("a", p), Zone::new("a", p)], DistanceMetric::Planar),
            Err(Error::DuplicateZone(_))
        ));
        assert!(matches!(
            ZoneSet::new(vec![Zone::new("a", p), square_zone("b", 0.0, 0.0)], DistanceMetric::Haversine),
            Err(Error::MixedGeometry)
        ));
        let far = GeoPoint::projected(500.0, 0.0).unwrap();
        assert!(matches!(
            ZoneSet::new(vec![Zone::new("a", far)], DistanceMetric::Haversine),
            Err(Error::InvalidCoordinate { .. })
        ));
    }

    #[test]
    fn self_loops_removed() {
        let zs = planar_zones(&[("A", 0.0, 0.0), ("B", 100.0, 0.0)]);
        let mut trips = vec![TripRecord::between_zones("A", "B"); 3];
        trips.push(TripRecord::between_zones("B", "B"));
        let (flows, diag) = aggregate_flows(&trips, &zs, 1).unwrap();
        assert_eq!(flows.iter().collect::<Vec<_>>(), vec![("A", "B", 3)]);
        assert_eq!(diag.self_loop_trips, 1);
        assert_eq!(diag.kept_trips, 3);
    }

    #[test]
    fn min_flow_threshold_empties_matrix() {
        let zs = planar_zones(&[("A", 0.0, 0.0), ("B", 100.0, 0.0)]);
        let trips = vec![TripRecord::between_zones("A", "B")];
        assert!(matches!(aggregate_flows(&trips, &zs, 2), Err(Error::EmptyFlowMatrix(_))));
        assert!(matches!(aggregate_flows(&trips, &zs, 0), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn unresolved_trips_counted() {
        let zs = planar_zones(&[("A", 0.0, 0.0), ("B", 100.0, 0.0)]);
        let trips = vec![TripRecord::between_zones("A", "B"), TripRecord::between_zones("A", "Q")];
        let (_, diag) = aggregate_flows(&trips, &zs, 1).unwrap();
        assert_eq!(diag.unresolved_trips, 1);
    }

    #[test]
    fn weight_is_flow_over_distance() {
        let zs = planar_zones(&[("A", 0.0, 0.0), ("B", 300.0, 400.0)]);
        let (flows, _) = FlowMatrix::from_counts([("A", "B", 10)], 1).unwrap();
        let g = build_graph(&flows, &zs).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].distance_m, 500.0);
        assert_eq!(g.edges()[0].weight, 0.02);
    }

    #[test]
    fn coincident_centroids_rejected() {
        let zs = planar_zones(&[("A", 5.0, 5.0), ("B", 5.0, 5.0)]);
        let (flows, _) = FlowMatrix::from_counts([("A", "B", 1)], 1).unwrap();
        match build_graph(&flows, &zs) {
            Err(Error::DegenerateDistance(a, b)) => assert_eq!((a.as_str(), b.as_str()), ("A", "B")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_zone_in_flows() {
        let zs = planar_zones(&[("A", 0.0, 0.0)]);
        let (flows, _) = FlowMatrix::from_counts([("A", "Z", 1)], 1).unwrap();
        assert!(matches!(build_graph(&flows, &zs), Err(Error::UnknownZone(z)) if z == "Z"));
    }

    #[test]
    fn from_edges_sorts_and_validates() {
        let e = |s, t, w| Edge { source: s, target: t, flow: 1, distance_m: 1.0, weight: w };
        let g = SpatialGraph::from_edges(vec!["b".into(), "a".into()], vec![e(0, 1, 2.0)]).unwrap();
        assert_eq!(g.node_ids(), &["a".to_string(), "b".to_string()]);
        assert_eq!(g.weight(1, 0), Some(2.0));
        assert!(SpatialGraph::from_edges(vec!["a".into()], vec![e(0, 0, 1.0)]).is_err());
        assert!(SpatialGraph::from_edges(vec!["a".into(), "b".into()], vec![e(0, 1, 0.0)]).is_err());
    }
}
