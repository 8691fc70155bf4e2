//! File formats for zones, trips and graph edge lists.
//!
//! * zones: GeoJSON `FeatureCollection` (Point, Polygon or MultiPolygon
//!   features with an `id` property) or CSV `id,lon,lat[,attr...]`
//! * trips: CSV `o_lon,o_lat,d_lon,d_lat[,timestamp]`, or pre-aggregated
//!   `o_id,d_id,count`
//! * edge list: CSV `i,j,flow,distance_m,weight`

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use super::{Edge, Endpoint, SpatialGraph, TripRecord, Zone, ZoneSet};
use crate::error::{Error, Result};
use crate::geo::{DistanceMetric, GeoPoint, Polygon, Ring};

pub const EDGE_LIST_HEADER: &str = "i,j,flow,distance_m,weight";

/// Formats `x` with `digits` significant digits in the style of C's `%g`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Loads zones from `.geojson`/`.json` or `.csv` by extension.
pub fn load_zones(path: &Path, metric: DistanceMetric) -> Result<ZoneSet> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let zones = match ext.as_str() {
        "geojson" | "json" => parse_geojson_zones(&read_to_string(path)?, metric, &path.display().to_string())?,
        _ => parse_csv_zones(open(path)?, metric, &path.display().to_string())?,
    };
    ZoneSet::new(zones, metric)
}

pub fn parse_csv_zones<R: Read>(reader: R, metric: DistanceMetric, origin: &str) -> Result<Vec<Zone>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id_col), Some(lon_col), Some(lat_col)) = (col("id"), col("lon"), col("lat")) else {
        return Err(Error::parse(origin, "zone CSV header must start with id,lon,lat"));
    };
    let mut zones = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let num = |c: usize| -> Result<f64> {
            rec.get(c).unwrap_or("").parse::<f64>().map_err(|_| {
                Error::parse(origin, format!("line {line}: `{}` is not a number", rec.get(c).unwrap_or("")))
            })
        };
        let centroid = metric.point(num(lon_col)?, num(lat_col)?)?;
        let mut zone = Zone::new(rec.get(id_col).unwrap_or(""), centroid);
        for (c, name) in headers.iter().enumerate() {
            if c == id_col || c == lon_col || c == lat_col {
                continue;
            }
            let cell = rec.get(c).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            zone.attributes.insert(name.to_string(), num(c)?);
        }
        zones.push(zone);
    }
    Ok(zones)
}

fn coord(v: &Value, metric: DistanceMetric, origin: &str) -> Result<GeoPoint> {
    let arr = v.as_array().filter(|a| a.len() >= 2);
    let xy = arr.and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)));
    let (x, y) = xy.ok_or_else(|| Error::parse(origin, "coordinate must be [x, y]"))?;
    metric.point(x, y)
}

fn ring(v: &Value, zone: &str, metric: DistanceMetric, origin: &str) -> Result<Ring> {
    let pts = v
        .as_array()
        .ok_or_else(|| Error::parse(origin, format!("zone `{zone}`: ring must be an array")))?
        .iter()
        .map(|c| coord(c, metric, origin))
        .collect::<Result<Vec<_>>>()?;
    Ring::new(zone, pts)
}

fn polygon(v: &Value, zone: &str, metric: DistanceMetric, origin: &str) -> Result<Polygon> {
    let rings = v
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::parse(origin, format!("zone `{zone}`: polygon needs an exterior ring")))?;
    let exterior = ring(&rings[0], zone, metric, origin)?;
    let holes = rings[1..].iter().map(|r| ring(r, zone, metric, origin)).collect::<Result<_>>()?;
    Ok(Polygon { exterior, holes })
}

fn area_weighted_centroid(polys: &[Polygon]) -> GeoPoint {
    let (mut sx, mut sy, mut sa) = (0.0, 0.0, 0.0);
    for p in polys {
        let a = p.exterior.signed_area().abs();
        let c = p.exterior.centroid();
        sx += c.lon * a;
        sy += c.lat * a;
        sa += a;
    }
    GeoPoint { lon: sx / sa, lat: sy / sa }
}

pub fn parse_geojson_zones(text: &str, metric: DistanceMetric, origin: &str) -> Result<Vec<Zone>> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(origin, "expected a FeatureCollection with `features`"))?;
    let mut zones = Vec::with_capacity(features.len());
    for (k, feat) in features.iter().enumerate() {
        let props = feat.get("properties").and_then(Value::as_object);
        let id = match props.and_then(|p| p.get("id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(Error::parse(origin, format!("feature {k}: missing `id` property"))),
        };
        let geom =
            feat.get("geometry").ok_or_else(|| Error::parse(origin, format!("zone `{id}`: missing geometry")))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let (centroid, polygons) = match geom.get("type").and_then(Value::as_str) {
            Some("Point") => (coord(coords, metric, origin)?, Vec::new()),
            Some("Polygon") => {
                let p = vec![polygon(coords, &id, metric, origin)?];
                (area_weighted_centroid(&p), p)
            }
            Some("MultiPolygon") => {
                let parts = coords
                    .as_array()
                    .ok_or_else(|| Error::parse(origin, format!("zone `{id}`: malformed MultiPolygon")))?;
                let p = parts.iter().map(|c| polygon(c, &id, metric, origin)).collect::<Result<Vec<_>>>()?;
                if p.is_empty() {
                    return Err(Error::DegeneratePolygon { zone: id, reason: "empty MultiPolygon".into() });
                }
                (area_weighted_centroid(&p), p)
            }
            other => {
                return Err(Error::parse(origin, format!("zone `{id}`: unsupported geometry {other:?}")));
            }
        };
        let attributes: BTreeMap<String, f64> = props
            .into_iter()
            .flatten()
            .filter(|(name, _)| name.as_str() != "id")
            .filter_map(|(name, v)| v.as_f64().map(|x| (name.clone(), x)))
            .collect();
        zones.push(Zone { id, centroid, polygons, attributes });
    }
    Ok(zones)
}

/// Trip input in either supported layout.
#[derive(Debug, Clone, PartialEq)]
pub enum TripInput {
    Trips(Vec<TripRecord>),
    Aggregated(Vec<(String, String, u64)>),
}

pub fn load_trips(path: &Path, metric: DistanceMetric) -> Result<TripInput> {
    parse_trips(open(path)?, metric, &path.display().to_string())
}

pub fn parse_trips<R: Read>(reader: R, metric: DistanceMetric, origin: &str) -> Result<TripInput> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    if let (Some(o), Some(d), Some(c)) = (col("o_id"), col("d_id"), col("count")) {
        let mut out = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let count =
                rec.get(c).unwrap_or("").parse::<u64>().map_err(|_| {
                    Error::parse(origin, format!("line {}: count must be a non-negative integer", row + 2))
                })?;
            out.push((rec.get(o).unwrap_or("").to_string(), rec.get(d).unwrap_or("").to_string(), count));
        }
        return Ok(TripInput::Aggregated(out));
    }
    let cols = ["o_lon", "o_lat", "d_lon", "d_lat"].map(col);
    let [Some(olon), Some(olat), Some(dlon), Some(dlat)] = cols else {
        return Err(Error::parse(
            origin,
            "trip CSV header must be o_lon,o_lat,d_lon,d_lat[,timestamp] or o_id,d_id,count",
        ));
    };
    let ts = col("timestamp");
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c).unwrap_or("").parse().map_err(|_| {
                Error::parse(origin, format!("line {}: `{}` is not a number", row + 2, rec.get(c).unwrap_or("")))
            })
        };
        out.push(TripRecord {
            origin: Endpoint::Point(metric.point(num(olon)?, num(olat)?)?),
            destination: Endpoint::Point(metric.point(num(dlon)?, num(dlat)?)?),
            timestamp: ts.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()).map(str::to_string),
        });
    }
    Ok(TripInput::Trips(out))
}

/// Writes `i,j,flow,distance_m,weight` with zone ids for `i`, `j` and
/// 12 significant digits for the real-valued columns.
pub fn write_edge_list<W: Write>(graph: &SpatialGraph, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{EDGE_LIST_HEADER}")?;
    let ids = graph.node_ids();
    for e in graph.edges() {
        writeln!(
            out,
            "{},{},{},{},{}",
            ids[e.source],
            ids[e.target],
            e.flow,
            format_significant(e.distance_m, 12),
            format_significant(e.weight, 12)
        )?;
    }
    Ok(())
}

/// Reads an edge list. `extra_nodes` adds ids that may have no edges (for
/// instance every zone of the originating zone set).
pub fn read_edge_list<R: Read>(reader: R, extra_nodes: &[String], origin: &str) -> Result<SpatialGraph> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != EDGE_LIST_HEADER {
        return Err(Error::parse(origin, format!("edge list header must be `{EDGE_LIST_HEADER}`")));
    }
    let mut ids: Vec<String> = extra_nodes.to_vec();
    let mut index: BTreeMap<String, usize> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let mut edges = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let mut node = |s: &str| -> usize {
            *index.entry(s.to_string()).or_insert_with(|| {
                ids.push(s.to_string());
                ids.len() - 1
            })
        };
        let source = node(&rec[0]);
        let target = node(&rec[1]);
        let bad = |what: &str| Error::parse(origin, format!("line {line}: invalid {what}"));
        edges.push(Edge {
            source,
            target,
            flow: rec[2].parse().map_err(|_| bad("flow"))?,
            distance_m: rec[3].parse().map_err(|_| bad("distance_m"))?,
            weight: rec[4].parse().map_err(|_| bad("weight"))?,
        });
    }
    SpatialGraph::from_edges(ids, edges)
}

pub fn load_edge_list(path: &Path, extra_nodes: &[String]) -> Result<SpatialGraph> {
    read_edge_list(open(path)?, extra_nodes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.02, 12), "0.02");
        assert_eq!(format_significant(500.0, 12), "500");
        assert_eq!(format_significant(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(format_significant(2.0 / 3.0 * 1e-7, 12), "6.66666666667e-08");
        assert_eq!(format_significant(123456789012345.0, 12), "1.23456789012e+14");
        assert_eq!(format_significant(1234.5678, 12), "1234.5678");
        assert_eq!(format_significant(0.0, 12), "0");
    }

    #[test]
    fn csv_zones_with_attributes() {
        let text = "id,lon,lat,pop,income\nA,-77.0,38.9,100,\nB,-77.01,38.91,50,2.5\n";
        let zones = parse_csv_zones(text.as_bytes(), DistanceMetric::Haversine, "z.csv").unwrap();
        assert_eq!(zones.len(), 2);
        assert_eq!(zones[0].attributes.get("pop"), Some(&100.0));
        assert!(!zones[0].attributes.contains_key("income"));
        assert_eq!(zones[1].attributes.get("income"), Some(&2.5));
        assert!(parse_csv_zones("name,x\n".as_bytes(), DistanceMetric::Planar, "z.csv").is_err());
    }

    #[test]
    fn geojson_polygons_and_points() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"id":"sq","pop":3},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[2,0],[2,2],[0,2],[0,0]]]}},
          {"type":"Feature","properties":{"id":7,"name":"x"},
           "geometry":{"type":"Point","coordinates":[5,5]}}]}"#;
        let zones = parse_geojson_zones(text, DistanceMetric::Haversine, "z.geojson").unwrap();
        assert_eq!(zones[0].centroid, GeoPoint { lon: 1.0, lat: 1.0 });
        assert_eq!(zones[0].attributes.get("pop"), Some(&3.0));
        assert_eq!(zones[1].id, "7");
        assert!(zones[1].polygons.is_empty());
        assert!(zones[1].attributes.is_empty());
    }

    #[test]
    fn geojson_degenerate_polygon_rejected_at_load() {
        let text = r#"{"features":[{"properties":{"id":"bad"},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,1],[0,0]]]}}]}"#;
        assert!(matches!(
            parse_geojson_zones(text, DistanceMetric::Haversine, "z"),
            Err(Error::DegeneratePolygon { zone, .. }) if zone == "bad"
        ));
    }

    #[test]
    fn trip_layouts() {
        let raw = "o_lon,o_lat,d_lon,d_lat,timestamp\n0,0,1,1,2020-01-01\n1,1,0,0,\n";
        let TripInput::Trips(t) = parse_trips(raw.as_bytes(), DistanceMetric::Haversine, "t").unwrap() else {
            panic!("expected raw trips");
        };
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].timestamp.as_deref(), Some("2020-01-01"));
        assert_eq!(t[1].timestamp, None);
        let agg = "o_id,d_id,count\nA,B,3\n";
        assert_eq!(
            parse_trips(agg.as_bytes(), DistanceMetric::Haversine, "t").unwrap(),
            TripInput::Aggregated(vec![("A".into(), "B".into(), 3)])
        );
        assert!(parse_trips("a,b\n".as_bytes(), DistanceMetric::Haversine, "t").is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = SpatialGraph::from_edges(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                Edge { source: 0, target: 1, flow: 3, distance_m: 250.0, weight: 0.012 },
                Edge { source: 2, target: 0, flow: 1, distance_m: 3.0, weight: 1.0 / 3.0 },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,j,flow,distance_m,weight\na,b,3,250,0.012\n"));
        let back = read_edge_list(text.as_bytes(), &["d".into()], "g.csv").unwrap();
        assert_eq!(back.node_count(), 4);
        assert_eq!(back.edges()[1].weight, 0.333333333333);
        assert!(read_edge_list("x,y\n".as_bytes(), &[], "g.csv").is_err());
    }
}
