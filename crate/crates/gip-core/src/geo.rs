//! Points, distances and polygon containment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by [`haversine_distance`], in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A location. Geographic points carry longitude/latitude in degrees; points
/// built with [`GeoPoint::projected`] carry plane coordinates in meters in the
/// same two slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::InvalidCoordinate { lon, lat, reason: "not finite" });
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidCoordinate { lon, lat, reason: "longitude outside [-180, 180]" });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate { lon, lat, reason: "latitude outside [-90, 90]" });
        }
        Ok(Self { lon, lat })
    }

    /// A point in an already-projected planar frame (meters).
    pub fn projected(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidCoordinate { lon: x, lat: y, reason: "not finite" });
        }
        Ok(Self { lon: x, lat: y })
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // Symmetric in (a, b) up to the sign of the deltas, which the squares remove.
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Euclidean distance treating both points as projected meters.
pub fn planar_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    (a.lon - b.lon).hypot(a.lat - b.lat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Longitude/latitude input, great-circle meters.
    #[default]
    Haversine,
    /// Coordinates are already in meters.
    Planar,
}

impl DistanceMetric {
    pub fn distance(self, a: GeoPoint, b: GeoPoint) -> f64 {
        match self {
            DistanceMetric::Haversine => haversine_distance(a, b),
            DistanceMetric::Planar => planar_distance(a, b),
        }
    }

    pub fn point(self, x: f64, y: f64) -> Result<GeoPoint> {
        match self {
            DistanceMetric::Haversine => GeoPoint::new(x, y),
            DistanceMetric::Planar => GeoPoint::projected(x, y),
        }
    }
}

/// A closed ring stored without the repeated closing vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring(Vec<GeoPoint>);

impl Ring {
    /// Validates a ring: at least three distinct vertices and no two
    /// non-adjacent edges touching. A trailing vertex equal to the first is
    /// dropped.
    pub fn new(zone: &str, mut vertices: Vec<GeoPoint>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        vertices.dedup();
        let mut distinct: Vec<(u64, u64)> = vertices.iter().map(|p| (p.lon.to_bits(), p.lat.to_bits())).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::DegeneratePolygon {
                zone: zone.to_string(),
                reason: format!("{} distinct vertices, need at least 3", distinct.len()),
            });
        }
        let ring = Ring(vertices);
        if let Some((e1, e2)) = ring.self_intersection() {
            return Err(Error::DegeneratePolygon {
                zone: zone.to_string(),
                reason: format!("ring edges {e1} and {e2} intersect"),
            });
        }
        Ok(ring)
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.0
    }

    fn edges(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        let n = self.0.len();
        (0..n).map(move |i| (self.0[i], self.0[(i + 1) % n]))
    }

    fn self_intersection(&self) -> Option<(usize, usize)> {
        let edges: Vec<_> = self.edges().collect();
        let n = edges.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Ray-casting containment; points on an edge count as inside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if on_segment(a, b, p) {
                return true;
            }
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let x_cross = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                if p.lon < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Signed shoelace area in squared coordinate units.
    pub fn signed_area(&self) -> f64 {
        self.local_edges().map(|((x1, y1), (x2, y2))| x1 * y2 - x2 * y1).sum::<f64>() / 2.0
    }

    /// Area-weighted centroid in coordinate space.
    pub fn centroid(&self) -> GeoPoint {
        let o = self.0[0];
        let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for ((x1, y1), (x2, y2)) in self.local_edges() {
            let cross = x1 * y2 - x2 * y1;
            a2 += cross;
            cx += (x1 + x2) * cross;
            cy += (y1 + y2) * cross;
        }
        GeoPoint { lon: o.lon + cx / (3.0 * a2), lat: o.lat + cy / (3.0 * a2) }
    }

    // Edges relative to the first vertex; shoelace sums over raw lon/lat
    // lose most of their digits to cancellation.
    fn local_edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        let o = self.0[0];
        self.edges().map(move |(a, b)| ((a.lon - o.lon, a.lat - o.lat), (b.lon - o.lon, b.lat - o.lat)))
    }

    pub(crate) fn bbox(&self) -> [f64; 4] {
        self.0
            .iter()
            .fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |[x0, y0, x1, y1], p| {
                [x0.min(p.lon), y0.min(p.lat), x1.max(p.lon), y1.max(p.lat)]
            })
    }
}

/// An exterior ring with optional holes. Points on a hole's boundary are
/// still inside the polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn new(exterior: Ring) -> Self {
        Self { exterior, holes: Vec::new() }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.exterior.contains(p) && self.holes.iter().all(|h| !h.contains(p) || on_boundary(h, p))
    }

    pub fn area(&self) -> f64 {
        self.exterior.signed_area().abs() - self.holes.iter().map(|h| h.signed_area().abs()).sum::<f64>()
    }
}

fn on_boundary(ring: &Ring, p: GeoPoint) -> bool {
    ring.edges().any(|(a, b)| on_segment(a, b, p))
}

fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn within_box(a: GeoPoint, b: GeoPoint, p: GeoPoint) -> bool {
    p.lon >= a.lon.min(b.lon) && p.lon <= a.lon.max(b.lon) && p.lat >= a.lat.min(b.lat) && p.lat <= a.lat.max(b.lat)
}

fn on_segment(a: GeoPoint, b: GeoPoint, p: GeoPoint) -> bool {
    let scale = (b.lon - a.lon).abs().max((b.lat - a.lat).abs()).max(1.0);
    orient(a, b, p).abs() <= 1e-12 * scale * scale && within_box(a, b, p)
}

fn segments_intersect(p1: GeoPoint, p2: GeoPoint, q1: GeoPoint, q2: GeoPoint) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && within_box(q1, q2, p1))
        || (d2 == 0.0 && within_box(q1, q2, p2))
        || (d3 == 0.0 && within_box(p1, p2, q1))
        || (d4 == 0.0 && within_box(p1, p2, q2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> GeoPoint {
        GeoPoint::new(x, y).unwrap()
    }

    fn square(x0: f64, y0: f64, side: f64) -> Ring {
        Ring::new("sq", vec![p(x0, y0), p(x0 + side, y0), p(x0 + side, y0 + side), p(x0, y0 + side), p(x0, y0)])
            .unwrap()
    }

    /// Winding number about `q`, computed from summed signed angles.
    fn winding_number(ring: &Ring, q: GeoPoint) -> i64 {
        let v = ring.vertices();
        let mut total = 0.0;
        for i in 0..v.len() {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            let (ax, ay) = (a.lon - q.lon, a.lat - q.lat);
            let (bx, by) = (b.lon - q.lon, b.lat - q.lat);
            total += (ax * by - ay * bx).atan2(ax * bx + ay * by);
        }
        (total / std::f64::consts::TAU).round() as i64
    }

    #[test]
    fn identical_points_are_zero_apart() {
        assert_eq!(haversine_distance(p(0.0, 0.0), p(0.0, 0.0)), 0.0);
        assert_eq!(haversine_distance(p(-77.03, 38.9), p(-77.03, 38.9)), 0.0);
    }

    #[test]
    fn quarter_great_circle() {
        let d = haversine_distance(p(0.0, 0.0), p(0.0, 90.0));
        let expected = std::f64::consts::PI * EARTH_RADIUS_M / 2.0;
        assert!((d - expected).abs() < 1.0, "{d} vs {expected}");
        assert!((d - 10_007_543.0).abs() < 1.0);
    }

    #[test]
    fn haversine_is_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = p(rng.random_range(-180.0..=180.0), rng.random_range(-90.0..=90.0));
            let b = p(rng.random_range(-180.0..=180.0), rng.random_range(-90.0..=90.0));
            assert_eq!(haversine_distance(a, b), haversine_distance(b, a));
            assert!(haversine_distance(a, b) > 0.0);
        }
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert!(GeoPoint::new(181.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -90.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::projected(5e6, -3e6).is_ok());
        assert!(GeoPoint::projected(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn degenerate_rings_rejected() {
        assert!(Ring::new("z", vec![p(0.0, 0.0), p(1.0, 0.0), p(0.0, 0.0)]).is_err());
        assert!(Ring::new("z", vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 0.0), p(0.0, 0.0)]).is_err());
        // bow tie
        let bow = Ring::new("z", vec![p(0.0, 0.0), p(1.0, 1.0), p(1.0, 0.0), p(0.0, 1.0)]);
        assert!(matches!(bow, Err(Error::DegeneratePolygon { .. })));
    }

    #[test]
    fn boundary_counts_as_inside() {
        let sq = square(0.0, 0.0, 1.0);
        assert!(sq.contains(p(0.5, 0.5)));
        assert!(sq.contains(p(0.0, 0.5)));
        assert!(sq.contains(p(1.0, 1.0)));
        assert!(sq.contains(p(0.5, 0.0)));
        assert!(!sq.contains(p(1.0001, 0.5)));
    }

    #[test]
    fn holes_excluded() {
        let mut poly = Polygon::new(square(0.0, 0.0, 4.0));
        poly.holes.push(square(1.0, 1.0, 2.0));
        assert!(poly.contains(p(0.5, 0.5)));
        assert!(!poly.contains(p(2.0, 2.0)));
        assert!(poly.contains(p(1.0, 2.0)));
        assert!((poly.area() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_of_square() {
        let c = square(2.0, 4.0, 2.0).centroid();
        assert!((c.lon - 3.0).abs() < 1e-12 && (c.lat - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ray_casting_matches_winding_number() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // star-shaped (hence simple) polygon with irregular radii
        let verts: Vec<GeoPoint> = (0..9)
            .map(|k| {
                let t = k as f64 / 9.0 * std::f64::consts::TAU;
                let r = rng.random_range(0.4..1.0);
                p(r * t.cos(), r * t.sin())
            })
            .collect();
        let ring = Ring::new("star", verts).unwrap();
        for _ in 0..1000 {
            let q = p(rng.random_range(-1.1..1.1), rng.random_range(-1.1..1.1));
            assert_eq!(ring.contains(q), winding_number(&ring, q) != 0, "{q:?}");
        }
    }
}
