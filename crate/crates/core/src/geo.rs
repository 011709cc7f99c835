//! Geographic primitives: points, polygons, a local metric frame and raster grids.
//!
//! Angles are in **degrees**, distances in **meters**. All distance work happens in an
//! equirectangular frame tangent at an origin; over the sub-kilometer extents of street
//! lighting the error against a great-circle distance is far below a centimeter per
//! hundred meters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Radius used for the degree-to-meter constants (WGS-84 equatorial radius).
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Meters per degree of latitude in the local frame.
pub const METERS_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Maximum distance from the frame origin for which projections are accepted.
pub const FRAME_VALIDITY_RADIUS_M: f64 = 100_000.0;

/// Frames cannot be built closer than this to a pole.
pub const MAX_FRAME_LATITUDE: f64 = 89.0;

/// Hard cap on the number of cells a single grid may hold.
pub const MAX_GRID_CELLS: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("invalid latitude {0}; expected finite degrees in [-90, 90]")]
    InvalidLatitude(f64),
    #[error("invalid longitude {0}; expected finite degrees in [-180, 180]")]
    InvalidLongitude(f64),
    #[error("frame origin latitude {0} is too close to a pole (|lat| must be < 89)")]
    PolarLatitude(f64),
    #[error("point ({lat}, {lon}) lies {distance_m:.0} m from the frame origin, beyond the 100 km validity radius")]
    OutOfFrame { lat: f64, lon: f64, distance_m: f64 },
    #[error("polygon needs at least 3 distinct vertices, got {0}")]
    DegeneratePolygon(usize),
    #[error("polygon ring intersects itself between edges {0} and {1}")]
    SelfIntersecting(usize, usize),
    #[error("invalid bounding box: min must be strictly south-west of max")]
    InvalidBbox,
    #[error("cell size must be finite and > 0, got {0}")]
    InvalidCellSize(f64),
    #[error("grid of {rows}x{cols} cells exceeds the {max} cell limit")]
    GridTooLarge { rows: usize, cols: usize, max: usize },
}

/// A WGS-84 style latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat_deg, lon: p.lon_deg }
    }
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::InvalidLatitude(lat_deg));
        }
        if !lon_deg.is_finite() || !(-180.0..=180.0).contains(&lon_deg) {
            return Err(GeoError::InvalidLongitude(lon_deg));
        }
        Ok(Self { lat_deg, lon_deg })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat_deg
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon_deg
    }
}

/// Offset in meters inside a [`LocalFrame`]: `x` grows east, `y` grows north.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Meters {
    pub x: f64,
    pub y: f64,
}

impl Meters {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(&self, other: &Meters) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Equirectangular projection tangent at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    origin: GeoPoint,
    meters_per_deg_lat: f64,
    meters_per_deg_lon: f64,
}

/// Builds the local frame at `origin`. Fails for `|lat| >= 89`.
pub fn make_local_frame(origin: GeoPoint) -> Result<LocalFrame, GeoError> {
    LocalFrame::new(origin)
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Result<Self, GeoError> {
        if origin.lat().abs() >= MAX_FRAME_LATITUDE {
            return Err(GeoError::PolarLatitude(origin.lat()));
        }
        Ok(Self {
            origin,
            meters_per_deg_lat: METERS_PER_DEG,
            meters_per_deg_lon: METERS_PER_DEG * origin.lat().to_radians().cos(),
        })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn meters_per_deg_lat(&self) -> f64 {
        self.meters_per_deg_lat
    }

    pub fn meters_per_deg_lon(&self) -> f64 {
        self.meters_per_deg_lon
    }

    /// Projects without the validity-radius check. Used on hot paths where the
    /// caller has already validated the extent.
    #[inline]
    pub fn project_unchecked(&self, p: &GeoPoint) -> Meters {
        Meters {
            x: (p.lon() - self.origin.lon()) * self.meters_per_deg_lon,
            y: (p.lat() - self.origin.lat()) * self.meters_per_deg_lat,
        }
    }

    pub fn project(&self, p: &GeoPoint) -> Result<Meters, GeoError> {
        let m = self.project_unchecked(p);
        let r = m.norm();
        if r > FRAME_VALIDITY_RADIUS_M {
            return Err(GeoError::OutOfFrame { lat: p.lat(), lon: p.lon(), distance_m: r });
        }
        Ok(m)
    }

    pub fn unproject(&self, m: Meters) -> Result<GeoPoint, GeoError> {
        GeoPoint::new(
            self.origin.lat() + m.y / self.meters_per_deg_lat,
            self.origin.lon() + m.x / self.meters_per_deg_lon,
        )
    }

    /// Euclidean distance between two points in this frame.
    pub fn distance_m(&self, a: &GeoPoint, b: &GeoPoint) -> Result<f64, GeoError> {
        Ok(self.project(a)?.dist(&self.project(b)?))
    }
}

/// Distance in meters between `a` and `b` measured in `frame`.
pub fn distance_m(a: &GeoPoint, b: &GeoPoint, frame: &LocalFrame) -> Result<f64, GeoError> {
    frame.distance_m(a, b)
}

/// Simple polygon (no holes). The stored ring is always closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct GeoPolygon {
    ring: Vec<GeoPoint>,
}

impl TryFrom<Vec<GeoPoint>> for GeoPolygon {
    type Error = GeoError;

    fn try_from(ring: Vec<GeoPoint>) -> Result<Self, Self::Error> {
        GeoPolygon::new(ring)
    }
}

impl From<GeoPolygon> for Vec<GeoPoint> {
    fn from(p: GeoPolygon) -> Self {
        p.ring
    }
}

impl GeoPolygon {
    /// Validates and closes the ring.
    pub fn new(mut ring: Vec<GeoPoint>) -> Result<Self, GeoError> {
        let mut distinct: Vec<GeoPoint> = Vec::with_capacity(ring.len());
        for p in &ring {
            if !distinct.iter().any(|q| q == p) {
                distinct.push(*p);
            }
        }
        if distinct.len() < 3 {
            return Err(GeoError::DegeneratePolygon(distinct.len()));
        }
        if ring.first() != ring.last() {
            ring.push(ring[0]);
        }
        let poly = Self { ring };
        poly.check_simple()?;
        Ok(poly)
    }

    /// Axis-aligned rectangle from its south-west and north-east corners.
    pub fn rectangle(sw: GeoPoint, ne: GeoPoint) -> Result<Self, GeoError> {
        if !(sw.lat() < ne.lat() && sw.lon() < ne.lon()) {
            return Err(GeoError::InvalidBbox);
        }
        Self::new(vec![
            sw,
            GeoPoint::new(sw.lat(), ne.lon())?,
            ne,
            GeoPoint::new(ne.lat(), sw.lon())?,
        ])
    }

    /// The closed ring (first vertex repeated at the end).
    pub fn ring(&self) -> &[GeoPoint] {
        &self.ring
    }

    pub fn bbox(&self) -> (GeoPoint, GeoPoint) {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.ring {
            min.0 = min.0.min(p.lat());
            min.1 = min.1.min(p.lon());
            max.0 = max.0.max(p.lat());
            max.1 = max.1.max(p.lon());
        }
        (GeoPoint { lat_deg: min.0, lon_deg: min.1 }, GeoPoint { lat_deg: max.0, lon_deg: max.1 })
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        contains_ring(&self.ring, p.lon(), p.lat())
    }

    fn check_simple(&self) -> Result<(), GeoError> {
        let n = self.ring.len() - 1;
        let seg = |i: usize| {
            let a = self.ring[i];
            let b = self.ring[i + 1];
            ((a.lon(), a.lat()), (b.lon(), b.lat()))
        };
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = seg(i);
                let (c, d) = seg(j);
                if segments_intersect(a, b, c, d) {
                    return Err(GeoError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(())
    }
}

/// Point-in-polygon by the even-odd rule. Points on an edge or vertex count as inside.
pub fn contains(poly: &GeoPolygon, p: &GeoPoint) -> bool {
    poly.contains(p)
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    let span = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1e-300);
    orient(a, b, p).abs() <= 1e-12 * span
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn contains_ring(ring: &[GeoPoint], x: f64, y: f64) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let a = (w[0].lon(), w[0].lat());
        let b = (w[1].lon(), w[1].lat());
        if on_segment(a, b, (x, y)) {
            return true;
        }
        if (a.1 > y) != (b.1 > y) {
            let x_cross = a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Raster grid over a bounding box.
///
/// Cells are exactly `cell_size_m` square in the frame at the bbox center. The grid is
/// centered in the bbox, so `rows = max(1, floor(height / cell))` (likewise for cols) and
/// every cell center lies inside the bbox. Row 0 is the northernmost row; indices are
/// row-major (`row * cols + col`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    bbox: (GeoPoint, GeoPoint),
    cell_size_m: f64,
    rows: usize,
    cols: usize,
    frame: LocalFrame,
    north: f64,
    west: f64,
    dlat: f64,
    dlon: f64,
}

impl GridSpec {
    pub fn new(min: GeoPoint, max: GeoPoint, cell_size_m: f64) -> Result<Self, GeoError> {
        if !(min.lat() < max.lat() && min.lon() < max.lon()) {
            return Err(GeoError::InvalidBbox);
        }
        if !cell_size_m.is_finite() || cell_size_m <= 0.0 {
            return Err(GeoError::InvalidCellSize(cell_size_m));
        }
        let center = GeoPoint::new((min.lat() + max.lat()) / 2.0, (min.lon() + max.lon()) / 2.0)?;
        let frame = LocalFrame::new(center)?;
        let dlat = cell_size_m / frame.meters_per_deg_lat();
        let dlon = cell_size_m / frame.meters_per_deg_lon();
        let lat_span = max.lat() - min.lat();
        let lon_span = max.lon() - min.lon();
        // the epsilon keeps exact multiples of the cell size from losing a row to round-off
        let rows = ((lat_span / dlat + 1e-9).floor() as usize).max(1);
        let cols = ((lon_span / dlon + 1e-9).floor() as usize).max(1);
        match rows.checked_mul(cols) {
            Some(n) if n <= MAX_GRID_CELLS => {}
            _ => return Err(GeoError::GridTooLarge { rows, cols, max: MAX_GRID_CELLS }),
        }
        let north = center.lat() + rows as f64 * dlat / 2.0;
        let west = center.lon() - cols as f64 * dlon / 2.0;
        Ok(Self { bbox: (min, max), cell_size_m, rows, cols, frame, north, west, dlat, dlon })
    }

    pub fn bbox(&self) -> (GeoPoint, GeoPoint) {
        self.bbox
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn cell_area_m2(&self) -> f64 {
        self.cell_size_m * self.cell_size_m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint {
            lat_deg: self.north - (row as f64 + 0.5) * self.dlat,
            lon_deg: self.west + (col as f64 + 0.5) * self.dlon,
        }
    }

    #[inline]
    pub fn index_center(&self, idx: usize) -> GeoPoint {
        self.cell_center(idx / self.cols, idx % self.cols)
    }

    /// Inclusive row/col ranges whose centers may fall inside `[min, max]`.
    fn index_window(&self, min: &GeoPoint, max: &GeoPoint) -> Option<((usize, usize), (usize, usize))> {
        let r_lo = ((self.north - max.lat()) / self.dlat - 0.5).floor().max(0.0);
        let r_hi = ((self.north - min.lat()) / self.dlat - 0.5).ceil();
        let c_lo = ((min.lon() - self.west) / self.dlon - 0.5).floor().max(0.0);
        let c_hi = ((max.lon() - self.west) / self.dlon - 0.5).ceil();
        if r_hi < 0.0 || c_hi < 0.0 || r_lo >= self.rows as f64 || c_lo >= self.cols as f64 {
            return None;
        }
        let r_hi = (r_hi as usize).min(self.rows - 1);
        let c_hi = (c_hi as usize).min(self.cols - 1);
        Some(((r_lo as usize, r_hi), (c_lo as usize, c_hi)))
    }
}

/// Row-major indices of the cells whose centers lie inside `poly`. Empty when the
/// polygon misses the grid.
pub fn cells_in(poly: &GeoPolygon, grid: &GridSpec) -> Vec<usize> {
    let (min, max) = poly.bbox();
    let Some(((r0, r1), (c0, c1))) = grid.index_window(&min, &max) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if poly.contains(&grid.cell_center(r, c)) {
                out.push(r * grid.cols() + c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn haversine(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
        let dp = p2 - p1;
        let dl = (b.lon() - a.lon()).to_radians();
        let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().asin()
    }

    #[test]
    fn frame_constants_match_haversine() {
        let origin = pt(30.055, -81.615);
        let f = make_local_frame(origin).unwrap();
        assert!((f.meters_per_deg_lat() - 111_320.0).abs() < 1.0);
        let expected_lon = f.meters_per_deg_lat() * 30.055f64.to_radians().cos();
        assert!((f.meters_per_deg_lon() - expected_lon).abs() < 1e-9);
        // 1 km offsets along each axis and diagonally
        for (dx, dy) in [(1000.0, 0.0), (0.0, 1000.0), (707.0, 707.0), (-1000.0, 0.0)] {
            let q = f.unproject(Meters::new(dx, dy)).unwrap();
            let local = f.distance_m(&origin, &q).unwrap();
            let hav = haversine(&origin, &q);
            assert!((local - hav).abs() / hav < 1e-3, "{dx},{dy}: {local} vs {hav}");
        }
    }

    #[test]
    fn equator_is_isotropic() {
        let f = make_local_frame(pt(0.0, 0.0)).unwrap();
        assert_eq!(f.meters_per_deg_lat(), f.meters_per_deg_lon());
    }

    #[test]
    fn origin_projects_to_zero() {
        let o = pt(30.055, -81.615);
        let f = make_local_frame(o).unwrap();
        assert_eq!(f.project(&o).unwrap(), Meters::new(0.0, 0.0));
    }

    #[test]
    fn polar_origin_rejected() {
        assert_eq!(make_local_frame(pt(89.5, 0.0)), Err(GeoError::PolarLatitude(89.5)));
        assert!(make_local_frame(pt(-89.0, 10.0)).is_err());
        assert!(make_local_frame(pt(88.99, 10.0)).is_ok());
    }

    #[test]
    fn out_of_frame_detected() {
        let f = make_local_frame(pt(10.0, 10.0)).unwrap();
        let far = pt(12.0, 10.0);
        assert!(matches!(f.project(&far), Err(GeoError::OutOfFrame { .. })));
        assert!(distance_m(&far, &pt(10.0, 10.0), &f).is_err());
    }

    #[test]
    fn thousandth_degree_of_latitude() {
        for lon in [-170.0, -81.6, 0.0, 45.0] {
            let f = make_local_frame(pt(30.0, lon)).unwrap();
            let d = distance_m(&pt(30.0, lon), &pt(30.001, lon), &f).unwrap();
            assert!((d - 111.32).abs() < 0.01, "{d}");
        }
    }

    #[test]
    fn distance_zero_for_same_point() {
        let f = make_local_frame(pt(1.0, 2.0)).unwrap();
        assert_eq!(distance_m(&pt(1.01, 2.01), &pt(1.01, 2.01), &f).unwrap(), 0.0);
    }

    #[test]
    fn invalid_points() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    fn square() -> GeoPolygon {
        GeoPolygon::rectangle(pt(0.0, 0.0), pt(1.0, 1.0)).unwrap()
    }

    #[test]
    fn contains_basic() {
        let sq = square();
        assert!(sq.contains(&pt(0.5, 0.5)));
        assert!(!sq.contains(&pt(1.01, 0.5)));
        assert!(sq.contains(&pt(0.0, 0.0)), "vertex counts as inside");
        assert!(sq.contains(&pt(0.5, 1.0)), "edge counts as inside");
        assert!(!sq.contains(&pt(5.0, 5.0)));
    }

    #[test]
    fn concave_polygon() {
        // U shape opening north
        let u = GeoPolygon::new(vec![
            pt(0.0, 0.0),
            pt(0.0, 3.0),
            pt(3.0, 3.0),
            pt(3.0, 2.0),
            pt(1.0, 2.0),
            pt(1.0, 1.0),
            pt(3.0, 1.0),
            pt(3.0, 0.0),
        ])
        .unwrap();
        assert!(u.contains(&pt(0.5, 1.5)));
        assert!(!u.contains(&pt(2.0, 1.5)));
        assert!(u.contains(&pt(2.0, 0.5)));
    }

    #[test]
    fn degenerate_and_self_intersecting() {
        assert_eq!(
            GeoPolygon::new(vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(0.0, 0.0)]),
            Err(GeoError::DegeneratePolygon(2))
        );
        let bowtie = GeoPolygon::new(vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(1.0, 0.0), pt(0.0, 1.0)]);
        assert!(matches!(bowtie, Err(GeoError::SelfIntersecting(..))));
    }

    #[test]
    fn ring_is_closed() {
        let sq = square();
        assert_eq!(sq.ring().first(), sq.ring().last());
        assert_eq!(sq.ring().len(), 5);
    }

    #[test]
    fn grid_centers_inside_bbox() {
        let g = GridSpec::new(pt(30.05, -81.62), pt(30.06, -81.61), 7.0).unwrap();
        let (min, max) = g.bbox();
        for idx in [0, g.cols() - 1, g.len() - g.cols(), g.len() - 1] {
            let c = g.index_center(idx);
            assert!(c.lat() > min.lat() && c.lat() < max.lat());
            assert!(c.lon() > min.lon() && c.lon() < max.lon());
        }
        assert!(g.index_center(0).lat() > g.index_center(g.len() - 1).lat(), "row 0 is north");
    }

    #[test]
    fn tiny_bbox_has_one_cell() {
        let g = GridSpec::new(pt(30.0, -81.0), pt(30.00001, -80.99999), 10.0).unwrap();
        assert_eq!((g.rows(), g.cols()), (1, 1));
    }

    #[test]
    fn grid_too_large() {
        let r = GridSpec::new(pt(29.0, -82.0), pt(30.0, -81.0), 0.5);
        assert!(matches!(r, Err(GeoError::GridTooLarge { .. })));
    }

    #[test]
    fn cells_in_full_and_outside() {
        let (min, max) = (pt(30.0, -81.0), pt(30.001, -80.999));
        let g = GridSpec::new(min, max, 10.0).unwrap();
        let all = GeoPolygon::rectangle(pt(29.99, -81.01), pt(30.01, -80.99)).unwrap();
        assert_eq!(cells_in(&all, &g), (0..g.len()).collect::<Vec<_>>());
        let away = GeoPolygon::rectangle(pt(31.0, -80.0), pt(31.01, -79.99)).unwrap();
        assert!(cells_in(&away, &g).is_empty());
    }

    #[test]
    fn cells_in_hundred_meter_square() {
        let origin = pt(30.0, -81.0);
        let f = make_local_frame(origin).unwrap();
        let sw = f.unproject(Meters::new(-50.0, -50.0)).unwrap();
        let ne = f.unproject(Meters::new(50.0, 50.0)).unwrap();
        let sq = GeoPolygon::rectangle(sw, ne).unwrap();
        let bb_sw = f.unproject(Meters::new(-80.0, -80.0)).unwrap();
        let bb_ne = f.unproject(Meters::new(80.0, 80.0)).unwrap();
        let g = GridSpec::new(bb_sw, bb_ne, 1.0).unwrap();
        let got = cells_in(&sq, &g);
        // brute force over every cell center
        let brute: Vec<usize> = (0..g.len())
            .filter(|&i| {
                let c = g.index_center(i);
                c.lat() >= sw.lat() && c.lat() <= ne.lat() && c.lon() >= sw.lon() && c.lon() <= ne.lon()
            })
            .collect();
        assert_eq!(got, brute);
        assert!((got.len() as i64 - 10_000).abs() <= 201, "{}", got.len());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projection_round_trip(lat0 in -60.0f64..60.0, lon0 in -170.0f64..170.0,
                                     dx in -35_000.0f64..35_000.0, dy in -35_000.0f64..35_000.0) {
                let f = make_local_frame(pt(lat0, lon0)).unwrap();
                let p = f.unproject(Meters::new(dx, dy)).unwrap();
                let back = f.unproject(f.project(&p).unwrap()).unwrap();
                prop_assert!((back.lat() - p.lat()).abs() < 1e-9);
                prop_assert!((back.lon() - p.lon()).abs() < 1e-9);
            }

            #[test]
            fn distance_close_to_haversine(lat0 in -60.0f64..60.0, lon0 in -170.0f64..170.0,
                                           bearing in 0.0f64..std::f64::consts::TAU, r in 10.0f64..10_000.0) {
                let f = make_local_frame(pt(lat0, lon0)).unwrap();
                let a = f.unproject(Meters::new(0.0, 0.0)).unwrap();
                let b = f.unproject(Meters::new(r * bearing.cos(), r * bearing.sin())).unwrap();
                let hav = haversine(&a, &b);
                prop_assert!((f.distance_m(&a, &b).unwrap() - hav).abs() / hav < 5e-3);
            }

            #[test]
            fn distance_is_a_metric(ax in -500.0f64..500.0, ay in -500.0f64..500.0,
                                    bx in -500.0f64..500.0, by in -500.0f64..500.0,
                                    cx in -500.0f64..500.0, cy in -500.0f64..500.0) {
                let f = make_local_frame(pt(30.0, -81.0)).unwrap();
                let a = f.unproject(Meters::new(ax, ay)).unwrap();
                let b = f.unproject(Meters::new(bx, by)).unwrap();
                let c = f.unproject(Meters::new(cx, cy)).unwrap();
                let ab = f.distance_m(&a, &b).unwrap();
                prop_assert!((ab - f.distance_m(&b, &a).unwrap()).abs() < 1e-9);
                prop_assert!(ab >= 0.0);
                prop_assert!(f.distance_m(&a, &c).unwrap() <= ab + f.distance_m(&b, &c).unwrap() + 1e-9);
            }

            #[test]
            fn cells_in_monotone(grow in 0.0f64..0.0005, shrink in 0.0f64..0.0004) {
                let g = GridSpec::new(pt(30.0, -81.0), pt(30.002, -80.998), 5.0).unwrap();
                let inner = GeoPolygon::rectangle(pt(30.0005 + shrink / 2.0, -80.9995), pt(30.0015, -80.9985 - shrink / 2.0)).unwrap();
                let outer = GeoPolygon::rectangle(pt(30.0005 + shrink / 2.0 - grow, -80.9995 - grow), pt(30.0015 + grow, -80.9985 - shrink / 2.0 + grow)).unwrap();
                let small = cells_in(&inner, &g);
                let big = cells_in(&outer, &g);
                prop_assert!(small.iter().all(|c| big.contains(c)));
            }
        }
    }
}
