//! Sample-site geometry: containment, great-circle distance, seeded rejection
//! sampling inside a study region, and relocation onto building footprints.
//!
//! Containment and centroids use a planar approximation (longitude as x,
//! latitude as y). That is fine at city scale and wrong for polygons that
//! straddle the antimeridian or a pole.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Default minimum spacing between sample points.
pub const DEFAULT_MIN_SPACING_M: f64 = 50.0;

/// Default search radius when relocating a point onto a building.
pub const DEFAULT_MAX_RADIUS_M: f64 = 250.0;

/// Rejection-sampling budget per requested point.
pub const ATTEMPTS_PER_POINT: u64 = 10_000;

const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidPoint { lat: f64, lon: f64 },
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("polygon ring folds back on itself at vertex {vertex}")]
    SelfIntersecting { vertex: usize },
    #[error(
        "placed {placed} of {requested} points before exhausting {attempts} attempts; region too small for the spacing"
    )]
    Capacity {
        placed: usize,
        requested: usize,
        attempts: u64,
    },
    #[error("invalid sampling parameter: {0}")]
    InvalidParameter(String),
    #[error("point {point_id} is not raw")]
    NotRaw { point_id: String },
    #[error("geojson: {0}")]
    GeoJson(String),
    #[error("points csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidPoint { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }

    /// Rounds both coordinates to the 6-decimal grid used by every serialized format.
    pub fn quantized(self) -> Self {
        GeoPoint {
            lat: round6(self.lat),
            lon: round6(self.lon),
        }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6},{:.6}", self.lat, self.lon)
    }
}

pub(crate) fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Great-circle distance on the mean-radius sphere.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

/// A polygon with an exterior ring and optional holes. Rings are stored open
/// (the closing vertex of a GeoJSON ring is dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Vec<GeoPoint>,
    holes: Vec<Vec<GeoPoint>>,
}

impl Polygon {
    pub fn new(exterior: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Self, GeoError> {
        let exterior = check_ring(exterior)?;
        if signed_area(&exterior).abs() <= f64::EPSILON * 1e-6 {
            return Err(GeoError::DegeneratePolygon("exterior ring has zero area".into()));
        }
        let holes = holes.into_iter().map(check_ring).collect::<Result<Vec<_>, _>>()?;
        Ok(Polygon { exterior, holes })
    }

    /// Axis-aligned rectangle, mostly for tests and fixtures.
    pub fn rect(south: f64, west: f64, north: f64, east: f64) -> Result<Self, GeoError> {
        Polygon::new(
            vec![
                GeoPoint::new(south, west)?,
                GeoPoint::new(south, east)?,
                GeoPoint::new(north, east)?,
                GeoPoint::new(north, west)?,
            ],
            vec![],
        )
    }

    pub fn exterior(&self) -> &[GeoPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<GeoPoint>] {
        &self.holes
    }

    /// (south, west, north, east)
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &self.exterior {
            b.0 = b.0.min(p.lat);
            b.1 = b.1.min(p.lon);
            b.2 = b.2.max(p.lat);
            b.3 = b.3.max(p.lon);
        }
        b
    }

    /// Area-weighted centroid, holes subtracted, computed in a local frame
    /// anchored at the first exterior vertex.
    pub fn centroid(&self) -> GeoPoint {
        let origin = self.exterior[0];
        let k = origin.lat.to_radians().cos();
        let to_local = |p: &GeoPoint| ((p.lon - origin.lon) * k, p.lat - origin.lat);
        let mut area = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        let rings = std::iter::once(&self.exterior).chain(self.holes.iter());
        for (i, ring) in rings.enumerate() {
            let pts: Vec<(f64, f64)> = ring.iter().map(to_local).collect();
            let (a, x, y) = ring_moments(&pts);
            // Normalize winding, then holes subtract.
            let s = a.signum() * if i == 0 { 1.0 } else { -1.0 };
            area += s * a;
            cx += s * x;
            cy += s * y;
        }
        GeoPoint {
            lat: origin.lat + cy / area,
            lon: origin.lon + cx / area / k,
        }
    }
}

fn check_ring(mut ring: Vec<GeoPoint>) -> Result<Vec<GeoPoint>, GeoError> {
    for p in &ring {
        GeoPoint::new(p.lat, p.lon)?;
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(GeoError::DegeneratePolygon(format!(
            "ring has {} distinct vertices, need at least 3",
            ring.len()
        )));
    }
    let n = ring.len();
    for i in 0..n {
        let (a, b, c) = (ring[i], ring[(i + 1) % n], ring[(i + 2) % n]);
        if a == b {
            return Err(GeoError::DegeneratePolygon(format!("repeated vertex at {i}")));
        }
        let (ux, uy) = (b.lon - a.lon, b.lat - a.lat);
        let (vx, vy) = (c.lon - b.lon, c.lat - b.lat);
        if ux * vy - uy * vx == 0.0 && ux * vx + uy * vy < 0.0 {
            return Err(GeoError::SelfIntersecting { vertex: (i + 1) % n });
        }
    }
    Ok(ring)
}

fn signed_area(ring: &[GeoPoint]) -> f64 {
    let pts: Vec<(f64, f64)> = ring
        .iter()
        .map(|p| (p.lon - ring[0].lon, p.lat - ring[0].lat))
        .collect();
    ring_moments(&pts).0
}

/// Signed area and first moments (area-weighted centroid times area).
fn ring_moments(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        a += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    (a / 2.0, cx / 6.0, cy / 6.0)
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    cross == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn ring_edges(ring: &[GeoPoint]) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
    ring.iter().copied().zip(ring.iter().copied().cycle().skip(1))
}

/// Even-odd crossing test for one ring. Boundary handling is done by the caller.
fn crossings_odd(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let mut inside = false;
    for (a, b) in ring_edges(ring) {
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Ray-casting containment. Points on any edge (exterior or hole) count as
/// inside; points strictly inside a hole are outside.
pub fn point_in_polygon(p: GeoPoint, poly: &Polygon) -> bool {
    let rings = std::iter::once(&poly.exterior).chain(poly.holes.iter());
    for ring in rings.clone() {
        if ring_edges(ring).any(|(a, b)| on_segment(p, a, b)) {
            return true;
        }
    }
    let (s, w, n, e) = poly.bbox();
    if p.lat < s || p.lat > n || p.lon < w || p.lon > e {
        return false;
    }
    crossings_odd(p, &poly.exterior) && !poly.holes.iter().any(|h| crossings_odd(p, h))
}

/// A study region: one or more polygons (GeoJSON Polygon or MultiPolygon).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub polygons: Vec<Polygon>,
}

impl From<Polygon> for Region {
    fn from(p: Polygon) -> Self {
        Region { polygons: vec![p] }
    }
}

impl Region {
    pub fn contains(&self, p: GeoPoint) -> bool {
        self.polygons.iter().any(|poly| point_in_polygon(p, poly))
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.polygons
            .iter()
            .map(Polygon::bbox)
            .fold((f64::MAX, f64::MAX, f64::MIN, f64::MIN), |a, b| {
                (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub building_id: String,
    pub outline: Polygon,
    centroid: GeoPoint,
}

impl Footprint {
    pub fn new(building_id: impl Into<String>, outline: Polygon) -> Self {
        let centroid = outline.centroid();
        Footprint {
            building_id: building_id.into(),
            outline,
            centroid,
        }
    }

    pub fn centroid(&self) -> GeoPoint {
        self.centroid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    TooClose,
    NoBuildingInRadius,
    NoCoverage,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 3] = [
        ExclusionReason::TooClose,
        ExclusionReason::NoBuildingInRadius,
        ExclusionReason::NoCoverage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::TooClose => "too_close",
            ExclusionReason::NoBuildingInRadius => "no_building_in_radius",
            ExclusionReason::NoCoverage => "no_coverage",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        ExclusionReason::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

/// Lifecycle of a sample point. The reason and building id live inside the
/// variant, so they exist exactly when the status calls for them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PointStatus {
    Raw,
    Relocated { building_id: String },
    Excluded(ExclusionReason),
}

impl PointStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointStatus::Raw => "raw",
            PointStatus::Relocated { .. } => "relocated",
            PointStatus::Excluded(_) => "excluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub point_id: String,
    pub location: GeoPoint,
    pub status: PointStatus,
}

impl SamplePoint {
    pub fn exclusion_reason(&self) -> Option<ExclusionReason> {
        match self.status {
            PointStatus::Excluded(r) => Some(r),
            _ => None,
        }
    }

    pub fn source_building_id(&self) -> Option<&str> {
        match &self.status {
            PointStatus::Relocated { building_id } => Some(building_id),
            _ => None,
        }
    }
}

/// Identifier for the i-th (1-based) of `n` points: `P0001`, `P0002`, ...
pub fn point_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(4);
    format!("P{i:0width$}")
}

/// Uniform grid over the bounding box used to find already-placed points
/// within the spacing radius.
struct SpacingGrid {
    south: f64,
    west: f64,
    cell_lat: f64,
    cell_lon: f64,
    rows: usize,
    cols: usize,
    cells: Vec<Vec<GeoPoint>>,
}

impl SpacingGrid {
    const MAX_DIM: usize = 2048;

    fn new(bbox: (f64, f64, f64, f64), spacing_m: f64) -> Self {
        let (s, w, n, e) = bbox;
        let max_abs_lat = s.abs().max(n.abs()).min(89.0);
        // Slightly oversized cells so that every point within spacing_m of a
        // query lies in the 3x3 neighborhood.
        let spacing_deg = spacing_m / METERS_PER_DEGREE * 1.01;
        let cell_lat = spacing_deg.max((n - s) / Self::MAX_DIM as f64);
        let cell_lon = (spacing_deg / max_abs_lat.to_radians().cos()).max((e - w) / Self::MAX_DIM as f64);
        let rows = (((n - s) / cell_lat).floor() as usize + 1).min(Self::MAX_DIM + 1);
        let cols = (((e - w) / cell_lon).floor() as usize + 1).min(Self::MAX_DIM + 1);
        SpacingGrid {
            south: s,
            west: w,
            cell_lat,
            cell_lon,
            rows,
            cols,
            cells: vec![Vec::new(); rows * cols],
        }
    }

    fn cell(&self, p: GeoPoint) -> (usize, usize) {
        let r = ((p.lat - self.south) / self.cell_lat).floor().max(0.0) as usize;
        let c = ((p.lon - self.west) / self.cell_lon).floor().max(0.0) as usize;
        (r.min(self.rows - 1), c.min(self.cols - 1))
    }

    fn has_neighbor_within(&self, p: GeoPoint, spacing_m: f64) -> bool {
        let (r, c) = self.cell(p);
        for rr in r.saturating_sub(1)..=(r + 1).min(self.rows - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(self.cols - 1) {
                if self.cells[rr * self.cols + cc]
                    .iter()
                    .any(|q| haversine_m(p, *q) < spacing_m)
                {
                    return true;
                }
            }
        }
        false
    }

    fn insert(&mut self, p: GeoPoint) {
        let (r, c) = self.cell(p);
        self.cells[r * self.cols + c].push(p);
    }
}

/// Upper bound on how many points with pairwise spacing `spacing_m` fit in
/// the bounding box: disks of radius spacing/2 are disjoint and lie inside the
/// box grown by spacing/2 on every side.
fn packing_bound(bbox: (f64, f64, f64, f64), spacing_m: f64) -> f64 {
    let (s, w, n, e) = bbox;
    let min_abs_lat = if s <= 0.0 && n >= 0.0 {
        0.0
    } else {
        s.abs().min(n.abs())
    };
    let height = (n - s) * METERS_PER_DEGREE;
    let width = (e - w) * METERS_PER_DEGREE * min_abs_lat.to_radians().cos();
    let disk = std::f64::consts::PI * spacing_m * spacing_m / 4.0;
    // 10% slack for the planar approximation.
    1.1 * (height + spacing_m) * (width + spacing_m) / disk
}

/// Draws `n` raw points uniformly (in degree space) over the region's
/// bounding box, rejecting candidates outside the region or closer than
/// `min_spacing_m` to an accepted point. The generator is ChaCha8 seeded from
/// `seed`; coordinates are rounded to 6 decimals before the checks so the
/// serialized points satisfy them too.
pub fn random_points(region: &Region, n: usize, seed: u64, min_spacing_m: f64) -> Result<Vec<SamplePoint>, GeoError> {
    if n == 0 {
        return Err(GeoError::InvalidParameter("n must be at least 1".into()));
    }
    if !min_spacing_m.is_finite() || min_spacing_m < 0.0 {
        return Err(GeoError::InvalidParameter(format!(
            "min_spacing_m must be >= 0, got {min_spacing_m}"
        )));
    }
    if region.polygons.is_empty() {
        return Err(GeoError::DegeneratePolygon("region has no polygons".into()));
    }
    let budget = ATTEMPTS_PER_POINT.saturating_mul(n as u64);
    let bbox = region.bbox();
    if min_spacing_m > 0.0 && (n as f64) > packing_bound(bbox, min_spacing_m) {
        return Err(GeoError::Capacity {
            placed: 0,
            requested: n,
            attempts: budget,
        });
    }

    let (s, w, north, e) = bbox;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = (min_spacing_m > 0.0).then(|| SpacingGrid::new(bbox, min_spacing_m));
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0u64;
    while out.len() < n {
        if attempts >= budget {
            return Err(GeoError::Capacity {
                placed: out.len(),
                requested: n,
                attempts,
            });
        }
        attempts += 1;
        let lat: f64 = s + rng.random::<f64>() * (north - s);
        let lon: f64 = w + rng.random::<f64>() * (e - w);
        let p = GeoPoint { lat, lon }.quantized();
        if !region.contains(p) {
            continue;
        }
        if let Some(grid) = grid.as_mut() {
            if grid.has_neighbor_within(p, min_spacing_m) {
                continue;
            }
            grid.insert(p);
        }
        out.push(SamplePoint {
            point_id: point_id(out.len() + 1, n),
            location: p,
            status: PointStatus::Raw,
        });
    }
    Ok(out)
}

/// Moves a raw point onto the centroid of the nearest footprint within
/// `max_radius_m`, or marks it excluded. Ties go to the smallest building id.
pub fn relocate_to_nearest_footprint(
    p: &SamplePoint,
    footprints: &[Footprint],
    max_radius_m: f64,
) -> Result<SamplePoint, GeoError> {
    if p.status != PointStatus::Raw {
        return Err(GeoError::NotRaw {
            point_id: p.point_id.clone(),
        });
    }
    let mut best: Option<(f64, &Footprint)> = None;
    for f in footprints {
        let d = haversine_m(p.location, f.centroid);
        best = match best {
            Some((bd, bf)) if bd < d || (bd == d && bf.building_id <= f.building_id) => Some((bd, bf)),
            _ => Some((d, f)),
        };
    }
    let mut out = p.clone();
    match best {
        Some((d, f)) if d <= max_radius_m => {
            out.location = f.centroid.quantized();
            out.status = PointStatus::Relocated {
                building_id: f.building_id.clone(),
            };
        }
        _ => out.status = PointStatus::Excluded(ExclusionReason::NoBuildingInRadius),
    }
    Ok(out)
}

/// Relocates every point, then walks the relocated points in order and
/// excludes as `too_close` any that landed within `min_spacing_m` of an
/// earlier kept point (two raw points snapping to one building, typically).
pub fn relocate_all(
    points: &[SamplePoint],
    footprints: &[Footprint],
    max_radius_m: f64,
    min_spacing_m: f64,
) -> Result<Vec<SamplePoint>, GeoError> {
    let mut kept: Vec<GeoPoint> = Vec::new();
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let mut moved = relocate_to_nearest_footprint(p, footprints, max_radius_m)?;
        if let PointStatus::Relocated { .. } = moved.status {
            if kept.iter().any(|q| haversine_m(*q, moved.location) < min_spacing_m) {
                moved.status = PointStatus::Excluded(ExclusionReason::TooClose);
            } else {
                kept.push(moved.location);
            }
        }
        out.push(moved);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// GeoJSON ingest

fn gj_err(msg: impl Into<String>) -> GeoError {
    GeoError::GeoJson(msg.into())
}

fn parse_position(v: &Value) -> Result<GeoPoint, GeoError> {
    let arr = v.as_array().ok_or_else(|| gj_err("position is not an array"))?;
    let (Some(lon), Some(lat)) = (arr.first().and_then(Value::as_f64), arr.get(1).and_then(Value::as_f64)) else {
        return Err(gj_err("position needs numeric [lon, lat]"));
    };
    GeoPoint::new(lat, lon)
}

fn parse_polygon_coords(v: &Value) -> Result<Polygon, GeoError> {
    let rings = v
        .as_array()
        .ok_or_else(|| gj_err("polygon coordinates are not an array"))?;
    let mut rings = rings.iter().map(|r| {
        r.as_array()
            .ok_or_else(|| gj_err("ring is not an array"))?
            .iter()
            .map(parse_position)
            .collect::<Result<Vec<_>, _>>()
    });
    let exterior = rings.next().ok_or_else(|| gj_err("polygon has no rings"))??;
    let holes = rings.collect::<Result<Vec<_>, _>>()?;
    Polygon::new(exterior, holes)
}

fn geometry_polygons(geom: &Value) -> Result<Vec<Polygon>, GeoError> {
    let coords = &geom["coordinates"];
    match geom["type"].as_str() {
        Some("Polygon") => Ok(vec![parse_polygon_coords(coords)?]),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or_else(|| gj_err("MultiPolygon coordinates are not an array"))?
            .iter()
            .map(parse_polygon_coords)
            .collect(),
        other => Err(gj_err(format!(
            "expected Polygon or MultiPolygon geometry, got {other:?}"
        ))),
    }
}

/// Reads a study region from a Polygon/MultiPolygon geometry, Feature, or
/// FeatureCollection (all polygons are unioned).
pub fn parse_region(bytes: &[u8]) -> Result<Region, GeoError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| gj_err(e.to_string()))?;
    let polygons = match doc["type"].as_str() {
        Some("FeatureCollection") => {
            let mut all = Vec::new();
            for f in doc["features"]
                .as_array()
                .ok_or_else(|| gj_err("features is not an array"))?
            {
                all.extend(geometry_polygons(&f["geometry"])?);
            }
            all
        }
        Some("Feature") => geometry_polygons(&doc["geometry"])?,
        _ => geometry_polygons(&doc)?,
    };
    if polygons.is_empty() {
        return Err(gj_err("region contains no polygons"));
    }
    Ok(Region { polygons })
}

/// Reads building footprints from a FeatureCollection of Polygons carrying a
/// `building_id` property.
pub fn parse_footprints(bytes: &[u8]) -> Result<Vec<Footprint>, GeoError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| gj_err(e.to_string()))?;
    if doc["type"] != "FeatureCollection" {
        return Err(gj_err("footprints must be a FeatureCollection"));
    }
    let features = doc["features"]
        .as_array()
        .ok_or_else(|| gj_err("features is not an array"))?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let id = match &f["properties"]["building_id"] {
            Value::String(s) if !s.is_empty() => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => return Err(gj_err(format!("feature {i} has no building_id"))),
        };
        if f["geometry"]["type"] != "Polygon" {
            return Err(gj_err(format!("footprint {id} is not a Polygon")));
        }
        let outline =
            parse_polygon_coords(&f["geometry"]["coordinates"]).map_err(|e| gj_err(format!("footprint {id}: {e}")))?;
        if !seen.insert(id.clone()) {
            return Err(gj_err(format!("duplicate building_id {id}")));
        }
        out.push(Footprint::new(id, outline));
    }
    Ok(out)
}

fn ring_json(ring: &[GeoPoint]) -> String {
    let mut s = String::from("[");
    for p in ring.iter().chain(ring.first()) {
        if s.len() > 1 {
            s.push(',');
        }
        s.push_str(&format!("[{:.6},{:.6}]", p.lon, p.lat));
    }
    s.push(']');
    s
}

/// Writes footprints as a FeatureCollection, one feature per line.
pub fn write_footprints(footprints: &[Footprint]) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[\n");
    for (i, f) in footprints.iter().enumerate() {
        let mut rings = vec![ring_json(&f.outline.exterior)];
        rings.extend(f.outline.holes.iter().map(|h| ring_json(h)));
        out.push_str(&format!(
            "{{\"type\":\"Feature\",\"properties\":{{\"building_id\":{}}},\"geometry\":{{\"type\":\"Polygon\",\"coordinates\":[{}]}}}}",
            serde_json::to_string(&f.building_id).expect("string serializes"),
            rings.join(",")
        ));
        out.push_str(if i + 1 < footprints.len() { ",\n" } else { "\n" });
    }
    out.push_str("]}\n");
    out
}

// ---------------------------------------------------------------------------
// Points CSV

pub const POINTS_CSV_HEADER: [&str; 6] = [
    "point_id",
    "lat",
    "lon",
    "status",
    "exclusion_reason",
    "source_building_id",
];

pub fn write_points_csv(points: &[SamplePoint]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(POINTS_CSV_HEADER).expect("write to Vec");
    for p in points {
        w.write_record([
            p.point_id.as_str(),
            &format!("{:.6}", p.location.lat),
            &format!("{:.6}", p.location.lon),
            p.status.as_str(),
            p.exclusion_reason().map(ExclusionReason::as_str).unwrap_or(""),
            p.source_building_id().unwrap_or(""),
        ])
        .expect("write to Vec");
    }
    w.into_inner().expect("flush to Vec")
}

pub fn read_points_csv(bytes: &[u8]) -> Result<Vec<SamplePoint>, GeoError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(|e| GeoError::Csv(e.to_string()))?;
    if header.iter().ne(POINTS_CSV_HEADER) {
        return Err(GeoError::Csv(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| GeoError::Csv(e.to_string()))?;
        let line = i + 2;
        let num = |idx: usize| -> Result<f64, GeoError> {
            rec[idx]
                .parse::<f64>()
                .map_err(|_| GeoError::Csv(format!("line {line}: bad number {:?}", &rec[idx])))
        };
        let location = GeoPoint::new(num(1)?, num(2)?)?;
        let (reason, building) = (&rec[4], &rec[5]);
        let status = match (&rec[3], reason.is_empty(), building.is_empty()) {
            ("raw", true, true) => PointStatus::Raw,
            ("relocated", true, false) => PointStatus::Relocated {
                building_id: building.to_string(),
            },
            ("excluded", false, true) => PointStatus::Excluded(
                ExclusionReason::parse(reason)
                    .ok_or_else(|| GeoError::Csv(format!("line {line}: unknown exclusion reason {reason:?}")))?,
            ),
            (status, ..) => {
                return Err(GeoError::Csv(format!(
                    "line {line}: status {status:?} inconsistent with exclusion_reason/source_building_id"
                )))
            }
        };
        if !ids.insert(rec[0].to_string()) {
            return Err(GeoError::Csv(format!("line {line}: duplicate point_id {}", &rec[0])));
        }
        out.push(SamplePoint {
            point_id: rec[0].to_string(),
            location,
            status,
        });
    }
    Ok(out)
}
