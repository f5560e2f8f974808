//! Synthetic desk-scale fixtures: the bundled study region, a gridded
//! building layer, and answer sets that pass validation.

use std::collections::BTreeMap;

use crate::codebook::{Answer, Codebook, VariableKind};
use crate::geo::{self, Footprint, GeoPoint, Polygon, Region};

pub const QUITO_REGION_GEOJSON: &str = include_str!("../fixtures/quito_region.geojson");

/// Building spacing of the synthetic footprint grid, in meters.
pub const FOOTPRINT_SPACING_M: f64 = 70.0;
/// Side length of each synthetic footprint, in meters.
pub const FOOTPRINT_SIDE_M: f64 = 12.0;

pub fn quito_region() -> Region {
    geo::parse_region(QUITO_REGION_GEOJSON.as_bytes()).expect("bundled region is valid")
}

/// The building-free park inside the Quito region.
pub fn quito_park() -> Polygon {
    Polygon::rect(-0.205, -78.512, -0.195, -78.500).expect("valid rectangle")
}

/// Square footprints on a regular grid over the region, skipping cells whose
/// center falls outside the region or inside any of `gaps`.
pub fn grid_footprints(region: &Region, spacing_m: f64, side_m: f64, gaps: &[Polygon]) -> Vec<Footprint> {
    let (s, w, n, e) = region.bbox();
    let m_per_deg = geo::EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let mid_lat = (s + n) / 2.0;
    let step_lat = spacing_m / m_per_deg;
    let step_lon = spacing_m / (m_per_deg * mid_lat.to_radians().cos());
    let half_lat = side_m / 2.0 / m_per_deg;
    let half_lon = side_m / 2.0 / (m_per_deg * mid_lat.to_radians().cos());
    let mut out = Vec::new();
    let mut lat = s + step_lat / 2.0;
    while lat < n {
        let mut lon = w + step_lon / 2.0;
        while lon < e {
            let c = GeoPoint { lat, lon }.quantized();
            if region.contains(c) && !gaps.iter().any(|g| geo::point_in_polygon(c, g)) {
                let outline = Polygon::rect(c.lat - half_lat, c.lon - half_lon, c.lat + half_lat, c.lon + half_lon)
                    .expect("valid rectangle");
                out.push(Footprint::new(format!("B{:06}", out.len() + 1), outline));
            }
            lon += step_lon;
        }
        lat += step_lat;
    }
    out
}

/// The synthetic building layer for the Quito region.
pub fn quito_footprints() -> Vec<Footprint> {
    grid_footprints(&quito_region(), FOOTPRINT_SPACING_M, FOOTPRINT_SIDE_M, &[quito_park()])
}

/// A minimal answer set that passes validation: the first option of every
/// choice variable, the lower bound of every count, and nothing for optional
/// free text.
pub fn complete_answers(cb: &Codebook) -> BTreeMap<String, Answer> {
    let mut out = BTreeMap::new();
    for v in &cb.variables {
        let answer = match v.kind {
            VariableKind::SingleChoice => Answer::Choice(v.options[0].code.clone()),
            VariableKind::MultiChoice => Answer::Choices(vec![v.options[0].code.clone()]),
            VariableKind::Count => Answer::Count(v.count_range.expect("count bounds").0),
            VariableKind::FreeText if v.required => Answer::Text(String::new()),
            VariableKind::FreeText => continue,
        };
        out.insert(v.key.clone(), answer);
    }
    out
}
