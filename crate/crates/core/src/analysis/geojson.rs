//! Point-feature GeoJSON export of aggregated values, in a canonical layout:
//! one feature per line, coordinates at 6 decimals, features sorted by
//! point id. Parsing and rewriting an export reproduces it byte for byte.

use std::collections::{BTreeMap, HashMap};

use serde_json::Value;

use super::{AnalysisError, ReportMeta};
use crate::codebook::Answer;
use crate::geo::{GeoPoint, PointStatus, SamplePoint};

#[derive(Debug, Clone, PartialEq)]
pub struct PointFeature {
    pub point_id: String,
    pub location: GeoPoint,
    pub variable: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatureCollection {
    pub meta: ReportMeta,
    pub features: Vec<PointFeature>,
}

fn answer_value(a: &Answer) -> Value {
    match a {
        Answer::Choice(c) => Value::from(c.as_str()),
        Answer::Choices(cs) => Value::from(cs.clone()),
        Answer::Count(v) => Value::from(*v),
        Answer::Text(t) => Value::from(t.as_str()),
    }
}

/// One Point feature per aggregated value. Every key of `values` must be a
/// point that was not excluded.
pub fn export_geojson(
    meta: &ReportMeta,
    points: &[SamplePoint],
    values: &BTreeMap<String, Answer>,
    variable_key: &str,
) -> Result<Vec<u8>, AnalysisError> {
    let by_id: HashMap<&str, &SamplePoint> = points.iter().map(|p| (p.point_id.as_str(), p)).collect();
    let mut features = Vec::with_capacity(values.len());
    for (point_id, answer) in values {
        let p = by_id
            .get(point_id.as_str())
            .ok_or_else(|| AnalysisError::UnknownPoint(point_id.clone()))?;
        if matches!(p.status, PointStatus::Excluded(_)) {
            return Err(AnalysisError::NotCollected(point_id.clone()));
        }
        features.push(PointFeature {
            point_id: point_id.clone(),
            location: p.location,
            variable: variable_key.to_string(),
            value: answer_value(answer),
        });
    }
    Ok(write_point_features(&PointFeatureCollection {
        meta: meta.clone(),
        features,
    }))
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

pub fn write_point_features(fc: &PointFeatureCollection) -> Vec<u8> {
    let mut features: Vec<&PointFeature> = fc.features.iter().collect();
    features.sort_by(|a, b| a.point_id.cmp(&b.point_id));
    let mut out = format!(
        "{{\"type\":\"FeatureCollection\",\"batch_id\":{},\"codebook_version\":{},\"features\":[\n",
        json_str(&fc.meta.batch_id),
        json_str(&fc.meta.codebook_version)
    );
    for (i, f) in features.iter().enumerate() {
        out.push_str(&format!(
            "{{\"type\":\"Feature\",\"geometry\":{{\"type\":\"Point\",\"coordinates\":[{:.6},{:.6}]}},\"properties\":{{\"point_id\":{},\"variable\":{},\"value\":{}}}}}",
            f.location.lon,
            f.location.lat,
            json_str(&f.point_id),
            json_str(&f.variable),
            f.value
        ));
        out.push_str(if i + 1 < features.len() { ",\n" } else { "\n" });
    }
    out.push_str("]}\n");
    out.into_bytes()
}

pub fn parse_point_features(bytes: &[u8]) -> Result<PointFeatureCollection, AnalysisError> {
    let err = |m: &str| AnalysisError::GeoJson(m.to_string());
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| AnalysisError::GeoJson(e.to_string()))?;
    if doc["type"] != "FeatureCollection" {
        return Err(err("not a FeatureCollection"));
    }
    let meta = ReportMeta {
        batch_id: doc["batch_id"].as_str().unwrap_or_default().to_string(),
        codebook_version: doc["codebook_version"].as_str().unwrap_or_default().to_string(),
    };
    let mut features = Vec::new();
    for f in doc["features"]
        .as_array()
        .ok_or_else(|| err("features is not an array"))?
    {
        if f["geometry"]["type"] != "Point" {
            return Err(err("feature geometry is not a Point"));
        }
        let coords = f["geometry"]["coordinates"]
            .as_array()
            .ok_or_else(|| err("missing coordinates"))?;
        let (Some(lon), Some(lat)) = (
            coords.first().and_then(Value::as_f64),
            coords.get(1).and_then(Value::as_f64),
        ) else {
            return Err(err("coordinates must be [lon, lat]"));
        };
        let props = &f["properties"];
        let (Some(point_id), Some(variable)) = (props["point_id"].as_str(), props["variable"].as_str()) else {
            return Err(err("feature lacks point_id/variable"));
        };
        features.push(PointFeature {
            point_id: point_id.to_string(),
            location: GeoPoint::new(lat, lon).map_err(|e| AnalysisError::GeoJson(e.to_string()))?,
            variable: variable.to_string(),
            value: props["value"].clone(),
        });
    }
    Ok(PointFeatureCollection { meta, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::ExclusionReason;

    fn meta() -> ReportMeta {
        ReportMeta {
            batch_id: "b".into(),
            codebook_version: "2.0".into(),
        }
    }

    fn pts() -> Vec<SamplePoint> {
        vec![
            SamplePoint {
                point_id: "P0002".into(),
                location: GeoPoint::new(-0.180653, -78.467834).unwrap(),
                status: PointStatus::Relocated {
                    building_id: "B1".into(),
                },
            },
            SamplePoint {
                point_id: "P0001".into(),
                location: GeoPoint::new(-0.2, -78.5).unwrap(),
                status: PointStatus::Relocated {
                    building_id: "B2".into(),
                },
            },
            SamplePoint {
                point_id: "P0003".into(),
                location: GeoPoint::new(-0.21, -78.5).unwrap(),
                status: PointStatus::Excluded(ExclusionReason::TooClose),
            },
        ]
    }

    #[test]
    fn empty_collection() {
        let out = export_geojson(&meta(), &pts(), &BTreeMap::new(), "drains").unwrap();
        let fc = parse_point_features(&out).unwrap();
        assert!(fc.features.is_empty());
        assert_eq!(write_point_features(&fc), out);
    }

    #[test]
    fn canonical_layout_and_round_trip() {
        let values = BTreeMap::from([
            ("P0002".to_string(), Answer::Count(3)),
            ("P0001".to_string(), Answer::Count(0)),
        ]);
        let out = export_geojson(&meta(), &pts(), &values, "drains").unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("\"point_id\":\"P0001\""));
        assert!(lines[2].contains("[-78.467834,-0.180653]"));
        assert!(lines[2].ends_with("\"value\":3}}"));
        let fc = parse_point_features(&out).unwrap();
        assert_eq!(write_point_features(&fc), out);
    }

    #[test]
    fn rejects_unknown_and_excluded_points() {
        let unknown = BTreeMap::from([("P0404".to_string(), Answer::Count(1))]);
        assert!(matches!(
            export_geojson(&meta(), &pts(), &unknown, "drains"),
            Err(AnalysisError::UnknownPoint(_))
        ));
        let excluded = BTreeMap::from([("P0003".to_string(), Answer::Count(1))]);
        assert!(matches!(
            export_geojson(&meta(), &pts(), &excluded, "drains"),
            Err(AnalysisError::NotCollected(_))
        ));
    }
}
