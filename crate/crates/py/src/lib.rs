//! Python bindings for floodlens-core.
//!
//! Coordinates cross the boundary as `(lat, lon)` tuples. Structured values
//! (answers, violations, tasks) are plain dicts and lists.

use std::collections::BTreeMap;

use floodlens_core::analysis::{self, RatingMatrix};
use floodlens_core::codebook::{self, Answer};
use floodlens_core::geo::{self, GeoPoint, PointStatus, SamplePoint};
use floodlens_core::tasking::{self, Assignment};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

type LatLon = (f64, f64);
/// `(point_id, lat, lon, status, detail)`
type RelocatedRow = (String, f64, f64, String, String);

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn point((lat, lon): LatLon) -> PyResult<GeoPoint> {
    GeoPoint::new(lat, lon).map_err(value_error)
}

/// Python object -> serde value, through the stdlib json module.
fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = PyModule::import(obj.py(), "json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Codebook", module = "floodlens", frozen)]
struct PyCodebook {
    inner: codebook::Codebook,
}

#[pymethods]
impl PyCodebook {
    /// The bundled street-survey codebook.
    #[staticmethod]
    fn quito() -> Self {
        PyCodebook {
            inner: codebook::Codebook::quito(),
        }
    }

    #[staticmethod]
    fn parse(document: &str) -> PyResult<Self> {
        codebook::parse_codebook(document.as_bytes())
            .map(|inner| PyCodebook { inner })
            .map_err(value_error)
    }

    #[getter]
    fn schema_id(&self) -> &str {
        &self.inner.schema_id
    }

    #[getter]
    fn version(&self) -> &str {
        &self.inner.version
    }

    #[getter]
    fn draft(&self) -> bool {
        self.inner.draft
    }

    fn keys(&self) -> Vec<String> {
        self.inner.keys().map(str::to_string).collect()
    }

    /// Option codes of a choice variable, in codebook order.
    fn options(&self, key: &str) -> PyResult<Vec<String>> {
        let var = self
            .inner
            .variable(key)
            .ok_or_else(|| value_error(format!("unknown variable {key}")))?;
        Ok(var.options.iter().map(|o| o.code.clone()).collect())
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Checks an answer dict such as `{"floors": {"count": 2}}` and returns
    /// the violations as dicts; an empty list means the answers are valid.
    fn validate<'py>(&self, answers: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let parsed: BTreeMap<String, Answer> = from_py(answers)?;
        to_py(answers.py(), &codebook::validate_response_shape(&self.inner, &parsed))
    }

    fn __len__(&self) -> usize {
        self.inner.variables.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Codebook(schema_id={:?}, version={:?}, variables={})",
            self.inner.schema_id,
            self.inner.version,
            self.inner.variables.len()
        )
    }
}

#[pyclass(name = "TaskBatch", module = "floodlens", frozen)]
struct PyTaskBatch {
    inner: tasking::TaskBatch,
}

#[pymethods]
impl PyTaskBatch {
    #[getter]
    fn batch_id(&self) -> &str {
        &self.inner.batch_id
    }

    #[getter]
    fn codebook_version(&self) -> &str {
        &self.inner.codebook_version
    }

    #[getter]
    fn replication_k(&self) -> u32 {
        self.inner.replication_k()
    }

    /// Tasks as a list of dicts.
    #[getter]
    fn tasks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.tasks)
    }

    /// RFC 4180 task CSV for this batch and an assignment from `assign_raters`.
    fn to_csv(&self, assignment: BTreeMap<String, Vec<String>>) -> PyResult<String> {
        let assignment: Assignment = assignment
            .into_iter()
            .map(|(t, rs)| (t, rs.into_iter().collect()))
            .collect();
        String::from_utf8(tasking::export_tasks_csv(&self.inner, &assignment)).map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.inner.tasks.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "TaskBatch(batch_id={:?}, tasks={}, replication_k={})",
            self.inner.batch_id,
            self.inner.tasks.len(),
            self.inner.replication_k()
        )
    }
}

/// Great-circle distance in meters between two `(lat, lon)` points.
#[pyfunction]
fn haversine_m(a: LatLon, b: LatLon) -> PyResult<f64> {
    Ok(geo::haversine_m(point(a)?, point(b)?))
}

/// Containment test; points on an edge count as inside, points inside a hole
/// do not.
#[pyfunction]
#[pyo3(signature = (p, exterior, holes = Vec::new()))]
fn point_in_polygon(p: LatLon, exterior: Vec<LatLon>, holes: Vec<Vec<LatLon>>) -> PyResult<bool> {
    let ring = |r: Vec<LatLon>| r.into_iter().map(point).collect::<PyResult<Vec<_>>>();
    let holes = holes.into_iter().map(ring).collect::<PyResult<Vec<_>>>()?;
    let poly = geo::Polygon::new(ring(exterior)?, holes).map_err(value_error)?;
    Ok(geo::point_in_polygon(point(p)?, &poly))
}

/// Seeded sample of `n` points inside a GeoJSON region, as
/// `(point_id, lat, lon)` tuples.
#[pyfunction]
#[pyo3(signature = (region_geojson, n, seed, min_spacing_m = geo::DEFAULT_MIN_SPACING_M))]
fn random_points(region_geojson: &str, n: usize, seed: u64, min_spacing_m: f64) -> PyResult<Vec<(String, f64, f64)>> {
    let region = geo::parse_region(region_geojson.as_bytes()).map_err(value_error)?;
    let pts = geo::random_points(&region, n, seed, min_spacing_m).map_err(value_error)?;
    Ok(pts
        .into_iter()
        .map(|p| (p.point_id, p.location.lat, p.location.lon))
        .collect())
}

/// Relocates `(point_id, lat, lon)` points onto footprints from a GeoJSON
/// FeatureCollection. Returns `(point_id, lat, lon, status, detail)` where
/// detail is the building id or the exclusion reason.
#[pyfunction]
#[pyo3(signature = (points, footprints_geojson, max_radius_m = geo::DEFAULT_MAX_RADIUS_M, min_spacing_m = geo::DEFAULT_MIN_SPACING_M))]
fn relocate(
    points: Vec<(String, f64, f64)>,
    footprints_geojson: &str,
    max_radius_m: f64,
    min_spacing_m: f64,
) -> PyResult<Vec<RelocatedRow>> {
    let footprints = geo::parse_footprints(footprints_geojson.as_bytes()).map_err(value_error)?;
    let raw = points
        .into_iter()
        .map(|(point_id, lat, lon)| {
            Ok(SamplePoint {
                point_id,
                location: point((lat, lon))?,
                status: PointStatus::Raw,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let moved = geo::relocate_all(&raw, &footprints, max_radius_m, min_spacing_m).map_err(value_error)?;
    Ok(moved
        .into_iter()
        .map(|p| {
            let detail = match &p.status {
                PointStatus::Relocated { building_id } => building_id.clone(),
                PointStatus::Excluded(reason) => reason.as_str().to_string(),
                PointStatus::Raw => String::new(),
            };
            (
                p.point_id,
                p.location.lat,
                p.location.lon,
                p.status.as_str().to_string(),
                detail,
            )
        })
        .collect())
}

fn matrix(counts: Vec<Vec<u32>>) -> PyResult<RatingMatrix> {
    let k = counts.first().map_or(0, Vec::len);
    let categories = (0..k).map(|i| i.to_string()).collect();
    RatingMatrix::new("", categories, counts).map_err(value_error)
}

/// Fleiss' kappa of a subjects x categories count matrix, as
/// `(value, degenerate)`.
#[pyfunction]
fn fleiss_kappa(counts: Vec<Vec<u32>>) -> PyResult<(f64, bool)> {
    let k = analysis::fleiss_kappa(&matrix(counts)?).map_err(value_error)?;
    Ok((k.value, k.degenerate))
}

#[pyfunction]
fn percent_agreement(counts: Vec<Vec<u32>>) -> PyResult<f64> {
    analysis::percent_agreement(&matrix(counts)?).map_err(value_error)
}

#[pyfunction]
fn gsv_url(lat: f64, lon: f64) -> PyResult<String> {
    Ok(tasking::gsv_url(point((lat, lon))?))
}

/// Tasks for relocated points given as `(point_id, lat, lon, building_id)`.
#[pyfunction]
#[pyo3(signature = (points, image_url_template, replication_k, batch_id, codebook_version))]
fn build_tasks(
    points: Vec<(String, f64, f64, String)>,
    image_url_template: &str,
    replication_k: u32,
    batch_id: &str,
    codebook_version: &str,
) -> PyResult<PyTaskBatch> {
    let points = points
        .into_iter()
        .map(|(point_id, lat, lon, building_id)| {
            Ok(SamplePoint {
                point_id,
                location: point((lat, lon))?,
                status: PointStatus::Relocated { building_id },
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    tasking::build_tasks(&points, image_url_template, replication_k, batch_id, codebook_version)
        .map(|inner| PyTaskBatch { inner })
        .map_err(value_error)
}

/// Assigns `replication_k` distinct raters to every task; returns
/// `{task_id: [rater, ...]}`.
#[pyfunction]
fn assign_raters(batch: &PyTaskBatch, raters: Vec<String>, seed: u64) -> PyResult<BTreeMap<String, Vec<String>>> {
    let a = tasking::assign_raters(&batch.inner, &raters, seed).map_err(value_error)?;
    Ok(a.into_iter().map(|(t, rs)| (t, rs.into_iter().collect())).collect())
}

#[pymodule]
fn floodlens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCodebook>()?;
    m.add_class::<PyTaskBatch>()?;
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    m.add_function(wrap_pyfunction!(point_in_polygon, m)?)?;
    m.add_function(wrap_pyfunction!(random_points, m)?)?;
    m.add_function(wrap_pyfunction!(relocate, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(percent_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(gsv_url, m)?)?;
    m.add_function(wrap_pyfunction!(build_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(assign_raters, m)?)?;
    m.add("EARTH_RADIUS_M", geo::EARTH_RADIUS_M)?;
    Ok(())
}
