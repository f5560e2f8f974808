//! Turning relocated sample points into labeling tasks, assigning raters, and
//! the task CSV the labeling service loads.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, PointStatus, SamplePoint};

/// Placeholder substituted in the imagery URL template.
pub const POINT_ID_PLACEHOLDER: &str = "{point_id}";

pub const TASKS_CSV_HEADER: [&str; 8] = [
    "task_id",
    "point_id",
    "lat",
    "lon",
    "image_url",
    "gsv_url",
    "replication_k",
    "assigned_raters",
];

#[derive(Debug, Error)]
pub enum TaskingError {
    #[error("image url template must contain {POINT_ID_PLACEHOLDER}")]
    MissingPlaceholder,
    #[error("image url for {point_id} contains whitespace")]
    InvalidUrl { point_id: String },
    #[error("point {point_id} is {status}, only relocated points become tasks")]
    NotRelocated { point_id: String, status: &'static str },
    #[error("a batch needs at least one task")]
    EmptyBatch,
    #[error("replication_k must be at least 1")]
    InvalidReplication,
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("point {0} appears twice")]
    DuplicatePoint(String),
    #[error("need at least {needed} distinct raters, have {available}")]
    InsufficientRaters { needed: u32, available: usize },
    #[error("tasks csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("tasks csv: unexpected header {0:?}")]
    UnknownHeader(Vec<String>),
    #[error("tasks csv: duplicate task_id {0}")]
    DuplicateTask(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub point_id: String,
    #[serde(flatten)]
    pub location: GeoPoint,
    pub image_url: String,
    pub gsv_url: String,
    pub replication_k: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub batch_id: String,
    pub codebook_version: String,
    pub tasks: Vec<Task>,
}

impl TaskBatch {
    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn replication_k(&self) -> u32 {
        self.tasks.first().map_or(1, |t| t.replication_k)
    }
}

/// task_id → raters assigned to it.
pub type Assignment = BTreeMap<String, BTreeSet<String>>;

/// Sidecar for the task CSV: what the CSV cannot carry under strict RFC 4180.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchManifest {
    pub batch_id: String,
    pub codebook_version: String,
    pub replication_k: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BatchManifest {
    pub fn for_batch(batch: &TaskBatch, seed: Option<u64>) -> Self {
        BatchManifest {
            batch_id: batch.batch_id.clone(),
            codebook_version: batch.codebook_version.clone(),
            replication_k: batch.replication_k(),
            seed,
        }
    }
}

/// Street-level panorama URL for a location, coordinates at 6 decimals.
pub fn gsv_url(p: GeoPoint) -> String {
    let q = p.quantized();
    format!(
        "https://www.google.com/maps/@?api=1&map_action=pano&viewpoint={:.6},{:.6}",
        q.lat, q.lon
    )
}

fn check_id(id: &str) -> Result<(), TaskingError> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '|' || c == ',') {
        return Err(TaskingError::InvalidId(id.to_string()));
    }
    Ok(())
}

pub fn build_tasks(
    points: &[SamplePoint],
    image_url_template: &str,
    replication_k: u32,
    batch_id: &str,
    codebook_version: &str,
) -> Result<TaskBatch, TaskingError> {
    if !image_url_template.contains(POINT_ID_PLACEHOLDER) {
        return Err(TaskingError::MissingPlaceholder);
    }
    if replication_k == 0 {
        return Err(TaskingError::InvalidReplication);
    }
    check_id(batch_id)?;
    if points.is_empty() {
        return Err(TaskingError::EmptyBatch);
    }
    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(points.len());
    for p in points {
        if !matches!(p.status, PointStatus::Relocated { .. }) {
            return Err(TaskingError::NotRelocated {
                point_id: p.point_id.clone(),
                status: p.status.as_str(),
            });
        }
        check_id(&p.point_id)?;
        if !seen.insert(p.point_id.as_str()) {
            return Err(TaskingError::DuplicatePoint(p.point_id.clone()));
        }
        let image_url = image_url_template.replace(POINT_ID_PLACEHOLDER, &p.point_id);
        if image_url.chars().any(char::is_whitespace) {
            return Err(TaskingError::InvalidUrl {
                point_id: p.point_id.clone(),
            });
        }
        let location = p.location.quantized();
        tasks.push(Task {
            task_id: format!("{batch_id}-{}", p.point_id),
            point_id: p.point_id.clone(),
            location,
            image_url,
            gsv_url: gsv_url(location),
            replication_k,
        });
    }
    Ok(TaskBatch {
        batch_id: batch_id.to_string(),
        codebook_version: codebook_version.to_string(),
        tasks,
    })
}

/// Gives every task `replication_k` distinct raters. Each task goes to the
/// least-loaded raters, with ties broken by fresh seeded random keys, which
/// keeps workloads within one task of each other.
pub fn assign_raters(batch: &TaskBatch, raters: &[String], seed: u64) -> Result<Assignment, TaskingError> {
    let mut pool: Vec<&str> = Vec::with_capacity(raters.len());
    for r in raters {
        check_id(r)?;
        if pool.contains(&r.as_str()) {
            return Err(TaskingError::InvalidId(format!("{r} (duplicate rater)")));
        }
        pool.push(r);
    }
    pool.sort_unstable();
    let k = batch.tasks.iter().map(|t| t.replication_k).max().unwrap_or(1);
    if pool.len() < k as usize {
        return Err(TaskingError::InsufficientRaters {
            needed: k,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut load = vec![0usize; pool.len()];
    let mut out = Assignment::new();
    for task in &batch.tasks {
        let mut order: Vec<(usize, u64, usize)> = (0..pool.len()).map(|i| (load[i], rng.random::<u64>(), i)).collect();
        order.sort_unstable();
        let chosen: BTreeSet<String> = order
            .iter()
            .take(task.replication_k as usize)
            .map(|&(_, _, i)| {
                load[i] += 1;
                pool[i].to_string()
            })
            .collect();
        out.insert(task.task_id.clone(), chosen);
    }
    Ok(out)
}

/// Workload per rater implied by an assignment.
pub fn workloads(assignment: &Assignment) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for raters in assignment.values() {
        for r in raters {
            *out.entry(r.clone()).or_insert(0) += 1;
        }
    }
    out
}

pub fn export_tasks_csv(batch: &TaskBatch, assignment: &Assignment) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(TASKS_CSV_HEADER).expect("write to Vec");
    for t in &batch.tasks {
        let raters = assignment
            .get(&t.task_id)
            .map(|s| s.iter().map(String::as_str).collect::<Vec<_>>().join("|"))
            .unwrap_or_default();
        w.write_record([
            t.task_id.as_str(),
            &t.point_id,
            &format!("{:.6}", t.location.lat),
            &format!("{:.6}", t.location.lon),
            &t.image_url,
            &t.gsv_url,
            &t.replication_k.to_string(),
            &raters,
        ])
        .expect("write to Vec");
    }
    w.into_inner().expect("flush to Vec")
}

pub fn import_tasks_csv(bytes: &[u8], manifest: &BatchManifest) -> Result<(TaskBatch, Assignment), TaskingError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(|e| TaskingError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(TASKS_CSV_HEADER) {
        return Err(TaskingError::UnknownHeader(header.iter().map(str::to_string).collect()));
    }
    let mut tasks = Vec::new();
    let mut assignment = Assignment::new();
    let mut ids = HashSet::new();
    let mut points = HashSet::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| TaskingError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| TaskingError::Csv { line, message };
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad number {:?}", &rec[i])))
        };
        let location = GeoPoint::new(num(2)?, num(3)?).map_err(|e| bad(e.to_string()))?;
        let replication_k: u32 = rec[6]
            .parse()
            .map_err(|_| bad(format!("bad replication_k {:?}", &rec[6])))?;
        if replication_k != manifest.replication_k {
            return Err(bad(format!(
                "replication_k {replication_k} differs from manifest ({})",
                manifest.replication_k
            )));
        }
        let (task_id, point_id) = (rec[0].to_string(), rec[1].to_string());
        if task_id != format!("{}-{point_id}", manifest.batch_id) {
            return Err(bad(format!(
                "task_id {task_id} does not belong to batch {}",
                manifest.batch_id
            )));
        }
        if !ids.insert(task_id.clone()) {
            return Err(TaskingError::DuplicateTask(task_id));
        }
        if !points.insert(point_id.clone()) {
            return Err(TaskingError::DuplicatePoint(point_id));
        }
        if rec[4].is_empty() || rec[5].is_empty() {
            return Err(bad("empty url".into()));
        }
        if !rec[7].is_empty() {
            let raters: BTreeSet<String> = rec[7].split('|').map(str::to_string).collect();
            if raters.iter().any(|r| r.is_empty()) {
                return Err(bad("empty rater id".into()));
            }
            assignment.insert(task_id.clone(), raters);
        }
        tasks.push(Task {
            task_id,
            point_id,
            location,
            image_url: rec[4].to_string(),
            gsv_url: rec[5].to_string(),
            replication_k,
        });
    }
    if tasks.is_empty() {
        return Err(TaskingError::EmptyBatch);
    }
    Ok((
        TaskBatch {
            batch_id: manifest.batch_id.clone(),
            codebook_version: manifest.codebook_version.clone(),
            tasks,
        },
        assignment,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::ExclusionReason;

    const TEMPLATE: &str = "https://imagery.example.org/footprints/{point_id}.png";

    fn relocated(n: usize) -> Vec<SamplePoint> {
        (1..=n)
            .map(|i| SamplePoint {
                point_id: crate::geo::point_id(i, n),
                location: GeoPoint::new(-0.2 + i as f64 * 1e-4, -78.5).unwrap(),
                status: PointStatus::Relocated {
                    building_id: format!("B{i}"),
                },
            })
            .collect()
    }

    fn batch(n: usize, k: u32) -> TaskBatch {
        build_tasks(&relocated(n), TEMPLATE, k, "b1", "2.0").unwrap()
    }

    fn raters(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn gsv_url_scheme() {
        let p = GeoPoint::new(-0.180653, -78.467834).unwrap();
        assert_eq!(
            gsv_url(p),
            "https://www.google.com/maps/@?api=1&map_action=pano&viewpoint=-0.180653,-78.467834"
        );
        let tiny = GeoPoint::new(-1e-9, 0.0).unwrap();
        assert!(gsv_url(tiny).ends_with("viewpoint=0.000000,0.000000"));
    }

    #[test]
    fn builds_one_task_per_point() {
        let b = batch(458, 1);
        assert_eq!(b.tasks.len(), 458);
        let t = &b.tasks[0];
        assert_eq!(t.task_id, "b1-P0001");
        assert_eq!(t.image_url, "https://imagery.example.org/footprints/P0001.png");
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_tasks(&[], TEMPLATE, 1, "b1", "2.0"),
            Err(TaskingError::EmptyBatch)
        ));
        assert!(matches!(
            build_tasks(&relocated(1), "https://x/img.png", 1, "b1", "2.0"),
            Err(TaskingError::MissingPlaceholder)
        ));
        let mut pts = relocated(3);
        pts[1].status = PointStatus::Excluded(ExclusionReason::TooClose);
        match build_tasks(&pts, TEMPLATE, 1, "b1", "2.0") {
            Err(TaskingError::NotRelocated { point_id, .. }) => assert_eq!(point_id, "P0002"),
            other => panic!("{other:?}"),
        }
        pts[1].status = PointStatus::Raw;
        assert!(build_tasks(&pts, TEMPLATE, 1, "b1", "2.0").is_err());
        assert!(build_tasks(&relocated(1), TEMPLATE, 0, "b1", "2.0").is_err());
        assert!(build_tasks(&relocated(1), TEMPLATE, 1, "b 1", "2.0").is_err());
    }

    #[test]
    fn assignment_k_equals_pool() {
        let b = batch(20, 3);
        let a = assign_raters(&b, &raters(3), 5).unwrap();
        assert!(a.values().all(|s| s.len() == 3));
        assert!(workloads(&a).values().all(|&w| w == 20));
    }

    #[test]
    fn assignment_divisible_balance() {
        let a = assign_raters(&batch(20, 1), &raters(4), 5).unwrap();
        assert!(workloads(&a).values().all(|&w| w == 5));
    }

    #[test]
    fn assignment_21_tasks_k2_four_raters() {
        // 42 assignments over 4 raters with max - min <= 1: 4m <= 42 <= 4m + 3
        // gives m = 10 and exactly two raters at 11.
        let mut forced: Vec<Vec<usize>> = Vec::new();
        for a in 0..=42usize {
            for b in 0..=42 - a {
                for c in 0..=42 - a - b {
                    let mut v = vec![a, b, c, 42 - a - b - c];
                    if v.iter().max().unwrap() - v.iter().min().unwrap() <= 1 {
                        v.sort();
                        if !forced.contains(&v) {
                            forced.push(v);
                        }
                    }
                }
            }
        }
        assert_eq!(forced, vec![vec![10, 10, 11, 11]]);

        let a = assign_raters(&batch(21, 2), &raters(4), 99).unwrap();
        let mut w: Vec<usize> = workloads(&a).into_values().collect();
        w.sort();
        assert_eq!(w, forced[0]);
    }

    #[test]
    fn assignment_is_deterministic_and_checked() {
        let b = batch(30, 2);
        assert_eq!(
            assign_raters(&b, &raters(5), 1).unwrap(),
            assign_raters(&b, &raters(5), 1).unwrap()
        );
        assert!(matches!(
            assign_raters(&b, &raters(1), 1),
            Err(TaskingError::InsufficientRaters {
                needed: 2,
                available: 1
            })
        ));
        let dup = vec!["r1".to_string(), "r1".to_string()];
        assert!(assign_raters(&b, &dup, 1).is_err());
    }

    #[test]
    fn csv_single_task() {
        let b = batch(1, 1);
        let a = assign_raters(&b, &raters(2), 3).unwrap();
        let text = String::from_utf8(export_tasks_csv(&b, &a)).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("task_id,point_id,lat,lon,image_url,gsv_url,replication_k,assigned_raters\r\n"));
    }

    #[test]
    fn csv_round_trip() {
        let b = batch(25, 2);
        let a = assign_raters(&b, &raters(4), 3).unwrap();
        let bytes = export_tasks_csv(&b, &a);
        let manifest = BatchManifest::for_batch(&b, Some(3));
        let (b2, a2) = import_tasks_csv(&bytes, &manifest).unwrap();
        assert_eq!((&b2, &a2), (&b, &a));
        assert_eq!(export_tasks_csv(&b2, &a2), bytes);
    }

    #[test]
    fn csv_import_errors() {
        let b = batch(2, 1);
        let a = Assignment::new();
        let manifest = BatchManifest::for_batch(&b, None);
        let text = String::from_utf8(export_tasks_csv(&b, &a)).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let dup = format!("{}\n{}\n{}\n", lines[0], lines[1], lines[1]);
        assert!(matches!(
            import_tasks_csv(dup.as_bytes(), &manifest),
            Err(TaskingError::DuplicateTask(_))
        ));
        lines[0] = "task,point,lat,lon,image_url,gsv_url,replication_k,assigned_raters";
        assert!(matches!(
            import_tasks_csv(lines.join("\n").as_bytes(), &manifest),
            Err(TaskingError::UnknownHeader(_))
        ));
        let ragged = format!("{}\nb1-P0001,P0001,0\n", TASKS_CSV_HEADER.join(","));
        assert!(matches!(
            import_tasks_csv(ragged.as_bytes(), &manifest),
            Err(TaskingError::Csv { .. })
        ));
    }
}
