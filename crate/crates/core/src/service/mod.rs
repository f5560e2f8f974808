//! The labeling service: hands raters their next task, validates and logs
//! submissions, and reports progress.
//!
//! All mutation goes through one mutex that covers both the uniqueness check
//! and the log append, so concurrent duplicate submissions resolve to exactly
//! one acceptance.

pub mod http;
pub mod log;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{validate_response_shape, Answer, Codebook, Violation, ViolationReason};
use crate::tasking::{Assignment, Task, TaskBatch};

pub use self::log::{replay, LogError, LogWriter, Replay};

/// One rater's survey for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub response_id: String,
    pub task_id: String,
    pub rater_id: String,
    pub codebook_version: String,
    #[serde(default)]
    pub answers: BTreeMap<String, Answer>,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Response this one supersedes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amends: Option<String>,
    /// Rater could not see the site; the point is excluded as `no_coverage`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conflict {
    DuplicateResponseId {
        response_id: String,
    },
    AlreadyAnswered {
        task_id: String,
        rater_id: String,
        current: String,
    },
    AmendsUnknown {
        amends: String,
    },
    AmendsOtherTask {
        amends: String,
    },
    /// The amended response was itself already superseded.
    StaleAmendment {
        amends: String,
        current: String,
    },
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conflict::DuplicateResponseId { response_id } => write!(f, "response_id {response_id} already recorded"),
            Conflict::AlreadyAnswered {
                task_id,
                rater_id,
                current,
            } => write!(f, "{rater_id} already answered {task_id} (response {current})"),
            Conflict::AmendsUnknown { amends } => write!(f, "amended response {amends} does not exist"),
            Conflict::AmendsOtherTask { amends } => {
                write!(f, "amended response {amends} belongs to another task or rater")
            }
            Conflict::StaleAmendment { amends, current } => {
                write!(f, "response {amends} was already superseded by {current}")
            }
        }
    }
}

/// Accepted responses, with amendment chains resolved to their latest link.
#[derive(Debug, Default, Clone)]
pub struct ResponseSet {
    records: Vec<Response>,
    by_id: HashMap<String, usize>,
    heads: BTreeMap<(String, String), usize>,
}

impl ResponseSet {
    /// Whether `r` may be added without breaking uniqueness or the amendment chain.
    pub fn admit(&self, r: &Response) -> Result<(), Conflict> {
        if self.by_id.contains_key(&r.response_id) {
            return Err(Conflict::DuplicateResponseId {
                response_id: r.response_id.clone(),
            });
        }
        let key = (r.task_id.clone(), r.rater_id.clone());
        let head = self.heads.get(&key).map(|&i| &self.records[i]);
        match (&r.amends, head) {
            (None, None) => Ok(()),
            (None, Some(cur)) => Err(Conflict::AlreadyAnswered {
                task_id: r.task_id.clone(),
                rater_id: r.rater_id.clone(),
                current: cur.response_id.clone(),
            }),
            (Some(target), head) => {
                let Some(&ti) = self.by_id.get(target) else {
                    return Err(Conflict::AmendsUnknown { amends: target.clone() });
                };
                let t = &self.records[ti];
                if t.task_id != r.task_id || t.rater_id != r.rater_id {
                    return Err(Conflict::AmendsOtherTask { amends: target.clone() });
                }
                let cur = head.expect("amended response has a head");
                if cur.response_id != *target {
                    return Err(Conflict::StaleAmendment {
                        amends: target.clone(),
                        current: cur.response_id.clone(),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn insert(&mut self, r: Response) -> Result<(), Conflict> {
        self.admit(&r)?;
        let i = self.records.len();
        self.by_id.insert(r.response_id.clone(), i);
        self.heads.insert((r.task_id.clone(), r.rater_id.clone()), i);
        self.records.push(r);
        Ok(())
    }

    /// Current responses, one per (task, rater), ordered by task then rater.
    pub fn current(&self) -> impl Iterator<Item = &Response> + '_ {
        self.heads.values().map(|&i| &self.records[i])
    }

    /// Every record ever accepted, in log order.
    pub fn history(&self) -> &[Response] {
        &self.records
    }

    /// Number of current responses.
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn has_answered(&self, task_id: &str, rater_id: &str) -> bool {
        self.heads.contains_key(&(task_id.to_string(), rater_id.to_string()))
    }

    pub fn into_current(self) -> Vec<Response> {
        let ResponseSet { records, heads, .. } = self;
        let mut slots: Vec<Option<Response>> = records.into_iter().map(Some).collect();
        heads
            .values()
            .map(|&i| slots[i].take().expect("each head once"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Ack {
    Accepted { response_id: String },
    Rejected { violations: Vec<Violation> },
    Conflict { conflict: Conflict, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterProgress {
    pub assigned: usize,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub batch_id: String,
    pub codebook_version: String,
    pub total_tasks: usize,
    pub total_expected_responses: usize,
    pub responses_received: usize,
    pub no_coverage_reports: usize,
    pub per_rater: BTreeMap<String, RaterProgress>,
    pub mean_duration_s: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown rater {0}")]
    UnknownRater(String),
    #[error("batch references codebook version {batch}, loaded codebook is {codebook}")]
    VersionMismatch { batch: String, codebook: String },
    #[error("assignment names unknown task {0}")]
    UnknownTask(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

struct Inner {
    set: ResponseSet,
    log: Option<LogWriter>,
}

pub struct LabelService {
    codebook: Codebook,
    batch: TaskBatch,
    task_index: HashMap<String, usize>,
    by_rater: BTreeMap<String, BTreeSet<String>>,
    assignment: Assignment,
    inner: Mutex<Inner>,
}

impl fmt::Debug for LabelService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelService")
            .field("batch_id", &self.batch.batch_id)
            .field("tasks", &self.batch.tasks.len())
            .finish_non_exhaustive()
    }
}

impl LabelService {
    /// Service without persistence.
    pub fn in_memory(codebook: Codebook, batch: TaskBatch, assignment: Assignment) -> Result<Self, ServiceError> {
        Self::build(codebook, batch, assignment, ResponseSet::default(), None)
    }

    /// Service backed by the log at `path`; existing records are replayed.
    /// Returns replay warnings alongside the service.
    pub fn open(
        codebook: Codebook,
        batch: TaskBatch,
        assignment: Assignment,
        path: &Path,
    ) -> Result<(Self, Vec<String>), ServiceError> {
        let (writer, rep) = LogWriter::open(path)?;
        let svc = Self::build(codebook, batch, assignment, rep.set, Some(writer))?;
        Ok((svc, rep.warnings))
    }

    fn build(
        codebook: Codebook,
        batch: TaskBatch,
        assignment: Assignment,
        set: ResponseSet,
        log: Option<LogWriter>,
    ) -> Result<Self, ServiceError> {
        if batch.codebook_version != codebook.version {
            return Err(ServiceError::VersionMismatch {
                batch: batch.codebook_version.clone(),
                codebook: codebook.version.clone(),
            });
        }
        let task_index: HashMap<String, usize> = batch
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.clone(), i))
            .collect();
        let mut by_rater: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (task_id, raters) in &assignment {
            if !task_index.contains_key(task_id) {
                return Err(ServiceError::UnknownTask(task_id.clone()));
            }
            for r in raters {
                by_rater.entry(r.clone()).or_default().insert(task_id.clone());
            }
        }
        Ok(LabelService {
            codebook,
            batch,
            task_index,
            by_rater,
            assignment,
            inner: Mutex::new(Inner { set, log }),
        })
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn batch(&self) -> &TaskBatch {
        &self.batch
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// The rater's unanswered task with the fewest responses so far (ties by
    /// task id), or `None` once every assigned task is answered. No side effects.
    pub fn next_task(&self, rater_id: &str) -> Result<Option<Task>, ServiceError> {
        let tasks = self
            .by_rater
            .get(rater_id)
            .ok_or_else(|| ServiceError::UnknownRater(rater_id.to_string()))?;
        let inner = self.lock();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in inner.set.current() {
            *counts.entry(r.task_id.as_str()).or_insert(0) += 1;
        }
        let best = tasks
            .iter()
            .filter(|t| !inner.set.has_answered(t, rater_id))
            .min_by_key(|t| (counts.get(t.as_str()).copied().unwrap_or(0), t.as_str()));
        Ok(best.map(|t| self.batch.tasks[self.task_index[t]].clone()))
    }

    fn check(&self, r: &Response) -> Vec<Violation> {
        let field = |key: &str, message: String| Violation {
            key: key.to_string(),
            reason: ViolationReason::InvalidField { message },
        };
        let mut out = Vec::new();
        if uuid::Uuid::parse_str(&r.response_id).is_err() {
            out.push(field("response_id", format!("{:?} is not a UUID", r.response_id)));
        }
        if !self.task_index.contains_key(&r.task_id) {
            out.push(field("task_id", format!("unknown task {}", r.task_id)));
        } else if !self.assignment.get(&r.task_id).is_some_and(|s| s.contains(&r.rater_id)) {
            out.push(field(
                "rater_id",
                format!("{} is not assigned to {}", r.rater_id, r.task_id),
            ));
        }
        if r.codebook_version != self.codebook.version {
            out.push(field(
                "codebook_version",
                format!("expected {}, got {}", self.codebook.version, r.codebook_version),
            ));
        }
        if r.duration_s.is_some_and(|d| !d.is_finite() || d < 0.0) {
            out.push(field("duration_s", "must be a non-negative number".into()));
        }
        if r.no_coverage {
            if !r.answers.is_empty() {
                out.push(field("no_coverage", "a no-coverage report carries no answers".into()));
            }
        } else {
            out.extend(validate_response_shape(&self.codebook, &r.answers));
        }
        out
    }

    /// Validates and, if acceptable, durably appends a response. The log write
    /// completes before this returns `Accepted`.
    pub fn submit(&self, r: Response) -> Result<Ack, ServiceError> {
        let violations = self.check(&r);
        if !violations.is_empty() {
            return Ok(Ack::Rejected { violations });
        }
        let mut inner = self.lock();
        if let Err(conflict) = inner.set.admit(&r) {
            let message = conflict.to_string();
            return Ok(Ack::Conflict { conflict, message });
        }
        if let Some(log) = inner.log.as_mut() {
            log.append(&r)?;
        }
        let response_id = r.response_id.clone();
        inner.set.insert(r).expect("admitted above");
        Ok(Ack::Accepted { response_id })
    }

    pub fn progress(&self) -> ProgressSnapshot {
        let inner = self.lock();
        let mut per_rater: BTreeMap<String, RaterProgress> = self
            .by_rater
            .iter()
            .map(|(r, tasks)| {
                (
                    r.clone(),
                    RaterProgress {
                        assigned: tasks.len(),
                        completed: 0,
                    },
                )
            })
            .collect();
        let (mut received, mut no_coverage) = (0, 0);
        let (mut dur_sum, mut dur_n) = (0.0, 0usize);
        for r in inner.set.current() {
            received += 1;
            no_coverage += usize::from(r.no_coverage);
            if let Some(p) = per_rater.get_mut(&r.rater_id) {
                p.completed += 1;
            }
            if let Some(d) = r.duration_s {
                dur_sum += d;
                dur_n += 1;
            }
        }
        ProgressSnapshot {
            batch_id: self.batch.batch_id.clone(),
            codebook_version: self.codebook.version.clone(),
            total_tasks: self.batch.tasks.len(),
            total_expected_responses: self.batch.tasks.iter().map(|t| t.replication_k as usize).sum(),
            responses_received: received,
            no_coverage_reports: no_coverage,
            per_rater,
            mean_duration_s: (dur_n > 0).then(|| dur_sum / dur_n as f64),
        }
    }

    /// Current accepted responses, one per (task, rater).
    pub fn responses(&self) -> Vec<Response> {
        self.lock().set.current().cloned().collect()
    }
}
