//! Post-collection analytics over a replayed response set.

mod agreement;
mod geojson;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Answer, Codebook, VariableKind};
use crate::geo::{ExclusionReason, PointStatus, SamplePoint};
use crate::service::Response;
use crate::tasking::TaskBatch;

pub use agreement::{
    agreement_report, fleiss_kappa, percent_agreement, AgreementReport, CategoryCount, Kappa, RatingMatrix,
    VariableAgreement,
};
pub use geojson::{export_geojson, parse_point_features, write_point_features, PointFeature, PointFeatureCollection};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("response {response_id} references unknown task {task_id}")]
    UnknownTask { response_id: String, task_id: String },
    #[error("unknown point {0}")]
    UnknownPoint(String),
    #[error("point {0} was not collected")]
    NotCollected(String),
    #[error("agreement needs at least two raters per subject, got {0}")]
    TooFewRaters(u32),
    #[error("rating matrix has no subjects")]
    NoSubjects,
    #[error("invalid rating matrix: {0}")]
    InvalidMatrix(String),
    #[error("geojson: {0}")]
    GeoJson(String),
}

/// Provenance stamped into every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub batch_id: String,
    pub codebook_version: String,
}

impl ReportMeta {
    pub fn for_batch(cb: &Codebook, batch: &TaskBatch) -> Self {
        ReportMeta {
            batch_id: batch.batch_id.clone(),
            codebook_version: cb.version.clone(),
        }
    }
}

/// Responses with data (no-coverage reports dropped), grouped by task id.
/// Within a task, responses are ordered by rater id.
pub(crate) fn group_by_task<'a>(
    batch: &TaskBatch,
    responses: &'a [Response],
) -> Result<BTreeMap<&'a str, Vec<&'a Response>>, AnalysisError> {
    let mut out: BTreeMap<&str, Vec<&Response>> = BTreeMap::new();
    for r in responses {
        if batch.task(&r.task_id).is_none() {
            return Err(AnalysisError::UnknownTask {
                response_id: r.response_id.clone(),
                task_id: r.task_id.clone(),
            });
        }
        if !r.no_coverage {
            out.entry(r.task_id.as_str()).or_default().push(r);
        }
    }
    for rs in out.values_mut() {
        rs.sort_by(|a, b| a.rater_id.cmp(&b.rater_id));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub planned: usize,
    pub collected: usize,
    pub excluded: usize,
    pub excluded_by_reason: BTreeMap<String, usize>,
    /// Points with a task but no response yet.
    pub pending: usize,
}

/// Accounts for every planned point: collected (at least one response with
/// data), excluded (by relocation or by a no-coverage report), or pending.
pub fn coverage_stats(
    points: &[SamplePoint],
    batch: &TaskBatch,
    responses: &[Response],
) -> Result<CoverageStats, AnalysisError> {
    let known: HashMap<&str, &SamplePoint> = points.iter().map(|p| (p.point_id.as_str(), p)).collect();
    let mut with_data: HashMap<&str, bool> = HashMap::new();
    for r in responses {
        let task = batch.task(&r.task_id).ok_or_else(|| AnalysisError::UnknownTask {
            response_id: r.response_id.clone(),
            task_id: r.task_id.clone(),
        })?;
        if !known.contains_key(task.point_id.as_str()) {
            return Err(AnalysisError::UnknownPoint(task.point_id.clone()));
        }
        *with_data.entry(task.point_id.as_str()).or_insert(false) |= !r.no_coverage;
    }
    let mut stats = CoverageStats {
        planned: points.len(),
        collected: 0,
        excluded: 0,
        excluded_by_reason: ExclusionReason::ALL
            .iter()
            .map(|r| (r.as_str().to_string(), 0))
            .collect(),
        pending: 0,
    };
    for p in points {
        let reason = match (&p.status, with_data.get(p.point_id.as_str())) {
            (PointStatus::Excluded(r), _) => Some(*r),
            (_, Some(true)) => {
                stats.collected += 1;
                None
            }
            (_, Some(false)) => Some(ExclusionReason::NoCoverage),
            (_, None) => {
                stats.pending += 1;
                None
            }
        };
        if let Some(r) = reason {
            stats.excluded += 1;
            *stats
                .excluded_by_reason
                .get_mut(r.as_str())
                .expect("all reasons present") += 1;
        }
    }
    Ok(stats)
}

/// Collapses one task's replicated answers for a variable into one value.
///
/// Single choice: modal code. Multi choice: modal set. Ties in either go to
/// the lexicographically smallest candidate. Count: median, taking the lower
/// middle for even counts. Free text: non-empty texts joined with newlines in
/// rater-id order. `None` when no response answered the variable.
pub fn aggregate_modal(responses: &[&Response], variable_key: &str) -> Option<Answer> {
    let mut sorted: Vec<&Response> = responses.to_vec();
    sorted.sort_by(|a, b| a.rater_id.cmp(&b.rater_id));
    let answers: Vec<&Answer> = sorted.iter().filter_map(|r| r.answers.get(variable_key)).collect();
    let first = answers.first()?;
    Some(match first {
        Answer::Choice(_) => {
            let codes = answers.iter().filter_map(|a| match a {
                Answer::Choice(c) => Some(c.clone()),
                _ => None,
            });
            Answer::Choice(mode(codes)?)
        }
        Answer::Choices(_) => {
            let sets = answers.iter().filter_map(|a| match a {
                Answer::Choices(cs) => {
                    let mut s = cs.clone();
                    s.sort();
                    s.dedup();
                    Some(s)
                }
                _ => None,
            });
            Answer::Choices(mode(sets)?)
        }
        Answer::Count(_) => {
            let mut vals: Vec<i64> = answers
                .iter()
                .filter_map(|a| match a {
                    Answer::Count(v) => Some(*v),
                    _ => None,
                })
                .collect();
            vals.sort_unstable();
            Answer::Count(vals[(vals.len() - 1) / 2])
        }
        Answer::Text(_) => Answer::Text(
            answers
                .iter()
                .filter_map(|a| match a {
                    Answer::Text(t) if !t.is_empty() => Some(t.as_str()),
                    _ => None,
                })
                .collect::<Vec<_>>()
                .join("\n"),
        ),
    })
}

fn mode<T: Ord>(items: impl Iterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for it in items {
        *counts.entry(it).or_insert(0) += 1;
    }
    // BTreeMap iterates in ascending order, so the first maximum wins ties.
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(k, _)| k)
}

/// Aggregated value per point id for one variable, over tasks with data.
pub fn aggregate_variable(
    batch: &TaskBatch,
    responses: &[Response],
    variable_key: &str,
) -> Result<BTreeMap<String, Answer>, AnalysisError> {
    let mut out = BTreeMap::new();
    for (task_id, rs) in group_by_task(batch, responses)? {
        if let Some(a) = aggregate_modal(&rs, variable_key) {
            let task = batch.task(task_id).expect("grouped tasks exist");
            out.insert(task.point_id.clone(), a);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionCount {
    pub code: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub variable_key: String,
    pub kind: VariableKind,
    /// Points with at least one response carrying data.
    pub n_points: usize,
    pub n_missing: usize,
    /// Choice kinds, in codebook option order. For multi-choice a point adds
    /// one to every code in its aggregated set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub option_counts: Vec<OptionCount>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub histogram: BTreeMap<i64, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    /// Free text: points with a non-empty aggregated text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_text: Option<usize>,
}

pub fn frequency_table(
    cb: &Codebook,
    batch: &TaskBatch,
    responses: &[Response],
    variable_key: &str,
) -> Result<VariableSummary, AnalysisError> {
    let var = cb
        .variable(variable_key)
        .ok_or_else(|| AnalysisError::UnknownVariable(variable_key.to_string()))?;
    let grouped = group_by_task(batch, responses)?;
    let values: Vec<Option<Answer>> = grouped.values().map(|rs| aggregate_modal(rs, variable_key)).collect();
    let mut summary = VariableSummary {
        variable_key: var.key.clone(),
        kind: var.kind,
        n_points: values.len(),
        n_missing: values.iter().filter(|v| v.is_none()).count(),
        option_counts: var
            .options
            .iter()
            .map(|o| OptionCount {
                code: o.code.clone(),
                count: 0,
            })
            .collect(),
        histogram: BTreeMap::new(),
        min: None,
        max: None,
        mean: None,
        n_text: None,
    };
    let mut counted = 0usize;
    let mut sum = 0i64;
    let mut n_text = 0;
    for v in values.iter().flatten() {
        match v {
            Answer::Choice(c) => bump(&mut summary.option_counts, c),
            Answer::Choices(cs) => cs.iter().for_each(|c| bump(&mut summary.option_counts, c)),
            Answer::Count(x) => {
                *summary.histogram.entry(*x).or_insert(0) += 1;
                counted += 1;
                sum += x;
            }
            Answer::Text(t) => n_text += usize::from(!t.is_empty()),
        }
    }
    if var.kind == VariableKind::Count && counted > 0 {
        summary.min = summary.histogram.keys().next().copied();
        summary.max = summary.histogram.keys().next_back().copied();
        summary.mean = Some(sum as f64 / counted as f64);
    }
    if var.kind == VariableKind::FreeText {
        summary.n_text = Some(n_text);
    }
    Ok(summary)
}

fn bump(counts: &mut [OptionCount], code: &str) {
    if let Some(oc) = counts.iter_mut().find(|oc| oc.code == code) {
        oc.count += 1;
    }
}

/// Coverage plus a frequency table for every variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    #[serde(flatten)]
    pub meta: ReportMeta,
    pub coverage: CoverageStats,
    pub variables: Vec<VariableSummary>,
}

pub fn stats_report(
    cb: &Codebook,
    batch: &TaskBatch,
    points: &[SamplePoint],
    responses: &[Response],
) -> Result<StatsReport, AnalysisError> {
    Ok(StatsReport {
        meta: ReportMeta::for_batch(cb, batch),
        coverage: coverage_stats(points, batch, responses)?,
        variables: cb
            .variables
            .iter()
            .map(|v| frequency_table(cb, batch, responses, &v.key))
            .collect::<Result<_, _>>()?,
    })
}

impl StatsReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.coverage;
        let _ = writeln!(
            out,
            "coverage  batch={}  codebook={}",
            self.meta.batch_id, self.meta.codebook_version
        );
        let _ = writeln!(out, "  {:<24} {:>6}", "planned", c.planned);
        let _ = writeln!(out, "  {:<24} {:>6}", "collected", c.collected);
        let _ = writeln!(out, "  {:<24} {:>6}", "excluded", c.excluded);
        for (reason, n) in &c.excluded_by_reason {
            let _ = writeln!(out, "    {:<22} {:>6}", reason, n);
        }
        let _ = writeln!(out, "  {:<24} {:>6}", "pending", c.pending);
        for v in &self.variables {
            let _ = writeln!(
                out,
                "\n{} ({})  points={} missing={}",
                v.variable_key, v.kind, v.n_points, v.n_missing
            );
            for oc in &v.option_counts {
                let _ = writeln!(out, "  {:<24} {:>6}", oc.code, oc.count);
            }
            for (value, n) in &v.histogram {
                let _ = writeln!(out, "  {:<24} {:>6}", value, n);
            }
            if let (Some(min), Some(max), Some(mean)) = (v.min, v.max, v.mean) {
                let _ = writeln!(out, "  min={min} max={max} mean={mean:.3}");
            }
            if let Some(n) = v.n_text {
                let _ = writeln!(out, "  {:<24} {:>6}", "with text", n);
            }
        }
        out
    }
}
