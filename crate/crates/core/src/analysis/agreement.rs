//! Inter-rater agreement: Fleiss' kappa and pairwise percent agreement over a
//! subjects × categories count matrix, and per-variable reports built from
//! replicated responses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{group_by_task, AnalysisError, ReportMeta};
use crate::codebook::{Answer, Codebook, VariableKind};
use crate::service::Response;
use crate::tasking::TaskBatch;

/// `counts[i][j]` raters put subject `i` in category `j`; every row sums to
/// the same rater count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    variable_key: String,
    categories: Vec<String>,
    counts: Vec<Vec<u32>>,
    n_raters: u32,
}

impl RatingMatrix {
    pub fn new(
        variable_key: impl Into<String>,
        categories: Vec<String>,
        counts: Vec<Vec<u32>>,
    ) -> Result<Self, AnalysisError> {
        let n_raters = counts.first().map_or(0, |row| row.iter().sum());
        for (i, row) in counts.iter().enumerate() {
            if row.len() != categories.len() {
                return Err(AnalysisError::InvalidMatrix(format!(
                    "row {i} has {} columns, expected {}",
                    row.len(),
                    categories.len()
                )));
            }
            let sum: u32 = row.iter().sum();
            if sum != n_raters {
                return Err(AnalysisError::InvalidMatrix(format!(
                    "row {i} sums to {sum}, expected {n_raters}"
                )));
            }
        }
        Ok(RatingMatrix {
            variable_key: variable_key.into(),
            categories,
            counts,
            n_raters,
        })
    }

    pub fn variable_key(&self) -> &str {
        &self.variable_key
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn n_subjects(&self) -> usize {
        self.counts.len()
    }

    pub fn n_raters(&self) -> u32 {
        self.n_raters
    }

    /// Column totals.
    pub fn marginals(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.categories.len()];
        for row in &self.counts {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += u64::from(c);
            }
        }
        out
    }

    fn check(&self) -> Result<(), AnalysisError> {
        if self.n_raters < 2 {
            return Err(AnalysisError::TooFewRaters(self.n_raters));
        }
        if self.counts.is_empty() {
            return Err(AnalysisError::NoSubjects);
        }
        Ok(())
    }

    /// Mean over subjects of the fraction of agreeing rater pairs.
    fn mean_pair_agreement(&self) -> f64 {
        let n = u64::from(self.n_raters);
        let denom = (n * (n - 1)) as f64;
        let total: f64 = self
            .counts
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| u64::from(c) * u64::from(c).saturating_sub(1))
                    .sum::<u64>() as f64
                    / denom
            })
            .sum();
        total / self.counts.len() as f64
    }
}

/// Fleiss' kappa. `degenerate` is set when every rating falls in one
/// category, where chance agreement is 1 and the ratio is undefined; the
/// value is then reported as 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    pub degenerate: bool,
}

pub fn percent_agreement(m: &RatingMatrix) -> Result<f64, AnalysisError> {
    m.check()?;
    Ok(m.mean_pair_agreement())
}

pub fn fleiss_kappa(m: &RatingMatrix) -> Result<Kappa, AnalysisError> {
    m.check()?;
    let marginals = m.marginals();
    if marginals.iter().filter(|&&c| c > 0).count() == 1 {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    let total = (m.n_subjects() as u64 * u64::from(m.n_raters)) as f64;
    let p_bar = m.mean_pair_agreement();
    let p_e: f64 = marginals.iter().map(|&c| (c as f64 / total).powi(2)).sum();
    Ok(Kappa {
        value: (p_bar - p_e) / (1.0 - p_e),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableAgreement {
    pub variable_key: String,
    pub kind: VariableKind,
    pub n_subjects: usize,
    pub n_raters: u32,
    /// Tasks left out because they did not have exactly `n_raters` answers.
    pub n_skipped: usize,
    pub percent_agreement: Option<f64>,
    pub fleiss_kappa: Option<Kappa>,
    /// Count variables only: mean over subjects of the mean |a - b| over rater pairs.
    pub mean_abs_difference: Option<f64>,
    pub category_marginals: Vec<CategoryCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    #[serde(flatten)]
    pub meta: ReportMeta,
    pub variables: Vec<VariableAgreement>,
}

fn category_of(answer: &Answer) -> String {
    match answer {
        Answer::Choice(c) => c.clone(),
        Answer::Choices(cs) => {
            let set: BTreeSet<&str> = cs.iter().map(String::as_str).collect();
            set.into_iter().collect::<Vec<_>>().join("+")
        }
        Answer::Count(v) => v.to_string(),
        Answer::Text(t) => t.clone(),
    }
}

/// Agreement for every non-free-text variable over tasks answered by exactly
/// `replication_k` raters. `task_filter` restricts the subjects.
///
/// Single-choice variables get kappa and percent agreement. Multi-choice
/// variables get exact-set percent agreement only. Count variables get
/// exact-match percent agreement and mean absolute difference.
pub fn agreement_report(
    cb: &Codebook,
    batch: &TaskBatch,
    responses: &[Response],
    task_filter: Option<&BTreeSet<String>>,
) -> Result<AgreementReport, AnalysisError> {
    let by_task = group_by_task(batch, responses)?;
    let n = batch.replication_k();
    let mut variables = Vec::new();
    for var in cb.variables.iter().filter(|v| v.kind != VariableKind::FreeText) {
        let mut rows: Vec<Vec<&Answer>> = Vec::new();
        let mut skipped = 0;
        for (task_id, rs) in &by_task {
            if task_filter.is_some_and(|f| !f.contains(*task_id)) {
                continue;
            }
            let answers: Vec<&Answer> = rs.iter().filter_map(|r| r.answers.get(&var.key)).collect();
            if answers.is_empty() {
                continue;
            }
            if answers.len() as u32 == n {
                rows.push(answers);
            } else {
                skipped += 1;
            }
        }

        let categories: Vec<String> = match var.kind {
            VariableKind::SingleChoice => var.options.iter().map(|o| o.code.clone()).collect(),
            _ => rows
                .iter()
                .flatten()
                .map(|a| category_of(a))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let index: BTreeMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let counts: Vec<Vec<u32>> = rows
            .iter()
            .map(|answers| {
                let mut row = vec![0u32; categories.len()];
                for a in answers {
                    row[index[category_of(a).as_str()]] += 1;
                }
                row
            })
            .collect();
        let matrix = RatingMatrix::new(var.key.clone(), categories, counts)?;
        let usable = n >= 2 && matrix.n_subjects() > 0;

        let mean_abs_difference = (usable && var.kind == VariableKind::Count).then(|| {
            let per_subject: f64 = rows
                .iter()
                .map(|answers| {
                    let vals: Vec<i64> = answers
                        .iter()
                        .map(|a| match a {
                            Answer::Count(v) => *v,
                            _ => 0,
                        })
                        .collect();
                    let mut sum = 0i64;
                    let mut pairs = 0i64;
                    for i in 0..vals.len() {
                        for j in i + 1..vals.len() {
                            sum += (vals[i] - vals[j]).abs();
                            pairs += 1;
                        }
                    }
                    sum as f64 / pairs as f64
                })
                .sum();
            per_subject / rows.len() as f64
        });

        variables.push(VariableAgreement {
            variable_key: var.key.clone(),
            kind: var.kind,
            n_subjects: matrix.n_subjects(),
            n_raters: n,
            n_skipped: skipped,
            percent_agreement: if usable {
                Some(percent_agreement(&matrix)?)
            } else {
                None
            },
            fleiss_kappa: if usable && var.kind == VariableKind::SingleChoice {
                Some(fleiss_kappa(&matrix)?)
            } else {
                None
            },
            mean_abs_difference,
            category_marginals: matrix
                .categories()
                .iter()
                .zip(matrix.marginals())
                .map(|(c, count)| CategoryCount {
                    category: c.clone(),
                    count,
                })
                .collect(),
        });
    }
    Ok(AgreementReport {
        meta: ReportMeta::for_batch(cb, batch),
        variables,
    })
}

impl AgreementReport {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "agreement  batch={}  codebook={}",
            self.meta.batch_id, self.meta.codebook_version
        );
        let _ = writeln!(
            out,
            "{:<22} {:<13} {:>8} {:>6} {:>9} {:>10} {:>8}",
            "variable", "kind", "subjects", "raters", "agree", "kappa", "mad"
        );
        let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"));
        for v in &self.variables {
            let kappa = match v.fleiss_kappa {
                Some(Kappa {
                    value,
                    degenerate: true,
                }) => format!("{value:.4}*"),
                Some(k) => format!("{:.4}", k.value),
                None => "-".into(),
            };
            let _ = writeln!(
                out,
                "{:<22} {:<13} {:>8} {:>6} {:>9} {:>10} {:>8}",
                v.variable_key,
                v.kind.as_str(),
                v.n_subjects,
                v.n_raters,
                opt(v.percent_agreement, 4),
                kappa,
                opt(v.mean_abs_difference, 3)
            );
        }
        if self
            .variables
            .iter()
            .any(|v| v.fleiss_kappa.is_some_and(|k| k.degenerate))
        {
            out.push_str("* all ratings in one category; kappa undefined, reported as 1.0\n");
        }
        out
    }
}
