use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use floodlens_core::analysis::{
    aggregate_modal, aggregate_variable, coverage_stats, export_geojson, parse_point_features, stats_report, ReportMeta,
};
use floodlens_core::codebook::{Answer, Codebook, VariableKind};
use floodlens_core::geo::{self, PointStatus, SamplePoint};
use floodlens_core::service::Response;
use floodlens_core::synth::{self, complete_answers};
use floodlens_core::tasking::{build_tasks, TaskBatch};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture_points() -> Vec<SamplePoint> {
    let raw = geo::random_points(&synth::quito_region(), 200, 21, 50.0).unwrap();
    geo::relocate_all(&raw, &synth::quito_footprints(), 250.0, 50.0).unwrap()
}

fn fixture_batch(points: &[SamplePoint], k: u32) -> TaskBatch {
    let relocated: Vec<SamplePoint> = points
        .iter()
        .filter(|p| matches!(p.status, PointStatus::Relocated { .. }))
        .cloned()
        .collect();
    build_tasks(
        &relocated,
        "https://img.example/{point_id}.jpg",
        k,
        "a",
        &Codebook::quito().version,
    )
    .unwrap()
}

fn in_southeast(lat: f64, lon: f64) -> bool {
    lat < -0.215 && lon > -78.50
}

/// k responses per task with random answers; drains are 0 in the southeast.
fn random_responses(cb: &Codebook, batch: &TaskBatch, k: u32, seed: u64) -> Vec<Response> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in &batch.tasks {
        for r in 0..k {
            let mut answers = complete_answers(cb);
            for v in &cb.variables {
                let a = match v.kind {
                    VariableKind::SingleChoice => Answer::Choice(v.options.choose(&mut rng).unwrap().code.clone()),
                    VariableKind::MultiChoice => {
                        let n = rng.random_range(1..=v.options.len());
                        let mut codes: Vec<String> =
                            v.options.choose_multiple(&mut rng, n).map(|o| o.code.clone()).collect();
                        codes.sort();
                        Answer::Choices(codes)
                    }
                    VariableKind::Count => {
                        let (lo, hi) = v.count_range.unwrap();
                        Answer::Count(rng.random_range(lo.max(1)..=hi.min(12)))
                    }
                    VariableKind::FreeText => continue,
                };
                answers.insert(v.key.clone(), a);
            }
            if in_southeast(t.location.lat, t.location.lon) {
                answers.insert("drains".into(), Answer::Count(0));
            }
            out.push(Response {
                response_id: format!("{:08x}-0000-4000-8000-{:012x}", out.len(), seed),
                task_id: t.task_id.clone(),
                rater_id: format!("r{r}"),
                codebook_version: cb.version.clone(),
                answers,
                submitted_at: Utc.timestamp_opt(1_700_000_000 + out.len() as i64, 0).unwrap(),
                duration_s: Some(40.0),
                amends: None,
                no_coverage: false,
            });
        }
    }
    out
}

#[test]
fn southeast_cluster_has_no_drains() {
    let cb = Codebook::quito();
    let points = fixture_points();
    let batch = fixture_batch(&points, 3);
    let responses = random_responses(&cb, &batch, 3, 5);
    let drains = aggregate_variable(&batch, &responses, "drains").unwrap();
    let bytes = export_geojson(&ReportMeta::for_batch(&cb, &batch), &points, &drains, "drains").unwrap();
    let fc = parse_point_features(&bytes).unwrap();
    let (se, rest): (Vec<_>, Vec<_>) = fc
        .features
        .iter()
        .partition(|f| in_southeast(f.location.lat, f.location.lon));
    assert!(!se.is_empty());
    assert!(se.iter().all(|f| f.value == 0));
    assert!(rest.iter().all(|f| f.value.as_i64().unwrap() > 0));
}

#[test]
fn coverage_counts_relocation_exclusions() {
    let cb = Codebook::quito();
    let points = fixture_points();
    let batch = fixture_batch(&points, 1);
    let mut responses = random_responses(&cb, &batch, 1, 9);
    let last = responses.last_mut().unwrap();
    last.answers.clear();
    last.no_coverage = true;
    let stats = coverage_stats(&points, &batch, &responses).unwrap();
    let relocation_excluded = points.iter().filter(|p| p.exclusion_reason().is_some()).count();
    assert_eq!(stats.planned, 200);
    assert_eq!(stats.excluded, relocation_excluded + 1);
    assert_eq!(stats.collected, batch.tasks.len() - 1);
    assert_eq!(stats.pending, 0);
    assert_eq!(stats.excluded_by_reason["no_coverage"], 1);
    assert_eq!(stats.excluded_by_reason.values().sum::<usize>(), stats.excluded);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn report_ignores_response_order(seed in any::<u64>(), k in 1u32..4) {
        let cb = Codebook::quito();
        let points = fixture_points();
        let batch = fixture_batch(&points, k);
        let responses = random_responses(&cb, &batch, k, seed);
        let mut shuffled = responses.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(
            stats_report(&cb, &batch, &points, &responses).unwrap(),
            stats_report(&cb, &batch, &points, &shuffled).unwrap()
        );
    }

    #[test]
    fn modal_choice_is_a_most_frequent_code(codes in prop::collection::vec(0u8..4, 1..9)) {
        let responses: Vec<Response> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| Response {
                response_id: format!("{i}"),
                task_id: "t".into(),
                rater_id: format!("r{i}"),
                codebook_version: "2.0".into(),
                answers: BTreeMap::from([("v".to_string(), Answer::Choice(format!("c{c}")))]),
                submitted_at: Utc.timestamp_opt(0, 0).unwrap(),
                duration_s: None,
                amends: None,
                no_coverage: false,
            })
            .collect();
        let refs: Vec<&Response> = responses.iter().collect();
        let Some(Answer::Choice(got)) = aggregate_modal(&refs, "v") else {
            return Err(TestCaseError::fail("no mode"));
        };
        let mut freq = BTreeMap::new();
        for c in &codes {
            *freq.entry(format!("c{c}")).or_insert(0) += 1;
        }
        let best = *freq.values().max().unwrap();
        let want = freq.iter().find(|(_, &n)| n == best).unwrap().0.clone();
        prop_assert_eq!(got, want);
    }
}
