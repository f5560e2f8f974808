use std::sync::Arc;

use chrono::{TimeZone, Utc};
use floodlens_core::codebook::Codebook;
use floodlens_core::geo::{point_id, GeoPoint, PointStatus, SamplePoint};
use floodlens_core::service::{replay, Ack, LabelService, Response};
use floodlens_core::synth::complete_answers;
use floodlens_core::tasking::{assign_raters, build_tasks, Assignment, TaskBatch};

fn batch(n: usize, k: u32, raters: &[&str]) -> (TaskBatch, Assignment) {
    let points: Vec<SamplePoint> = (0..n)
        .map(|i| SamplePoint {
            point_id: point_id(i + 1, n),
            location: GeoPoint::new(-0.2 + i as f64 * 0.001, -78.5).unwrap(),
            status: PointStatus::Relocated {
                building_id: format!("B{i:03}"),
            },
        })
        .collect();
    let b = build_tasks(
        &points,
        "https://img.example/{point_id}.jpg",
        k,
        "svc",
        &Codebook::quito().version,
    )
    .unwrap();
    let raters: Vec<String> = raters.iter().map(|r| r.to_string()).collect();
    let a = assign_raters(&b, &raters, 3).unwrap();
    (b, a)
}

fn response(task_id: &str, rater: &str, seq: u32) -> Response {
    let cb = Codebook::quito();
    Response {
        response_id: uuid::Uuid::new_v4().to_string(),
        task_id: task_id.to_string(),
        rater_id: rater.to_string(),
        codebook_version: cb.version.clone(),
        answers: complete_answers(&cb),
        submitted_at: Utc.timestamp_opt(1_700_000_000 + i64::from(seq), 0).unwrap(),
        duration_s: Some(30.0),
        amends: None,
        no_coverage: false,
    }
}

#[test]
fn three_raters_twenty_tasks_concurrently() {
    let (b, a) = batch(20, 3, &["r1", "r2", "r3"]);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("responses.jsonl");
    let (svc, _) = LabelService::open(Codebook::quito(), b.clone(), a.clone(), &log).unwrap();
    let svc = Arc::new(svc);
    let handles: Vec<_> = ["r1", "r2", "r3"]
        .into_iter()
        .map(|rater| {
            let svc = Arc::clone(&svc);
            std::thread::spawn(move || {
                let mut accepted = 0;
                let mut seq = 0;
                while let Some(task) = svc.next_task(rater).unwrap() {
                    seq += 1;
                    match svc.submit(response(&task.task_id, rater, seq)).unwrap() {
                        Ack::Accepted { .. } => accepted += 1,
                        other => panic!("unexpected {other:?}"),
                    }
                }
                accepted
            })
        })
        .collect();
    let total: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(total, 60);
    assert_eq!(svc.responses().len(), 60);
    drop(svc);

    let rep = replay(&std::fs::read(&log).unwrap()).unwrap();
    assert_eq!(rep.set.len(), 60);
    assert!(rep.warnings.is_empty());
}

#[test]
fn concurrent_duplicates_yield_one_accept() {
    let (b, a) = batch(1, 1, &["r1"]);
    let svc = Arc::new(LabelService::in_memory(Codebook::quito(), b.clone(), a).unwrap());
    let same = response(&b.tasks[0].task_id, "r1", 1);
    let distinct: Vec<Response> = (0..8).map(|i| response(&b.tasks[0].task_id, "r1", i)).collect();
    let acks: Vec<Ack> = std::thread::scope(|s| {
        let mut hs = Vec::new();
        for _ in 0..8 {
            let svc = &svc;
            let r = same.clone();
            hs.push(s.spawn(move || svc.submit(r).unwrap()));
        }
        for r in distinct {
            let svc = &svc;
            hs.push(s.spawn(move || svc.submit(r).unwrap()));
        }
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let accepted = acks.iter().filter(|a| matches!(a, Ack::Accepted { .. })).count();
    let conflicts = acks.iter().filter(|a| matches!(a, Ack::Conflict { .. })).count();
    assert_eq!(accepted, 1);
    assert_eq!(conflicts, 15);
}

#[test]
fn reopen_after_each_accept_preserves_everything() {
    let (b, a) = batch(6, 2, &["r1", "r2", "r3"]);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("responses.jsonl");
    let mut accepted: Vec<Response> = Vec::new();
    let mut seq = 0;
    loop {
        let (svc, warnings) = LabelService::open(Codebook::quito(), b.clone(), a.clone(), &log).unwrap();
        assert!(warnings.is_empty());
        let mut now = svc.responses();
        now.sort_by(|x, y| x.response_id.cmp(&y.response_id));
        let mut want = accepted.clone();
        want.sort_by(|x, y| x.response_id.cmp(&y.response_id));
        assert_eq!(now, want);
        let Some((rater, task)) = ["r1", "r2", "r3"]
            .iter()
            .find_map(|r| svc.next_task(r).unwrap().map(|t| (*r, t)))
        else {
            break;
        };
        seq += 1;
        let r = response(&task.task_id, rater, seq);
        assert!(matches!(svc.submit(r.clone()).unwrap(), Ack::Accepted { .. }));
        accepted.push(r);
    }
    assert_eq!(accepted.len(), 12);
}

#[test]
fn truncation_at_any_offset_drops_at_most_the_torn_record() {
    let (b, a) = batch(3, 1, &["r1"]);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("responses.jsonl");
    {
        let (svc, _) = LabelService::open(Codebook::quito(), b.clone(), a.clone(), &log).unwrap();
        for (i, t) in b.tasks.iter().enumerate() {
            assert!(matches!(
                svc.submit(response(&t.task_id, "r1", i as u32)).unwrap(),
                Ack::Accepted { .. }
            ));
        }
    }
    let bytes = std::fs::read(&log).unwrap();
    let ends: Vec<usize> = bytes
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == b'\n')
        .map(|(i, _)| i + 1)
        .collect();
    for cut in 0..=bytes.len() {
        let rep = replay(&bytes[..cut]).unwrap();
        // A record that lost only its newline is still whole.
        let complete = ends.iter().filter(|&&e| e - 1 <= cut).count();
        let torn = cut > 0 && !ends.iter().any(|&e| e == cut || e - 1 == cut);
        assert_eq!(rep.set.len(), complete, "cut at {cut}");
        assert_eq!(rep.warnings.len(), usize::from(torn), "cut at {cut}");
    }

    // Reopening a torn log truncates the tail and keeps appending cleanly.
    let cut = ends[1] + 10;
    std::fs::write(&log, &bytes[..cut]).unwrap();
    let (svc, warnings) = LabelService::open(Codebook::quito(), b.clone(), a, &log).unwrap();
    assert!(warnings[0].contains("discarded truncated record"));
    assert!(warnings.iter().any(|w| w.contains("truncated 10 trailing bytes")));
    assert_eq!(svc.responses().len(), 2);
    let next = svc.next_task("r1").unwrap().unwrap();
    assert!(matches!(
        svc.submit(response(&next.task_id, "r1", 9)).unwrap(),
        Ack::Accepted { .. }
    ));
    drop(svc);
    let rep = replay(&std::fs::read(&log).unwrap()).unwrap();
    assert_eq!(rep.set.len(), 3);
    assert!(rep.warnings.is_empty());
}

#[test]
fn corruption_before_the_tail_is_an_error() {
    let (b, a) = batch(2, 1, &["r1"]);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("responses.jsonl");
    {
        let (svc, _) = LabelService::open(Codebook::quito(), b.clone(), a, &log).unwrap();
        for (i, t) in b.tasks.iter().enumerate() {
            svc.submit(response(&t.task_id, "r1", i as u32)).unwrap();
        }
    }
    let mut bytes = std::fs::read(&log).unwrap();
    bytes[5] = b'#';
    assert!(replay(&bytes).is_err());
}
