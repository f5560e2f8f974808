use floodlens_core::analysis::{fleiss_kappa, percent_agreement, RatingMatrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Subjects x categories count matrix with a fixed number of raters per row,
/// built by dealing each rater's rating into a category.
fn matrix_strategy() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
    (2usize..6, 2usize..7, 1usize..30)
        .prop_flat_map(|(k, n, subjects)| (Just(k), prop::collection::vec(prop::collection::vec(0..k, n), subjects)))
}

fn counts_of(k: usize, ratings: &[Vec<usize>]) -> Vec<Vec<u32>> {
    ratings
        .iter()
        .map(|row| {
            let mut c = vec![0u32; k];
            for &r in row {
                c[r] += 1;
            }
            c
        })
        .collect()
}

fn categories(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

/// Share of agreeing unordered rater pairs, averaged over subjects.
fn brute_force_agreement(ratings: &[Vec<usize>]) -> f64 {
    let per_subject = ratings.iter().map(|row| {
        let mut agree = 0usize;
        let mut pairs = 0usize;
        for i in 0..row.len() {
            for j in i + 1..row.len() {
                pairs += 1;
                agree += usize::from(row[i] == row[j]);
            }
        }
        agree as f64 / pairs as f64
    });
    per_subject.sum::<f64>() / ratings.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn percent_agreement_matches_pair_enumeration((k, ratings) in matrix_strategy()) {
        let m = RatingMatrix::new("v", categories(k), counts_of(k, &ratings)).unwrap();
        let got = percent_agreement(&m).unwrap();
        prop_assert!((got - brute_force_agreement(&ratings)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn kappa_invariant_under_subject_permutation_and_relabeling(
        (k, ratings) in matrix_strategy(),
        subject_seed in any::<u64>(),
        label_seed in any::<u64>(),
    ) {
        let counts = counts_of(k, &ratings);
        let base = fleiss_kappa(&RatingMatrix::new("v", categories(k), counts.clone()).unwrap()).unwrap();

        let mut rows: Vec<usize> = (0..counts.len()).collect();
        shuffle(&mut rows, subject_seed);
        let mut labels: Vec<usize> = (0..k).collect();
        shuffle(&mut labels, label_seed);
        let permuted: Vec<Vec<u32>> = rows
            .iter()
            .map(|&r| {
                let mut row = vec![0u32; k];
                for (c, &v) in counts[r].iter().enumerate() {
                    row[labels[c]] = v;
                }
                row
            })
            .collect();
        let other = fleiss_kappa(&RatingMatrix::new("v", categories(k), permuted).unwrap()).unwrap();
        prop_assert_eq!(base.degenerate, other.degenerate);
        prop_assert!((base.value - other.value).abs() < 1e-9, "{} vs {}", base.value, other.value);
        prop_assert!(base.value <= 1.0 + 1e-12);
    }

    #[test]
    fn unanimous_subjects_give_kappa_one(
        picks in prop::collection::vec(0usize..4, 2..20),
        n in 2u32..8,
    ) {
        let counts: Vec<Vec<u32>> = picks
            .iter()
            .map(|&p| {
                let mut row = vec![0u32; 4];
                row[p] = n;
                row
            })
            .collect();
        let kappa = fleiss_kappa(&RatingMatrix::new("v", categories(4), counts).unwrap()).unwrap();
        prop_assert_eq!(kappa.value, 1.0);
        let distinct: std::collections::BTreeSet<_> = picks.iter().collect();
        prop_assert_eq!(kappa.degenerate, distinct.len() == 1);
    }
}

fn shuffle<T>(v: &mut [T], seed: u64) {
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

#[test]
fn three_rater_fixture() {
    let counts = vec![
        vec![3, 0, 0],
        vec![2, 1, 0],
        vec![1, 1, 1],
        vec![0, 3, 0],
        vec![0, 1, 2],
    ];
    let m = RatingMatrix::new("v", categories(3), counts).unwrap();
    let kappa = fleiss_kappa(&m).unwrap();
    assert!(!kappa.degenerate);
    assert!((kappa.value - 13.0 / 48.0).abs() < 1e-9);
    assert!((percent_agreement(&m).unwrap() - 8.0 / 15.0).abs() < 1e-12);
}
