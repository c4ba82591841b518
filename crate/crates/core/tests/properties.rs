use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use icd_chapter::categorizer::{band_analysis, classify_reports, Band, CategorizationRun, Class, ScoreReport};
use icd_chapter::corpus::{merge_admissions, truncate_code, DiagnosisRow, NoteRecord};
use icd_chapter::entities::{debias, Provenance, Stage, WeightEntry, WeightedEntitySet};
use icd_chapter::nn::{softmax_rows, Tensor};
use icd_chapter::review::{DecisionRequest, QueueFilter, ReviewState, Verdict};
use icd_chapter::sectioner::{flatten_for_matching, normalize_text};
use icd_chapter::weight::Weight;

fn raw(weights: &[(String, i64)]) -> WeightedEntitySet {
    WeightedEntitySet::new(
        Stage::Raw,
        weights
            .iter()
            .map(|(e, h)| {
                (
                    e.clone(),
                    WeightEntry {
                        weight: Weight::from_hundredths(*h),
                        provenance: Provenance::Frequency,
                    },
                )
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn truncation_is_a_growing_prefix(code in "[0-9VE][0-9]{0,6}", k in 2usize..5) {
        let short = truncate_code(&code, k);
        let long = truncate_code(&code, k + 1);
        prop_assert!(short.len() <= k);
        prop_assert!(code.starts_with(short));
        prop_assert!(long.starts_with(short));
    }

    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,60}") {
        let once = normalize_text(&s);
        prop_assert_eq!(normalize_text(&once), once.clone());
        prop_assert!(once.chars().all(|c| c.is_ascii_lowercase() || c == ' '));
        prop_assert!(!once.contains("  "));
    }

    #[test]
    fn flattening_is_idempotent(s in "\\PC{0,60}") {
        let once = flatten_for_matching(&s);
        prop_assert_eq!(flatten_for_matching(&once), once.clone());
        prop_assert!(once.starts_with(' '));
        prop_assert!(!once.contains("  ") || once == " ");
    }

    #[test]
    fn weight_text_and_json_round_trip(h in -100_000i64..100_000) {
        let w = Weight::from_hundredths(h);
        prop_assert_eq!(w.to_string().parse::<Weight>().unwrap(), w);
        let json = serde_json::to_string(&w).unwrap();
        prop_assert_eq!(serde_json::from_str::<Weight>(&json).unwrap(), w);
    }

    #[test]
    fn ratio_rounds_half_up(n in 0u64..10_000, extra in 0u64..10_000) {
        let d = n + extra + 1;
        let got = Weight::ratio_half_up(n, d).hundredths();
        // exact rational comparison: got/100 is the nearest hundredth, ties up
        let twice = 200 * n as i128;
        prop_assert!((2 * got as i128 - 1) * d as i128 <= twice);
        prop_assert!(twice < (2 * got as i128 + 1) * d as i128);
    }

    #[test]
    fn bands_partition_their_range(
        mut cuts in proptest::collection::btree_set(1i64..1000, 1..6),
        probe in 0i64..1000,
    ) {
        cuts.insert(1000);
        let mut edges = vec![Weight::ZERO];
        edges.extend(cuts.iter().map(|h| Weight::from_hundredths(*h)));
        let bands = Band::from_edges(&edges).unwrap();
        let sum = Weight::from_hundredths(probe);
        prop_assert_eq!(bands.iter().filter(|b| b.contains(sum)).count(), 1);
    }

    #[test]
    fn debiased_weights_are_positive_deltas(
        pairs in proptest::collection::btree_map("[a-z]{1,6}", (0i64..=100, 0i64..=100), 0..30),
    ) {
        let s1: Vec<(String, i64)> = pairs.iter().map(|(e, (a, _))| (e.clone(), *a)).collect();
        let s2: Vec<(String, i64)> = pairs.iter().map(|(e, (_, b))| (e.clone(), *b)).collect();
        let out = debias(&raw(&s1), &raw(&s2)).unwrap();
        for (e, entry) in out.iter() {
            let (a, b) = pairs[e];
            prop_assert_eq!(entry.weight.hundredths(), a - b);
            prop_assert!(a > b);
        }
        prop_assert_eq!(out.len(), pairs.values().filter(|(a, b)| a > b).count());
    }

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 1usize..6,
        values in proptest::collection::vec(-30.0f64..30.0, 36),
    ) {
        let scores = Tensor::from_shape_fn((rows, cols), |(i, j)| values[i * 6 + j]);
        let p = softmax_rows(&scores, None);
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn merge_is_bounded_and_idempotent(
        notes in proptest::collection::vec(("[a-e]", "[a-z]{0,8}"), 0..12),
        dx in proptest::collection::vec(("[a-g]", "28[0-9]", 1u32..5), 0..20),
    ) {
        let notes: Vec<NoteRecord> = notes
            .into_iter()
            .map(|(id, text)| NoteRecord { admission_id: id, category: "Discharge summary".into(), text })
            .collect();
        let dx: Vec<DiagnosisRow> = dx
            .into_iter()
            .map(|(id, code, seq)| DiagnosisRow { admission_id: id, icd9_code: code, seq_num: seq })
            .collect();
        let a = merge_admissions(&notes, &dx);
        let b = merge_admissions(&notes, &dx);
        prop_assert_eq!(&a.records, &b.records);
        let note_ids: BTreeSet<&str> = notes.iter().map(|n| n.admission_id.as_str()).collect();
        let dx_ids: BTreeSet<&str> = dx.iter().map(|d| d.admission_id.as_str()).collect();
        prop_assert!(a.records.len() <= note_ids.len().min(dx_ids.len()));
        for r in &a.records {
            prop_assert!(!r.codes.is_empty());
        }
    }

    #[test]
    fn replaying_the_log_restores_review_state(
        steps in proptest::collection::vec((0usize..4, any::<bool>()), 0..12),
    ) {
        let run = review_run();
        let queue: Vec<String> = {
            let dir = tempfile::tempdir().unwrap();
            let s = ReviewState::open(run.clone(), dir.path().join("log.jsonl")).unwrap();
            s.items().iter().map(|i| i.doc_id.clone()).collect()
        };
        prop_assume!(!queue.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.jsonl");
        let mut live = ReviewState::open(run.clone(), &log).unwrap();
        for (i, (pick, confirm)) in steps.iter().enumerate() {
            let req = DecisionRequest {
                doc_id: queue[pick % queue.len()].clone(),
                verdict: if *confirm { Verdict::Confirm } else { Verdict::Override },
                final_class: None,
                coder_id: format!("c{}", i % 3),
            };
            live.submit(&req, format!("2026-01-01T00:00:{i:02}Z")).unwrap();
        }
        let replayed = ReviewState::open(run, &log).unwrap();
        prop_assert_eq!(replayed.log_len(), steps.len());
        prop_assert_eq!(replayed.export_validated(), live.export_validated());
        let all = QueueFilter { page_size: Some(100), ..QueueFilter::default() };
        prop_assert_eq!(replayed.list_items(&all).unwrap(), live.list_items(&all).unwrap());
    }
}

/// Ten documents; band (1, 2] holds four of them with two errors.
fn review_run() -> CategorizationRun {
    let w = Weight::from_hundredths;
    let docs = [
        ("a", 50, 0),
        ("b", 80, 0),
        ("c", 90, 1),
        ("d", 120, 1),
        ("e", 130, 0),
        ("f", 150, 1),
        ("g", 170, 0),
        ("h", 250, 1),
        ("i", 260, 1),
        ("j", 280, 1),
    ];
    let mut reports: Vec<ScoreReport> = docs
        .iter()
        .map(|(id, sum, _)| ScoreReport {
            doc_id: id.to_string(),
            matched: vec![],
            sum: w(*sum),
            predicted: None,
            band: None,
        })
        .collect();
    let labels: BTreeMap<String, u8> = docs.iter().map(|(id, _, l)| (id.to_string(), *l)).collect();
    let bands = Band::from_edges(&[w(0), w(100), w(200), w(300)]).unwrap();
    let tau = w(100);
    let band_stats = band_analysis(&reports, &labels, &bands, tau, 0.25).unwrap();
    classify_reports(&mut reports, tau, &bands);
    assert!(reports.iter().any(|r| r.predicted == Some(Class::Chapter)));
    CategorizationRun {
        tau,
        band_stats,
        reports,
        texts: BTreeMap::new(),
    }
}
