mod common;

use common::{bernoulli, rng, vocab};
use ctxzsl::metrics::{
    aggregate, average_precision, binarize, evaluate, ranking_loss, roc_auc, BinarizePolicy,
};
use ctxzsl::nalgebra::DMatrix;
use ctxzsl::{AnnotationMatrix, ScoreMatrix};
use proptest::prelude::*;
use rand::Rng;

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (3usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(0u8..2, n)
                .prop_filter("both classes", |y| y.contains(&0) && y.contains(&1)),
        )
    })
}

proptest! {
    #[test]
    fn auc_and_ap_ignore_monotone_transforms((s, y) in labelled()) {
        let t: Vec<f64> = s.iter().map(|v| (v / 3.0).exp() + 7.0).collect();
        prop_assert!((roc_auc(&s, &y).unwrap() - roc_auc(&t, &y).unwrap()).abs() < 1e-12);
        prop_assert!((average_precision(&s, &y).unwrap() - average_precision(&t, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_is_symmetric_under_complement((s, y) in labelled()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        prop_assert!((roc_auc(&s, &y).unwrap() - roc_auc(&neg, &flipped).unwrap()).abs() < 1e-12);
        prop_assert!((roc_auc(&s, &y).unwrap() + roc_auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_the_unit_interval((s, y) in labelled()) {
        let auc = roc_auc(&s, &y).unwrap();
        let ap = average_precision(&s, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }
}

#[test]
fn random_scores_are_calibrated() {
    let mut r = rng(40);
    let trials = 1000;
    let mut auc = 0.0;
    let mut ap = 0.0;
    let mut base = 0.0;
    for _ in 0..trials {
        let y: Vec<u8> = loop {
            let y: Vec<u8> = (0..50).map(|_| u8::from(r.random::<f64>() < 0.3)).collect();
            if y.contains(&0) && y.contains(&1) {
                break y;
            }
        };
        let s: Vec<f64> = (0..50).map(|_| r.random()).collect();
        auc += roc_auc(&s, &y).unwrap();
        ap += average_precision(&s, &y).unwrap();
        // expected AP of a uniformly random ranking of k positives among n
        let (n, k) = (50.0, y.iter().filter(|&&v| v == 1).count() as f64);
        let harmonic: f64 = (1..=50).map(|i| 1.0 / i as f64).sum();
        base += (k - 1.0) / (n - 1.0) + (n - k) * harmonic / (n * (n - 1.0));
    }
    let n = trials as f64;
    assert!((auc / n - 0.5).abs() < 0.01, "{}", auc / n);
    assert!(
        (ap / n - base / n).abs() < 0.01,
        "{} vs {}",
        ap / n,
        base / n
    );
}

#[test]
fn perfect_scores_give_perfect_metrics() {
    let mut r = rng(41);
    let y = loop {
        let y = bernoulli(&mut r, 4, 20, 0.4);
        if y.row_iter()
            .all(|row| row.iter().any(|&v| v == 1) && row.iter().any(|&v| v == 0))
            && y.column_iter()
                .all(|c| c.iter().any(|&v| v == 1) && c.iter().any(|&v| v == 0))
        {
            break y;
        }
    };
    let ids = common::ids(20);
    let gt = AnnotationMatrix::new(vocab(4, "n"), ids.clone(), y.clone()).unwrap();
    let scores = ScoreMatrix::new(vocab(4, "n"), ids, y.map(f64::from)).unwrap();
    let report = evaluate(
        &scores,
        &gt,
        None,
        BinarizePolicy::FixedThreshold { threshold: 0.5 },
    )
    .unwrap();
    assert_eq!(report.auc, 1.0);
    assert_eq!(report.label_ap, 1.0);
    assert_eq!(report.example_ap, 1.0);
    assert_eq!(report.hamming, 0.0);
    assert_eq!(report.ranking, 0.0);
}

#[test]
fn top_k_marks_exactly_k_per_instance() {
    let mut r = rng(42);
    let s = ScoreMatrix::new(
        vocab(5, "n"),
        common::ids(30),
        common::gaussian(&mut r, 5, 30),
    )
    .unwrap();
    let b = binarize(&s, BinarizePolicy::TopK { k: 2 }).unwrap();
    assert!(b
        .column_iter()
        .all(|c| c.iter().map(|&v| usize::from(v)).sum::<usize>() == 2));
    assert!(binarize(&s, BinarizePolicy::TopK { k: 6 }).is_err());
}

#[test]
fn policies_parse_from_strings() {
    for (text, policy) in [
        ("uniform", BinarizePolicy::UniformThreshold),
        (
            "fixed:0.25",
            BinarizePolicy::FixedThreshold { threshold: 0.25 },
        ),
        ("topk:3", BinarizePolicy::TopK { k: 3 }),
    ] {
        assert_eq!(text.parse::<BinarizePolicy>().unwrap(), policy);
        assert_eq!(
            policy.to_string().parse::<BinarizePolicy>().unwrap(),
            policy
        );
    }
    assert!("topk:x".parse::<BinarizePolicy>().is_err());
}

#[test]
fn ranking_loss_skips_single_class_instances() {
    let scores = vec![vec![0.9, 0.1], vec![0.5, 0.5], vec![0.2, 0.8]];
    let gt = vec![vec![1, 0], vec![1, 1], vec![1, 0]];
    let r = ranking_loss(&scores, &gt).unwrap();
    assert_eq!(r.skipped, 1);
    assert_eq!(r.value, 0.5);
}

#[test]
fn aggregate_uses_population_spread() {
    let mut r = rng(43);
    let y = DMatrix::from_row_slice(2, 4, &[1, 0, 1, 0, 0, 1, 0, 1]);
    let gt = AnnotationMatrix::new(vocab(2, "n"), common::ids(4), y).unwrap();
    let reports: Vec<_> = (0..3)
        .map(|_| {
            let s = ScoreMatrix::new(
                vocab(2, "n"),
                common::ids(4),
                common::gaussian(&mut r, 2, 4),
            )
            .unwrap();
            evaluate(&s, &gt, None, BinarizePolicy::default()).unwrap()
        })
        .collect();
    let agg = aggregate(&reports).unwrap();
    let aucs: Vec<f64> = reports.iter().map(|r| r.auc).collect();
    let mean = aucs.iter().sum::<f64>() / 3.0;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0;
    assert!((agg.auc.mean - mean).abs() < 1e-15);
    assert!((agg.auc.std - var.sqrt()).abs() < 1e-15);
    assert_eq!(agg.per_split.len(), 3);
}
