mod common;

use approx::assert_relative_eq;
use common::{features, ids, rng, vocab};
use ctxzsl::known_model::{predict_known, train_known, KnownTrainConfig};
use ctxzsl::metrics::roc_auc;
use ctxzsl::nalgebra::DMatrix;
use ctxzsl::{AnnotationMatrix, Error};

fn linear_labels(x: &DMatrix<f64>, p: usize) -> DMatrix<u8> {
    DMatrix::from_fn(p, x.ncols(), |a, i| u8::from(x[(a % x.nrows(), i)] > 0.0))
}

#[test]
fn confidences_lie_on_the_simplex() {
    let mut r = rng(50);
    let f = features(&mut r, 4, 60);
    let ann = AnnotationMatrix::new(vocab(5, "a"), ids(60), linear_labels(f.data(), 5)).unwrap();
    let model = train_known(&f, &ann, &KnownTrainConfig::default()).unwrap();
    let s = predict_known(&model, &f).unwrap();
    for col in s.scores().column_iter() {
        assert!(col.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_relative_eq!(col.sum(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn training_is_deterministic() {
    let mut r = rng(51);
    let f = features(&mut r, 4, 40);
    let ann = AnnotationMatrix::new(vocab(3, "a"), ids(40), linear_labels(f.data(), 3)).unwrap();
    let cfg = KnownTrainConfig::default();
    assert_eq!(
        train_known(&f, &ann, &cfg).unwrap(),
        train_known(&f, &ann, &cfg).unwrap()
    );
}

#[test]
fn separable_attributes_are_ranked_correctly() {
    let mut r = rng(52);
    let f = features(&mut r, 3, 80);
    let y = linear_labels(f.data(), 3);
    let ann = AnnotationMatrix::new(vocab(3, "a"), ids(80), y.clone()).unwrap();
    let model = train_known(&f, &ann, &KnownTrainConfig::default()).unwrap();
    let probs = model.attribute_probabilities(&f).unwrap();
    for a in 0..3 {
        let s: Vec<f64> = probs.row(a).iter().copied().collect();
        let l: Vec<u8> = y.row(a).iter().copied().collect();
        assert!(roc_auc(&s, &l).unwrap() > 0.99);
    }
}

#[test]
fn single_class_attribute_is_rejected() {
    let mut r = rng(53);
    let f = features(&mut r, 3, 10);
    let mut y = linear_labels(f.data(), 2);
    y.row_mut(1).fill(0);
    let ann = AnnotationMatrix::new(vocab(2, "a"), ids(10), y).unwrap();
    let err = train_known(&f, &ann, &KnownTrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::DegenerateAttribute(_)));
}
