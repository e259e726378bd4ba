#![allow(dead_code)]

use ctxzsl::nalgebra::DMatrix;
use ctxzsl::{AnnotationMatrix, AttributeEmbeddings, AttributeVocabulary, FeatureMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

pub fn bernoulli(r: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> DMatrix<u8> {
    DMatrix::from_fn(rows, cols, |_, _| u8::from(r.random::<f64>() < p))
}

pub fn vocab(n: usize, prefix: &str) -> AttributeVocabulary {
    AttributeVocabulary::new((0..n).map(|i| format!("{prefix}{i:03}"))).unwrap()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("i{i:05}")).collect()
}

pub fn embeddings(r: &mut ChaCha8Rng, n: usize, dim: usize, prefix: &str) -> AttributeEmbeddings {
    AttributeEmbeddings::new(vocab(n, prefix), gaussian(r, n, dim)).unwrap()
}

pub fn annotations(r: &mut ChaCha8Rng, p: usize, n: usize, rate: f64) -> AnnotationMatrix {
    AnnotationMatrix::new(vocab(p, "a"), ids(n), bernoulli(r, p, n, rate)).unwrap()
}

pub fn features(r: &mut ChaCha8Rng, dim: usize, n: usize) -> FeatureMatrix {
    FeatureMatrix::new(ids(n), gaussian(r, dim, n)).unwrap()
}

pub fn row<T: Copy + PartialEq + std::fmt::Debug + 'static>(m: &DMatrix<T>, r: usize) -> Vec<T> {
    m.row(r).iter().copied().collect()
}
