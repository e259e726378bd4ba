//! Marginalisation of known-attribute confidences through a conditional.

use std::cmp::Ordering;

use crate::domain::{ConditionalMatrix, ScoreMatrix};
use crate::error::{Error, Result};

/// `score(q, x) = sum_p conditional(q, p) * known(p, x)`.
///
/// The same operation scores known attributes on test data when given a
/// known-by-known conditional.
pub fn marginal_predict(
    known_scores: &ScoreMatrix,
    conditional: &ConditionalMatrix,
) -> Result<ScoreMatrix> {
    if known_scores.vocabulary() != conditional.known() {
        return Err(Error::VocabularyMismatch(
            "known-attribute scores and conditional matrix disagree on the known attributes".into(),
        ));
    }
    let mut out = conditional.probs() * known_scores.scores();
    // a convex combination of [0, 1] values; clamp rounding spill
    out.apply(|v| *v = v.clamp(0.0, 1.0));
    ScoreMatrix::new(
        conditional.novel().clone(),
        known_scores.instance_ids().to_vec(),
        out,
    )
}

/// The conditional row of `novel_name`, largest probability first.
///
/// Ties are broken by known attribute name, ascending.
pub fn explain_novel(
    novel_name: &str,
    conditional: &ConditionalMatrix,
) -> Result<Vec<(String, f64)>> {
    let q = conditional
        .novel()
        .position(novel_name)
        .ok_or_else(|| Error::UnknownAttribute(novel_name.to_string()))?;
    let mut ranked: Vec<(String, f64)> = conditional
        .known()
        .names()
        .iter()
        .cloned()
        .zip(conditional.probs().row(q).iter().copied())
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::domain::AttributeVocabulary;

    fn v(names: &[&str]) -> AttributeVocabulary {
        AttributeVocabulary::new(names.iter().copied()).unwrap()
    }

    fn known(cols: &[&[f64]]) -> ScoreMatrix {
        let p = cols[0].len();
        let flat: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
        ScoreMatrix::new(
            v(&["a", "b"][..p]),
            (0..cols.len()).map(|i| format!("x{i}")).collect(),
            DMatrix::from_column_slice(p, cols.len(), &flat),
        )
        .unwrap()
    }

    fn cond() -> ConditionalMatrix {
        ConditionalMatrix::new(
            v(&["q", "r"]),
            v(&["a", "b"]),
            DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.2, 0.8]),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_picks_column() {
        let out = marginal_predict(&known(&[&[0.0, 1.0]]), &cond()).unwrap();
        assert_eq!(out.scores().column(0).as_slice(), &[0.4, 0.8]);
    }

    #[test]
    fn hand_dot_product() {
        let c = ConditionalMatrix::new(
            v(&["q"]),
            v(&["a", "b", "c"]),
            DMatrix::from_row_slice(1, 3, &[0.6, 0.2, 0.2]),
        )
        .unwrap();
        let k = ScoreMatrix::new(
            v(&["a", "b", "c"]),
            vec!["x".into()],
            DMatrix::from_column_slice(3, 1, &[0.5, 0.5, 0.0]),
        )
        .unwrap();
        let out = marginal_predict(&k, &c).unwrap();
        assert!((out.scores()[(0, 0)] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn uniform_known_gives_row_means() {
        let out = marginal_predict(&known(&[&[0.5, 0.5]]), &cond()).unwrap();
        assert!((out.scores()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((out.scores()[(1, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn vocabulary_mismatch() {
        let k = ScoreMatrix::new(
            v(&["b", "a"]),
            vec!["x".into()],
            DMatrix::from_element(2, 1, 0.5),
        )
        .unwrap();
        assert!(matches!(
            marginal_predict(&k, &cond()),
            Err(Error::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn explain_sorts_and_breaks_ties() {
        let c = ConditionalMatrix::new(
            v(&["violence"]),
            v(&["dining", "fight", "street"]),
            DMatrix::from_row_slice(1, 3, &[0.1, 0.7, 0.2]),
        )
        .unwrap();
        let r = explain_novel("violence", &c).unwrap();
        assert_eq!(
            r,
            vec![
                ("fight".to_string(), 0.7),
                ("street".to_string(), 0.2),
                ("dining".to_string(), 0.1)
            ]
        );

        let t = ConditionalMatrix::new(
            v(&["q"]),
            v(&["zeta", "alpha", "mid"]),
            DMatrix::from_row_slice(1, 3, &[0.25, 0.25, 0.5]),
        )
        .unwrap();
        let names: Vec<String> = explain_novel("q", &t)
            .unwrap()
            .into_iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(names, ["mid", "alpha", "zeta"]);

        assert!(matches!(
            explain_novel("nope", &c),
            Err(Error::UnknownAttribute(_))
        ));
    }
}
