//! Shared domain types.
//!
//! Matrices follow one convention throughout: attributes index rows and
//! instances index columns. Instance identifiers are opaque strings whose
//! canonical order is lexicographic.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums of a conditional matrix must be within this of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Ordered set of attribute names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AttributeVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl AttributeVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Empty("attribute vocabulary"));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "attribute `{name}` appears twice in the vocabulary"
                )));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Positions of `other`'s names in `self`, in `other`'s order.
    pub fn positions_of(&self, other: &AttributeVocabulary) -> Result<Vec<usize>> {
        other
            .names
            .iter()
            .map(|n| {
                self.position(n)
                    .ok_or_else(|| Error::UnknownAttribute(n.clone()))
            })
            .collect()
    }
}

impl TryFrom<Vec<String>> for AttributeVocabulary {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<AttributeVocabulary> for Vec<String> {
    fn from(v: AttributeVocabulary) -> Self {
        v.names
    }
}

fn check_unique_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

fn column_positions(ids: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    let lookup: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    wanted
        .iter()
        .map(|id| {
            lookup
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::MissingId(id.clone()))
        })
        .collect()
}

/// Real `dim x N` matrix of instance features, one column per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    instance_ids: Vec<String>,
    data: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(instance_ids: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() != instance_ids.len() {
            return Err(Error::DimensionMismatch {
                what: "feature columns",
                expected: instance_ids.len(),
                found: data.ncols(),
            });
        }
        check_unique_ids(&instance_ids)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self { instance_ids, data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Columns for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let cols = column_positions(&self.instance_ids, ids)?;
        Ok(Self {
            instance_ids: ids.to_vec(),
            data: self.data.select_columns(cols.iter()),
        })
    }

    /// Scales every column to unit L2 norm; all-zero columns are left alone.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        Self {
            instance_ids: self.instance_ids.clone(),
            data,
        }
    }
}

/// Binary multi-label matrix, attributes by instances.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    vocabulary: AttributeVocabulary,
    instance_ids: Vec<String>,
    cells: DMatrix<u8>,
}

impl AnnotationMatrix {
    pub fn new(
        vocabulary: AttributeVocabulary,
        instance_ids: Vec<String>,
        cells: DMatrix<u8>,
    ) -> Result<Self> {
        if cells.nrows() != vocabulary.len() {
            return Err(Error::DimensionMismatch {
                what: "annotation rows",
                expected: vocabulary.len(),
                found: cells.nrows(),
            });
        }
        if cells.ncols() != instance_ids.len() {
            return Err(Error::DimensionMismatch {
                what: "annotation columns",
                expected: instance_ids.len(),
                found: cells.ncols(),
            });
        }
        check_unique_ids(&instance_ids)?;
        if let Some(v) = cells.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinary {
                line: 0,
                value: v.to_string(),
            });
        }
        Ok(Self {
            vocabulary,
            instance_ids,
            cells,
        })
    }

    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.vocabulary
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn cells(&self) -> &DMatrix<u8> {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn get(&self, attribute: usize, instance: usize) -> bool {
        self.cells[(attribute, instance)] == 1
    }

    /// Columns for `ids`, in that order.
    pub fn select_instances(&self, ids: &[String]) -> Result<Self> {
        let cols = column_positions(&self.instance_ids, ids)?;
        Ok(Self {
            vocabulary: self.vocabulary.clone(),
            instance_ids: ids.to_vec(),
            cells: self.cells.select_columns(cols.iter()),
        })
    }

    /// Rows for the attributes of `vocabulary`, in its order.
    pub fn select_attributes(&self, vocabulary: &AttributeVocabulary) -> Result<Self> {
        let rows = self.vocabulary.positions_of(vocabulary)?;
        Ok(Self {
            vocabulary: vocabulary.clone(),
            instance_ids: self.instance_ids.clone(),
            cells: self.cells.select_rows(rows.iter()),
        })
    }

    /// Drops every instance whose id is in `excluded`.
    pub fn without_ids(&self, excluded: &HashSet<String>) -> Self {
        let keep: Vec<String> = self
            .instance_ids
            .iter()
            .filter(|id| !excluded.contains(*id))
            .cloned()
            .collect();
        self.select_instances(&keep)
            .expect("kept ids come from this matrix")
    }

    pub fn positives_in_column(&self, instance: usize) -> usize {
        self.cells
            .column(instance)
            .iter()
            .filter(|&&v| v == 1)
            .count()
    }
}

/// Embeddings of an attribute vocabulary, one row per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeEmbeddings {
    vocabulary: AttributeVocabulary,
    vectors: DMatrix<f64>,
}

impl AttributeEmbeddings {
    pub fn new(vocabulary: AttributeVocabulary, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() != vocabulary.len() {
            return Err(Error::DimensionMismatch {
                what: "embedding rows",
                expected: vocabulary.len(),
                found: vectors.nrows(),
            });
        }
        if vectors.ncols() == 0 {
            return Err(Error::Empty("embedding dimension"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Self {
            vocabulary,
            vectors,
        })
    }

    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.vocabulary
    }

    /// `len x dim`, row `i` is the vector of attribute `i`.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }
}

/// Known/novel attribute partition plus the induced instance partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub split_index: u64,
    pub known: AttributeVocabulary,
    pub novel: AttributeVocabulary,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn new(
        seed: u64,
        split_index: u64,
        known: AttributeVocabulary,
        novel: AttributeVocabulary,
        train_ids: Vec<String>,
        test_ids: Vec<String>,
    ) -> Result<Self> {
        let split = Self {
            seed,
            split_index,
            known,
            novel,
            train_ids,
            test_ids,
        };
        split.check_disjoint()?;
        Ok(split)
    }

    fn check_disjoint(&self) -> Result<()> {
        if let Some(n) = self.novel.names().iter().find(|n| self.known.contains(n)) {
            return Err(Error::InvalidConfig(format!(
                "attribute `{n}` is both known and novel"
            )));
        }
        let train: HashSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        if train.len() != self.train_ids.len() {
            return Err(Error::InvalidConfig("duplicate training id".into()));
        }
        if let Some(id) = self.test_ids.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::InvalidConfig(format!(
                "instance `{id}` is in both train and test"
            )));
        }
        Ok(())
    }

    /// Checks that known and novel together cover exactly `vocabulary`.
    pub fn check_covers(&self, vocabulary: &AttributeVocabulary) -> Result<()> {
        self.check_disjoint()?;
        if self.known.len() + self.novel.len() != vocabulary.len() {
            return Err(Error::VocabularyMismatch(format!(
                "split has {} known + {} novel attributes, vocabulary has {}",
                self.known.len(),
                self.novel.len(),
                vocabulary.len()
            )));
        }
        for n in self.known.names().iter().chain(self.novel.names()) {
            if !vocabulary.contains(n) {
                return Err(Error::VocabularyMismatch(format!(
                    "split attribute `{n}` is not in the annotation vocabulary"
                )));
            }
        }
        Ok(())
    }
}

/// Row-stochastic `Q x P` matrix of p(novel q | known p).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMatrix {
    novel: AttributeVocabulary,
    known: AttributeVocabulary,
    probs: DMatrix<f64>,
}

impl ConditionalMatrix {
    pub fn new(
        novel: AttributeVocabulary,
        known: AttributeVocabulary,
        probs: DMatrix<f64>,
    ) -> Result<Self> {
        if probs.nrows() != novel.len() || probs.ncols() != known.len() {
            return Err(Error::InvalidConditional(format!(
                "shape {}x{} does not match {} novel x {} known",
                probs.nrows(),
                probs.ncols(),
                novel.len(),
                known.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConditional(
                "entries must lie in [0, 1]".into(),
            ));
        }
        for (q, row) in probs.row_iter().enumerate() {
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidConditional(format!(
                    "row `{}` sums to {sum}",
                    novel.name(q)
                )));
            }
        }
        Ok(Self {
            novel,
            known,
            probs,
        })
    }

    pub fn novel(&self) -> &AttributeVocabulary {
        &self.novel
    }

    pub fn known(&self) -> &AttributeVocabulary {
        &self.known
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

/// Real-valued scores, attributes by instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    vocabulary: AttributeVocabulary,
    instance_ids: Vec<String>,
    scores: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn new(
        vocabulary: AttributeVocabulary,
        instance_ids: Vec<String>,
        scores: DMatrix<f64>,
    ) -> Result<Self> {
        if scores.nrows() != vocabulary.len() {
            return Err(Error::DimensionMismatch {
                what: "score rows",
                expected: vocabulary.len(),
                found: scores.nrows(),
            });
        }
        if scores.ncols() != instance_ids.len() {
            return Err(Error::DimensionMismatch {
                what: "score columns",
                expected: instance_ids.len(),
                found: scores.ncols(),
            });
        }
        check_unique_ids(&instance_ids)?;
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score matrix"));
        }
        Ok(Self {
            vocabulary,
            instance_ids,
            scores,
        })
    }

    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.vocabulary
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// Columns for `ids`, in that order.
    pub fn select_instances(&self, ids: &[String]) -> Result<Self> {
        let cols = column_positions(&self.instance_ids, ids)?;
        Ok(Self {
            vocabulary: self.vocabulary.clone(),
            instance_ids: ids.to_vec(),
            scores: self.scores.select_columns(cols.iter()),
        })
    }

    /// Rows for the attributes of `vocabulary`, in its order.
    pub fn select_attributes(&self, vocabulary: &AttributeVocabulary) -> Result<Self> {
        let rows = self.vocabulary.positions_of(vocabulary)?;
        Ok(Self {
            vocabulary: vocabulary.clone(),
            instance_ids: self.instance_ids.clone(),
            scores: self.scores.select_rows(rows.iter()),
        })
    }
}

/// Reorders both inputs to the lexicographic order of their shared ids.
///
/// Every id must occur in both inputs; the first id found on only one side
/// is reported.
pub fn validate_aligned(
    features: &FeatureMatrix,
    annotations: &AnnotationMatrix,
) -> Result<(FeatureMatrix, AnnotationMatrix)> {
    check_unique_ids(features.instance_ids())?;
    check_unique_ids(annotations.instance_ids())?;
    let f_ids: HashSet<&str> = features.instance_ids().iter().map(String::as_str).collect();
    let a_ids: HashSet<&str> = annotations
        .instance_ids()
        .iter()
        .map(String::as_str)
        .collect();
    if let Some(id) = features
        .instance_ids()
        .iter()
        .find(|id| !a_ids.contains(id.as_str()))
    {
        return Err(Error::MissingId(id.clone()));
    }
    if let Some(id) = annotations
        .instance_ids()
        .iter()
        .find(|id| !f_ids.contains(id.as_str()))
    {
        return Err(Error::MissingId(id.clone()));
    }
    if f_ids.is_empty() {
        return Err(Error::MissingId("<no shared instance ids>".into()));
    }
    let mut order: Vec<String> = features.instance_ids().to_vec();
    order.sort();
    Ok((
        features.select(&order)?,
        annotations.select_instances(&order)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn vocab(v: &[&str]) -> AttributeVocabulary {
        AttributeVocabulary::new(v.iter().copied()).unwrap()
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_empty() {
        assert!(AttributeVocabulary::new(["a", "a"]).is_err());
        assert!(AttributeVocabulary::new(Vec::<String>::new()).is_err());
        let v = vocab(&["b", "a"]);
        assert_eq!(v.position("a"), Some(1));
        assert_eq!(v.name(0), "b");
    }

    #[test]
    fn aligned_pair_is_sorted() {
        let f = FeatureMatrix::new(ids(&["b", "a"]), DMatrix::from_row_slice(1, 2, &[2.0, 1.0]))
            .unwrap();
        let a = AnnotationMatrix::new(
            vocab(&["x"]),
            ids(&["a", "b"]),
            DMatrix::from_row_slice(1, 2, &[1, 0]),
        )
        .unwrap();
        let (f2, a2) = validate_aligned(&f, &a).unwrap();
        assert_eq!(f2.instance_ids(), &ids(&["a", "b"])[..]);
        assert_eq!(f2.data()[(0, 0)], 1.0);
        assert_eq!(a2.instance_ids(), f2.instance_ids());
        assert_eq!(a2.cells()[(0, 0)], 1);

        let (f3, a3) = validate_aligned(&f2, &a2).unwrap();
        assert_eq!(f3, f2);
        assert_eq!(a3, a2);
    }

    #[test]
    fn aligned_reports_missing_id() {
        let f = FeatureMatrix::new(ids(&["a", "c"]), DMatrix::zeros(1, 2)).unwrap();
        let a = AnnotationMatrix::new(vocab(&["x"]), ids(&["a"]), DMatrix::zeros(1, 1)).unwrap();
        match validate_aligned(&f, &a) {
            Err(Error::MissingId(id)) => assert_eq!(id, "c"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aligned_empty_intersection_is_missing_id() {
        let f = FeatureMatrix::new(ids(&["a"]), DMatrix::zeros(1, 1)).unwrap();
        let a = AnnotationMatrix::new(vocab(&["x"]), ids(&["b"]), DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(validate_aligned(&f, &a), Err(Error::MissingId(_))));

        let f = FeatureMatrix::new(vec![], DMatrix::zeros(1, 0)).unwrap();
        let a = AnnotationMatrix::new(vocab(&["x"]), vec![], DMatrix::zeros(1, 0)).unwrap();
        assert!(matches!(validate_aligned(&f, &a), Err(Error::MissingId(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = FeatureMatrix::new(ids(&["a", "a"]), DMatrix::zeros(1, 2));
        assert!(matches!(r, Err(Error::DuplicateId(_))));
    }

    #[test]
    fn conditional_checks_rows() {
        let ok = ConditionalMatrix::new(
            vocab(&["q"]),
            vocab(&["a", "b"]),
            DMatrix::from_row_slice(1, 2, &[0.25, 0.75]),
        );
        assert!(ok.is_ok());
        let bad = ConditionalMatrix::new(
            vocab(&["q"]),
            vocab(&["a", "b"]),
            DMatrix::from_row_slice(1, 2, &[0.25, 0.7]),
        );
        assert!(matches!(bad, Err(Error::InvalidConditional(_))));
    }

    #[test]
    fn split_rejects_overlap() {
        let r = DatasetSplit::new(
            0,
            0,
            vocab(&["a", "b"]),
            vocab(&["b"]),
            ids(&["1"]),
            ids(&["2"]),
        );
        assert!(r.is_err());
        let r = DatasetSplit::new(0, 0, vocab(&["a"]), vocab(&["b"]), ids(&["1"]), ids(&["1"]));
        assert!(r.is_err());
        let s = DatasetSplit::new(0, 0, vocab(&["a"]), vocab(&["b"]), ids(&["1"]), ids(&["2"]))
            .unwrap();
        assert!(s.check_covers(&vocab(&["b", "a"])).is_ok());
        assert!(s.check_covers(&vocab(&["a", "b", "c"])).is_err());
    }
}
