//! Comparison zero-shot models: WVE, ESZSL, ExDAP and DMP.
//!
//! Shapes: features are `D_x x N`, embeddings are `attributes x D_v`, the
//! learned maps are `D_x x D_v`. An instance `x` projects into the word
//! space as `M' x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationMatrix, AttributeEmbeddings, FeatureMatrix, ScoreMatrix};
use crate::error::{Error, Result};
use crate::linalg::{add_ridge, solve_symmetric};

/// Largest label set DMP will enumerate the power set of.
pub const DMP_MAX_LABELS: usize = 20;

/// Default ridge strength for the embedding regressor.
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-3;

/// Ridge map from features into the word-vector space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRegressor {
    pub m: DMatrix<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EszslModel {
    pub m: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl EszslModel {
    /// The tied third regulariser, `lambda1 * lambda2`.
    pub fn lambda3(&self) -> f64 {
        self.lambda1 * self.lambda2
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    kind: String,
    rows: usize,
    cols: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda2: Option<f64>,
    #[serde(rename = "M")]
    m: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl EmbeddingRegressor {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(MapFile {
            kind: "embedding_regressor".into(),
            rows: self.m.nrows(),
            cols: self.m.ncols(),
            lambda: Some(self.lambda),
            lambda1: None,
            lambda2: None,
            m: row_major(&self.m),
        })
        .expect("plain numeric struct")
    }
}

impl EszslModel {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(MapFile {
            kind: "eszsl".into(),
            rows: self.m.nrows(),
            cols: self.m.ncols(),
            lambda: None,
            lambda1: Some(self.lambda1),
            lambda2: Some(self.lambda2),
            m: row_major(&self.m),
        })
        .expect("plain numeric struct")
    }
}

fn check_training(
    features: &FeatureMatrix,
    annotations: &AnnotationMatrix,
    known: &AttributeEmbeddings,
) -> Result<()> {
    if features.instance_ids() != annotations.instance_ids() {
        return Err(Error::InvalidConfig(
            "features and annotations are not aligned".into(),
        ));
    }
    if annotations.vocabulary() != known.vocabulary() {
        return Err(Error::VocabularyMismatch(
            "annotation rows and embeddings cover different attributes".into(),
        ));
    }
    Ok(())
}

fn positive_lambda(lambda: f64, name: &str) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be positive, got {lambda}"
        )))
    }
}

/// `(X X' + lambda I)^-1 X B`, solved in whichever of the primal
/// (`D_x x D_x`) or dual (`N x N`) forms is smaller.
fn ridge_left(x: &DMatrix<f64>, lambda: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, n) = x.shape();
    if d <= n {
        let a = add_ridge(x * x.transpose(), lambda);
        solve_symmetric(&a, &(x * b), "ridge normal equations")
    } else {
        let a = add_ridge(x.transpose() * x, lambda);
        Ok(x * solve_symmetric(&a, b, "dual ridge normal equations")?)
    }
}

fn annotations_f64(annotations: &AnnotationMatrix) -> DMatrix<f64> {
    annotations.cells().map(f64::from)
}

/// Minimises `sum_i |M' x_i - V y_i|^2 + lambda |M|_F^2` in closed form.
pub fn exdap_train(
    features: &FeatureMatrix,
    annotations: &AnnotationMatrix,
    known: &AttributeEmbeddings,
    lambda: f64,
) -> Result<EmbeddingRegressor> {
    check_training(features, annotations, known)?;
    positive_lambda(lambda, "lambda")?;
    // row i of the target is (V y_i)'
    let targets = annotations_f64(annotations).transpose() * known.vectors();
    let m = ridge_left(features.data(), lambda, &targets)?;
    Ok(EmbeddingRegressor { m, lambda })
}

/// WVE shares the ExDAP trainer: ridge onto the summed positive vectors.
pub fn wve_train(
    features: &FeatureMatrix,
    annotations: &AnnotationMatrix,
    known: &AttributeEmbeddings,
    lambda: f64,
) -> Result<EmbeddingRegressor> {
    exdap_train(features, annotations, known, lambda)
}

impl EmbeddingRegressor {
    /// `M' x` for a single instance.
    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.m.nrows() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.m.nrows(),
                found: x.len(),
            });
        }
        Ok(self.m.tr_mul(&DVector::from_column_slice(x)))
    }

    /// `M' X`, one projected column per instance.
    pub fn project_all(&self, features: &FeatureMatrix) -> Result<DMatrix<f64>> {
        if features.dim() != self.m.nrows() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.m.nrows(),
                found: features.dim(),
            });
        }
        Ok(self.m.tr_mul(features.data()))
    }
}

fn check_word_dim(reg_cols: usize, novel: &AttributeEmbeddings) -> Result<()> {
    if novel.dim() != reg_cols {
        return Err(Error::DimensionMismatch {
            what: "word-vector dimension",
            expected: reg_cols,
            found: novel.dim(),
        });
    }
    Ok(())
}

/// Ridge decode of projected columns: `(V'V + lambda I)^-1 V' P`.
fn ridge_decode(
    projections: &DMatrix<f64>,
    novel: &AttributeEmbeddings,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let e = novel.vectors();
    let gram = add_ridge(e * e.transpose(), lambda);
    let rhs = e * projections;
    if lambda == 0.0 {
        return gram
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular("novel embedding Gram matrix with lambda = 0".into()));
    }
    solve_symmetric(&gram, &rhs, "ridge decode")
}

/// Continuous ExDAP scores for one instance.
pub fn exdap_predict(
    x: &[f64],
    reg: &EmbeddingRegressor,
    novel: &AttributeEmbeddings,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_word_dim(reg.m.ncols(), novel)?;
    let p = reg.project(x)?;
    let y = ridge_decode(
        &DMatrix::from_column_slice(p.len(), 1, p.as_slice()),
        novel,
        lambda,
    )?;
    Ok(y.as_slice().to_vec())
}

pub fn exdap_scores(
    features: &FeatureMatrix,
    reg: &EmbeddingRegressor,
    novel: &AttributeEmbeddings,
    lambda: f64,
) -> Result<ScoreMatrix> {
    check_word_dim(reg.m.ncols(), novel)?;
    let y = ridge_decode(&reg.project_all(features)?, novel, lambda)?;
    ScoreMatrix::new(
        novel.vocabulary().clone(),
        features.instance_ids().to_vec(),
        y,
    )
}

/// `-|M' x - v_q|^2` per novel attribute.
pub fn wve_predict(
    x: &[f64],
    reg: &EmbeddingRegressor,
    novel: &AttributeEmbeddings,
) -> Result<Vec<f64>> {
    check_word_dim(reg.m.ncols(), novel)?;
    let p = reg.project(x)?;
    Ok(novel
        .vectors()
        .row_iter()
        .map(|v| -(v.transpose() - &p).norm_squared())
        .collect())
}

pub fn wve_scores(
    features: &FeatureMatrix,
    reg: &EmbeddingRegressor,
    novel: &AttributeEmbeddings,
) -> Result<ScoreMatrix> {
    check_word_dim(reg.m.ncols(), novel)?;
    let proj = reg.project_all(features)?;
    let e = novel.vectors();
    let scores = DMatrix::from_fn(e.nrows(), proj.ncols(), |q, i| {
        -(e.row(q).transpose() - proj.column(i)).norm_squared()
    });
    ScoreMatrix::new(
        novel.vocabulary().clone(),
        features.instance_ids().to_vec(),
        scores,
    )
}

/// Euclidean distance between `p` and the sum of the selected embeddings.
fn label_set_distance(p: &[f64], e: &DMatrix<f64>, y: &[u8]) -> f64 {
    let mut sum = vec![0.0; p.len()];
    for (q, &on) in y.iter().enumerate() {
        if on == 1 {
            for (s, v) in sum.iter_mut().zip(e.row(q).iter()) {
                *s += v;
            }
        }
    }
    p.iter()
        .zip(&sum)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn bits(mask: u32, q: usize) -> Vec<u8> {
    (0..q).map(|k| ((mask >> k) & 1) as u8).collect()
}

/// Walks the power set in Gray-code order, calling `visit(mask, f)` with
/// `f = |p - V y|^2 - |p|^2` maintained incrementally.
fn gray_walk(b: &[f64], gram: &DMatrix<f64>, mut visit: impl FnMut(u32, f64)) {
    let q = b.len();
    let mut h = vec![0.0; q];
    let mut mask = 0u32;
    let mut f = 0.0;
    visit(0, 0.0);
    for i in 1u64..(1u64 << q) {
        let k = i.trailing_zeros() as usize;
        if mask & (1 << k) == 0 {
            f += gram[(k, k)] + 2.0 * h[k] - 2.0 * b[k];
            for (j, hj) in h.iter_mut().enumerate() {
                *hj += gram[(j, k)];
            }
        } else {
            for (j, hj) in h.iter_mut().enumerate() {
                *hj -= gram[(j, k)];
            }
            f -= gram[(k, k)] + 2.0 * h[k] - 2.0 * b[k];
        }
        mask ^= 1 << k;
        visit(mask, f);
    }
}

/// Nearest label set to a projected instance over the whole power set.
///
/// Ties go to fewer positives, then to the lexicographically smaller
/// vector read from the first attribute.
pub fn dmp_decode(projection: &[f64], novel: &AttributeEmbeddings) -> Result<Vec<u8>> {
    let q = novel.len();
    if q > DMP_MAX_LABELS {
        return Err(Error::PowerSetTooLarge {
            q,
            max: DMP_MAX_LABELS,
        });
    }
    if projection.len() != novel.dim() {
        return Err(Error::DimensionMismatch {
            what: "word-vector dimension",
            expected: novel.dim(),
            found: projection.len(),
        });
    }
    let e = novel.vectors();
    let p = DVector::from_column_slice(projection);
    let b: Vec<f64> = (e * &p).iter().copied().collect();
    let gram = e * e.transpose();

    let mut best = f64::INFINITY;
    gray_walk(&b, &gram, |_, f| best = best.min(f));
    // the incremental sums drift; settle near-ties on exact distances
    let slack = 1e-9 * (1.0 + best.abs() + p.norm_squared());
    let mut near = Vec::new();
    gray_walk(&b, &gram, |mask, f| {
        if f <= best + slack {
            near.push(mask);
        }
    });
    let winner = near
        .into_iter()
        .map(|mask| {
            let y = bits(mask, q);
            (label_set_distance(projection, e, &y), y)
        })
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| positives(&a.1).cmp(&positives(&b.1)))
                .then_with(|| a.1.cmp(&b.1))
        })
        .expect("power set is never empty");
    Ok(winner.1)
}

fn positives(y: &[u8]) -> usize {
    y.iter().filter(|&&v| v == 1).count()
}

pub fn dmp_predict(
    x: &[f64],
    reg: &EmbeddingRegressor,
    novel: &AttributeEmbeddings,
) -> Result<Vec<u8>> {
    check_word_dim(reg.m.ncols(), novel)?;
    let p = reg.project(x)?;
    dmp_decode(p.as_slice(), novel)
}

/// DMP output for every instance: the decoded label sets plus a ranking
/// surrogate.
///
/// The surrogate for attribute `q` is how much flipping bit `q` of the
/// decoded set increases the distance, signed positive when the bit is on
/// and negative when off. Decoded positives therefore always outrank
/// decoded negatives.
pub fn dmp_outputs(
    features: &FeatureMatrix,
    reg: &EmbeddingRegressor,
    novel: &AttributeEmbeddings,
) -> Result<(DMatrix<u8>, ScoreMatrix)> {
    check_word_dim(reg.m.ncols(), novel)?;
    let q = novel.len();
    if q > DMP_MAX_LABELS {
        return Err(Error::PowerSetTooLarge {
            q,
            max: DMP_MAX_LABELS,
        });
    }
    let proj = reg.project_all(features)?;
    let n = proj.ncols();
    let mut labels = DMatrix::zeros(q, n);
    let mut scores = DMatrix::zeros(q, n);
    for i in 0..n {
        let p: Vec<f64> = proj.column(i).iter().copied().collect();
        let y = dmp_decode(&p, novel)?;
        let base = label_set_distance(&p, novel.vectors(), &y);
        for k in 0..q {
            let mut flipped = y.clone();
            flipped[k] ^= 1;
            let gap = (label_set_distance(&p, novel.vectors(), &flipped) - base).max(0.0);
            scores[(k, i)] = if y[k] == 1 { gap } else { -gap };
            labels[(k, i)] = y[k];
        }
    }
    let scores = ScoreMatrix::new(
        novel.vocabulary().clone(),
        features.instance_ids().to_vec(),
        scores,
    )?;
    Ok((labels, scores))
}

/// Closed-form ESZSL,
/// `M = (X X' + lambda1 I)^-1 X Y' V (V'V + lambda2 I)^-1`, the minimiser of
///
/// ```text
/// sum_i |x_i' M V_tr - y_i'|^2 + lambda1 |M V_tr|^2 + lambda2 |X' M|^2
///     + lambda1 lambda2 |M|^2
/// ```
///
/// with `V_tr` the `D_v x P` matrix of known attribute vectors.
pub fn eszsl_train(
    features: &FeatureMatrix,
    annotations: &AnnotationMatrix,
    known: &AttributeEmbeddings,
    lambda1: f64,
    lambda2: f64,
) -> Result<EszslModel> {
    check_training(features, annotations, known)?;
    positive_lambda(lambda1, "lambda1")?;
    positive_lambda(lambda2, "lambda2")?;
    let e = known.vectors();
    let rhs = annotations_f64(annotations).transpose() * e;
    let left = ridge_left(features.data(), lambda1, &rhs)?;
    let right = add_ridge(e.transpose() * e, lambda2);
    let m = solve_symmetric(&right, &left.transpose(), "ESZSL attribute Gram")?.transpose();
    Ok(EszslModel {
        m,
        lambda1,
        lambda2,
    })
}

/// `x' M V_te`.
pub fn eszsl_predict(
    x: &[f64],
    model: &EszslModel,
    novel: &AttributeEmbeddings,
) -> Result<Vec<f64>> {
    if x.len() != model.m.nrows() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            expected: model.m.nrows(),
            found: x.len(),
        });
    }
    check_word_dim(model.m.ncols(), novel)?;
    let p = model.m.tr_mul(&DVector::from_column_slice(x));
    Ok((novel.vectors() * p).iter().copied().collect())
}

pub fn eszsl_scores(
    features: &FeatureMatrix,
    model: &EszslModel,
    novel: &AttributeEmbeddings,
) -> Result<ScoreMatrix> {
    if features.dim() != model.m.nrows() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            expected: model.m.nrows(),
            found: features.dim(),
        });
    }
    check_word_dim(model.m.ncols(), novel)?;
    let scores = novel.vectors() * model.m.tr_mul(features.data());
    ScoreMatrix::new(
        novel.vocabulary().clone(),
        features.instance_ids().to_vec(),
        scores,
    )
}
