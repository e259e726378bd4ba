//! Known-to-novel conditional matrices.
//!
//! Two sources of context:
//!
//! * text: a temperature softmax over word-vector inner products,
//!   `p(q | p) = softmax_p(v_q . v_p / gamma)`;
//! * visual co-occurrence: a bilinear map `M` fitted so that
//!   `v_i' M v_j ~ log c_ij` on the known attributes, then
//!   `p(q | p) = softmax_p(v_q' M v_p)`.
//!
//! With `M = I` the second reduces exactly to the first at `gamma = 1`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AnnotationMatrix, AttributeEmbeddings, AttributeVocabulary, ConditionalMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, softmax_rows};

/// Symmetric attribute co-occurrence counts `C = Y Y'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    vocabulary: AttributeVocabulary,
    counts: DMatrix<u64>,
    prevalence: Vec<u64>,
}

impl CooccurrenceMatrix {
    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.vocabulary
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    /// Row sums `c_i = sum_j c_ij`.
    pub fn prevalence(&self) -> &[u64] {
        &self.prevalence
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    /// Largest count off the diagonal.
    pub fn max_off_diagonal(&self) -> u64 {
        let p = self.len();
        (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|ij| self.counts[ij])
            .max()
            .unwrap_or(0)
    }
}

pub fn cooccurrence(annotations: &AnnotationMatrix) -> CooccurrenceMatrix {
    let p = annotations.vocabulary().len();
    let mut counts = DMatrix::<u64>::zeros(p, p);
    let cells = annotations.cells();
    let mut active = Vec::with_capacity(p);
    for col in cells.column_iter() {
        active.clear();
        active.extend(
            col.iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(i, _)| i),
        );
        for &i in &active {
            for &j in &active {
                counts[(i, j)] += 1;
            }
        }
    }
    let prevalence = counts.row_iter().map(|r| r.iter().sum()).collect();
    CooccurrenceMatrix {
        vocabulary: annotations.vocabulary().clone(),
        counts,
        prevalence,
    }
}

/// `p(j | i) = c_ij / c_i` over the known vocabulary.
pub fn conditional_from_counts(c: &CooccurrenceMatrix) -> Result<ConditionalMatrix> {
    let p = c.len();
    let mut probs = DMatrix::zeros(p, p);
    for i in 0..p {
        let total = c.prevalence[i];
        if total == 0 {
            return Err(Error::ZeroPrevalence(c.vocabulary.name(i).to_string()));
        }
        for j in 0..p {
            probs[(i, j)] = c.counts[(i, j)] as f64 / total as f64;
        }
    }
    ConditionalMatrix::new(c.vocabulary.clone(), c.vocabulary.clone(), probs)
}

/// Softmax temperature for the text conditional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {gamma}"
            )))
        }
    }

    pub fn gamma(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(0.1)
    }
}

fn check_dims(novel: &AttributeEmbeddings, known: &AttributeEmbeddings) -> Result<()> {
    if novel.dim() != known.dim() {
        return Err(Error::DimensionMismatch {
            what: "embedding dimension",
            expected: known.dim(),
            found: novel.dim(),
        });
    }
    Ok(())
}

/// Row `q` is the softmax over known `p` of `v_q . v_p / gamma`.
pub fn text_conditional(
    novel: &AttributeEmbeddings,
    known: &AttributeEmbeddings,
    temperature: Temperature,
) -> Result<ConditionalMatrix> {
    check_dims(novel, known)?;
    let logits = novel.vectors() * known.vectors().transpose() / temperature.gamma();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("text conditional logits"));
    }
    ConditionalMatrix::new(
        novel.vocabulary().clone(),
        known.vocabulary().clone(),
        softmax_rows(&logits),
    )
}

/// Parameters of the co-occurrence weight `w(c) = (c / c_max)^(alpha * [c <= c_max])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub c_max: f64,
    pub alpha: f64,
}

impl WeightConfig {
    pub const DEFAULT_ALPHA: f64 = 0.75;

    pub fn new(c_max: f64, alpha: f64) -> Result<Self> {
        if !(c_max > 0.0 && c_max.is_finite()) || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight function needs c_max > 0 and alpha > 0, got c_max={c_max}, alpha={alpha}"
            )));
        }
        Ok(Self { c_max, alpha })
    }

    /// `alpha = 0.75`, `c_max = max(1, largest off-diagonal count / 2)`.
    pub fn for_counts(c: &CooccurrenceMatrix) -> Self {
        Self {
            c_max: (c.max_off_diagonal() as f64 / 2.0).max(1.0),
            alpha: Self::DEFAULT_ALPHA,
        }
    }
}

pub fn cooc_weight(c: f64, cfg: &WeightConfig) -> Result<f64> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::NegativeCount(c));
    }
    Ok(if c == 0.0 {
        0.0
    } else if c > cfg.c_max {
        1.0
    } else {
        (c / cfg.c_max).powf(cfg.alpha)
    })
}

/// The weighted least-squares problem
///
/// ```text
/// J(M) = sum_ij w(c_ij) (v_i' M v_j - log c_ij)^2 + lambda |M|_F^2
/// ```
///
/// over the known attributes. Zero counts carry zero weight and are left
/// out; the diagonal is kept.
#[derive(Debug, Clone)]
pub struct BilinearProblem {
    vectors: DMatrix<f64>,
    weights: DMatrix<f64>,
    targets: DMatrix<f64>,
    lambda: f64,
}

impl BilinearProblem {
    pub fn new(
        known: &AttributeEmbeddings,
        counts: &CooccurrenceMatrix,
        lambda: f64,
        cfg: &WeightConfig,
    ) -> Result<Self> {
        if known.vocabulary() != counts.vocabulary() {
            return Err(Error::VocabularyMismatch(
                "embeddings and co-occurrence counts cover different attributes".into(),
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be non-negative, got {lambda}"
            )));
        }
        let p = counts.len();
        let mut weights = DMatrix::zeros(p, p);
        let mut targets = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let c = counts.counts[(i, j)] as f64;
                if c > 0.0 {
                    weights[(i, j)] = cooc_weight(c, cfg)?;
                    targets[(i, j)] = c.ln();
                }
            }
        }
        Ok(Self::from_parts(
            known.vectors().clone(),
            weights,
            targets,
            lambda,
        ))
    }

    /// Raw constructor: `vectors` is `P x D`, `weights` and `targets` are `P x P`.
    pub fn from_parts(
        vectors: DMatrix<f64>,
        weights: DMatrix<f64>,
        targets: DMatrix<f64>,
        lambda: f64,
    ) -> Self {
        Self {
            vectors,
            weights,
            targets,
            lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    fn residuals(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.vectors * m * self.vectors.transpose() - &self.targets
    }

    pub fn objective(&self, m: &DMatrix<f64>) -> f64 {
        let r = self.residuals(m);
        let loss: f64 = r
            .iter()
            .zip(self.weights.iter())
            .map(|(r, w)| w * r * r)
            .sum();
        loss + self.lambda * m.norm_squared()
    }

    /// `sum_ij w_ij 2 v_i (v_i' M v_j - log c_ij) v_j' + 2 lambda M`.
    pub fn gradient(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let wr = self.residuals(m).component_mul(&self.weights);
        (self.vectors.transpose() * wr * &self.vectors) * 2.0 + m * (2.0 * self.lambda)
    }

    /// Upper bound on the gradient's Lipschitz constant,
    /// `2 (max w * lambda_max(V'V)^2 + lambda)`.
    pub fn lipschitz_bound(&self) -> f64 {
        let gram = self.vectors.transpose() * &self.vectors;
        let top = max_eigenvalue(&gram).max(0.0);
        let wmax = self.weights.iter().copied().fold(0.0, f64::max);
        2.0 * (wmax * top * top + self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    /// Initial step; `None` uses the inverse Lipschitz bound.
    pub step: Option<f64>,
    pub max_iterations: usize,
    /// Stop once the gradient Frobenius norm falls to this.
    pub tolerance: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            step: None,
            max_iterations: 20_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearContextModel {
    pub m: DMatrix<f64>,
    pub lambda: f64,
    pub weight_cfg: WeightConfig,
    pub final_objective: f64,
    pub iterations: usize,
    /// Objective after every accepted step, starting at `M = 0`.
    pub objective_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BilinearModelFile {
    dim: usize,
    lambda: f64,
    alpha: f64,
    c_max: f64,
    #[serde(rename = "M")]
    m: Vec<f64>,
    final_objective: f64,
    iterations: usize,
}

impl BilinearContextModel {
    /// A model with the given map and no fit history.
    pub fn with_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidConfig("bilinear map must be square".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bilinear map"));
        }
        Ok(Self {
            m,
            lambda: 0.0,
            weight_cfg: WeightConfig {
                c_max: 1.0,
                alpha: WeightConfig::DEFAULT_ALPHA,
            },
            final_objective: 0.0,
            iterations: 0,
            objective_trace: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let file = BilinearModelFile {
            dim: self.dim(),
            lambda: self.lambda,
            alpha: self.weight_cfg.alpha,
            c_max: self.weight_cfg.c_max,
            m: self.m.transpose().as_slice().to_vec(),
            final_objective: self.final_objective,
            iterations: self.iterations,
        };
        serde_json::to_value(file).expect("plain numeric struct")
    }

    pub fn from_json(value: serde_json::Value) -> std::result::Result<Self, serde_json::Error> {
        let f: BilinearModelFile = serde_json::from_value(value)?;
        if f.m.len() != f.dim * f.dim {
            return Err(serde::de::Error::custom(format!(
                "M has {} entries, expected {}",
                f.m.len(),
                f.dim * f.dim
            )));
        }
        Ok(Self {
            m: DMatrix::from_row_slice(f.dim, f.dim, &f.m),
            lambda: f.lambda,
            weight_cfg: WeightConfig {
                c_max: f.c_max,
                alpha: f.alpha,
            },
            final_objective: f.final_objective,
            iterations: f.iterations,
            objective_trace: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text =
            serde_json::to_string_pretty(&self.to_json()).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_json(value).map_err(|e| Error::json(path, e))
    }
}

/// Fits `M` by full-batch gradient descent from zero.
///
/// A step that raises the objective is retried at half the size; a trial
/// objective above ten times the initial one is reported as divergence.
pub fn fit_bilinear(
    known: &AttributeEmbeddings,
    counts: &CooccurrenceMatrix,
    lambda: f64,
    cfg: &WeightConfig,
    optim: &OptimConfig,
) -> Result<BilinearContextModel> {
    let problem = BilinearProblem::new(known, counts, lambda, cfg)?;
    let (m, trace, iterations) = descend(&problem, optim)?;
    let final_objective = *trace
        .last()
        .expect("trace starts with the initial objective");
    Ok(BilinearContextModel {
        m,
        lambda,
        weight_cfg: *cfg,
        final_objective,
        iterations,
        objective_trace: trace,
    })
}

fn descend(
    problem: &BilinearProblem,
    optim: &OptimConfig,
) -> Result<(DMatrix<f64>, Vec<f64>, usize)> {
    let d = problem.dim();
    let mut m = DMatrix::zeros(d, d);
    let initial = problem.objective(&m);
    let mut f = initial;
    let mut trace = vec![f];
    let mut step = match optim.step {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => {
            return Err(Error::InvalidConfig(format!(
                "step must be positive, got {s}"
            )))
        }
        None => {
            let l = problem.lipschitz_bound();
            if l > 0.0 {
                1.0 / l
            } else {
                1.0
            }
        }
    };
    let mut iterations = 0;
    while iterations < optim.max_iterations {
        let g = problem.gradient(&m);
        if g.norm() <= optim.tolerance {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..64 {
            let cand = &m - &g * step;
            let fc = problem.objective(&cand);
            if !fc.is_finite() || (initial > 0.0 && fc > 10.0 * initial) {
                return Err(Error::Divergence {
                    objective: fc,
                    initial,
                });
            }
            if fc <= f {
                m = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(f);
    }
    Ok((m, trace, iterations))
}

/// Row `q` is the softmax over known `p` of `v_q' M v_p`.
pub fn cooc_conditional(
    novel: &AttributeEmbeddings,
    known: &AttributeEmbeddings,
    model: &BilinearContextModel,
) -> Result<ConditionalMatrix> {
    check_dims(novel, known)?;
    if model.dim() != known.dim() {
        return Err(Error::DimensionMismatch {
            what: "bilinear map",
            expected: known.dim(),
            found: model.dim(),
        });
    }
    let logits = (novel.vectors() * &model.m) * known.vectors().transpose();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("co-occurrence conditional logits"));
    }
    ConditionalMatrix::new(
        novel.vocabulary().clone(),
        known.vocabulary().clone(),
        softmax_rows(&logits),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize, prefix: &str) -> AttributeVocabulary {
        AttributeVocabulary::new((0..n).map(|i| format!("{prefix}{i}"))).unwrap()
    }

    fn ann(rows: usize, cols: usize, cells: &[u8]) -> AnnotationMatrix {
        AnnotationMatrix::new(
            vocab(rows, "a"),
            (0..cols).map(|i| format!("x{i}")).collect(),
            DMatrix::from_row_slice(rows, cols, cells),
        )
        .unwrap()
    }

    fn emb(prefix: &str, rows: usize, cols: usize, data: &[f64]) -> AttributeEmbeddings {
        AttributeEmbeddings::new(
            vocab(rows, prefix),
            DMatrix::from_row_slice(rows, cols, data),
        )
        .unwrap()
    }

    #[test]
    fn cooccurrence_two_by_two() {
        let c = cooccurrence(&ann(2, 2, &[1, 1, 1, 0]));
        assert_eq!(c.counts(), &DMatrix::from_row_slice(2, 2, &[2, 1, 1, 1]));
        assert_eq!(c.prevalence(), &[3, 2]);
        let cond = conditional_from_counts(&c).unwrap();
        assert!((cond.probs()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((cond.probs()[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_annotations_give_zero_counts() {
        let c = cooccurrence(&ann(2, 3, &[0; 6]));
        assert!(c.counts().iter().all(|&v| v == 0));
        match conditional_from_counts(&c) {
            Err(Error::ZeroPrevalence(n)) => assert_eq!(n, "a0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn never_cooccurring_gives_identity() {
        let c = cooccurrence(&ann(2, 2, &[1, 0, 0, 1]));
        let cond = conditional_from_counts(&c).unwrap();
        assert_eq!(cond.probs(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn weight_function_cases() {
        let cfg = WeightConfig::new(100.0, 0.5).unwrap();
        assert_eq!(cooc_weight(150.0, &cfg).unwrap(), 1.0);
        assert_eq!(cooc_weight(0.0, &cfg).unwrap(), 0.0);
        assert!((cooc_weight(25.0, &cfg).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(cooc_weight(100.0, &cfg).unwrap(), 1.0);
        assert!(matches!(
            cooc_weight(-1.0, &cfg),
            Err(Error::NegativeCount(_))
        ));
        assert!(WeightConfig::new(0.0, 1.0).is_err());
        assert!(WeightConfig::new(1.0, 0.0).is_err());
    }

    #[test]
    fn default_weight_config_scales_with_data() {
        let c = cooccurrence(&ann(2, 2, &[1, 1, 1, 0]));
        let w = WeightConfig::for_counts(&c);
        assert_eq!(w.alpha, 0.75);
        assert_eq!(w.c_max, 1.0);
    }

    #[test]
    fn text_conditional_values() {
        let known = emb("k", 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let novel = emb("n", 1, 2, &[1.0, 0.0]);
        let c = text_conditional(&novel, &known, Temperature::new(1.0).unwrap()).unwrap();
        let e = std::f64::consts::E;
        assert!((c.probs()[(0, 0)] - e / (e + 1.0)).abs() < 1e-15);
        assert!((c.probs()[(0, 1)] - 1.0 / (e + 1.0)).abs() < 1e-15);

        let sharp = text_conditional(&novel, &known, Temperature::new(1e-6).unwrap()).unwrap();
        assert!(sharp.probs()[(0, 0)] > 0.999);

        let flat = emb("n", 1, 2, &[0.0, 0.0]);
        let u = text_conditional(&flat, &known, Temperature::default()).unwrap();
        assert_eq!(
            u.probs().row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.5, 0.5]
        );
        assert!(Temperature::new(0.0).is_err());
    }

    #[test]
    fn one_equation_fit() {
        let known = emb("a", 1, 1, &[1.0]);
        let problem = BilinearProblem::from_parts(
            known.vectors().clone(),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            0.0,
        );
        let (m, trace, _) = descend(&problem, &OptimConfig::default()).unwrap();
        assert!((m[(0, 0)] - 1.0).abs() < 1e-8, "{m}");
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_counts_are_excluded() {
        let known = emb("a", 2, 1, &[1.0, 1.0]);
        let c = cooccurrence(&ann(2, 2, &[1, 0, 0, 1]));
        let p = BilinearProblem::new(
            &AttributeEmbeddings::new(c.vocabulary().clone(), known.vectors().clone()).unwrap(),
            &c,
            0.0,
            &WeightConfig::new(1.0, 0.75).unwrap(),
        )
        .unwrap();
        // only the diagonal (count 1, log 1 = 0) enters, so M = 0 is optimal
        assert_eq!(p.objective(&DMatrix::zeros(1, 1)), 0.0);
    }

    #[test]
    fn diverging_step_is_reported() {
        let problem = BilinearProblem::from_parts(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            0.0,
        );
        let optim = OptimConfig {
            step: Some(100.0),
            ..Default::default()
        };
        assert!(matches!(
            descend(&problem, &optim),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn model_json_layout() {
        let m =
            BilinearContextModel::with_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]))
                .unwrap();
        let v = m.to_json();
        assert_eq!(v["M"], serde_json::json!([1.0, 2.0, 3.0, 4.0]));
        assert_eq!(v["dim"], 2);
        for k in ["lambda", "alpha", "c_max", "final_objective", "iterations"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        let back = BilinearContextModel::from_json(v).unwrap();
        assert_eq!(back.m, m.m);
    }

    #[test]
    fn cooc_conditional_special_maps() {
        let known = emb("k", 3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let novel = emb("n", 2, 2, &[0.3, -0.2, 1.0, 2.0]);
        let zero = BilinearContextModel::with_matrix(DMatrix::zeros(2, 2)).unwrap();
        let c = cooc_conditional(&novel, &known, &zero).unwrap();
        assert!(c.probs().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

        let id = BilinearContextModel::with_matrix(DMatrix::identity(2, 2)).unwrap();
        let a = cooc_conditional(&novel, &known, &id).unwrap();
        let b = text_conditional(&novel, &known, Temperature::new(1.0).unwrap()).unwrap();
        assert_eq!(a.probs(), b.probs());

        let wrong = BilinearContextModel::with_matrix(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            cooc_conditional(&novel, &known, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
