//! One-vs-rest probabilistic linear classifiers for the known attributes.
//!
//! Each attribute gets an L2-regularised logistic regression
//!
//! ```text
//! 0.5 * |w|^2 + cost * sum_i s_i * logloss(y_i, w.x_i + b)
//! ```
//!
//! with an unregularised bias and `s_i` the optional positive-class weight.
//! The objective is strictly convex, so the optimum (and therefore the model)
//! does not depend on how attributes are scheduled across workers.
//!
//! Prediction calibrates each decision score with a sigmoid `(scale, offset)`
//! pair and then divides by the sum over attributes, so every instance gets a
//! point on the probability simplex.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationMatrix, AttributeVocabulary, FeatureMatrix, ScoreMatrix};
use crate::error::{Error, Result};
use crate::linalg::{add_ridge, solve_symmetric};

/// Newton steps are used while the parameter count stays below this.
const NEWTON_MAX_PARAMS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnownTrainConfig {
    /// Inverse regularisation strength.
    pub cost: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls to this.
    pub tolerance: f64,
    /// Weight on positive instances; `None` weights every instance equally.
    pub positive_weight: Option<f64>,
    /// Fit Platt scaling on the training scores instead of the identity.
    pub platt: bool,
}

impl Default for KnownTrainConfig {
    fn default() -> Self {
        Self {
            cost: 1.0,
            max_iterations: 5000,
            tolerance: 1e-6,
            positive_weight: None,
            platt: false,
        }
    }
}

/// `p = sigmoid(scale * score + offset)`, `scale > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub offset: f64,
}

impl Calibration {
    pub const IDENTITY: Calibration = Calibration {
        scale: 1.0,
        offset: 0.0,
    };

    pub fn logit(&self, score: f64) -> f64 {
        self.scale * score + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownAttributeModel {
    pub vocabulary: AttributeVocabulary,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub calibration: Vec<Calibration>,
    pub cost: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Design matrix with a trailing column of ones, one row per instance.
fn design(features: &FeatureMatrix) -> DMatrix<f64> {
    let (d, n) = features.data().shape();
    let mut x = DMatrix::from_element(n, d + 1, 1.0);
    x.view_mut((0, 0), (n, d))
        .copy_from(&features.data().transpose());
    x
}

struct LogisticProblem<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<f64>,
    sample_weight: Vec<f64>,
    cost: f64,
}

impl LogisticProblem<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let z = self.x * theta;
        let d = self.dim();
        let reg = 0.5 * theta.rows(0, d - 1).norm_squared();
        let loss: f64 = z
            .iter()
            .zip(&self.y)
            .zip(&self.sample_weight)
            .map(|((&z, &y), &s)| s * (softplus(z) - y * z))
            .sum();
        reg + self.cost * loss
    }

    /// Gradient and the per-instance curvature `s * p * (1 - p)`.
    fn gradient(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = self.x * theta;
        let d = self.dim();
        let mut resid = DVector::zeros(z.len());
        let mut curv = DVector::zeros(z.len());
        for i in 0..z.len() {
            let p = sigmoid(z[i]);
            resid[i] = self.cost * self.sample_weight[i] * (p - self.y[i]);
            curv[i] = self.cost * self.sample_weight[i] * p * (1.0 - p);
        }
        let mut g = self.x.tr_mul(&resid);
        for j in 0..d - 1 {
            g[j] += theta[j];
        }
        (g, curv)
    }

    fn hessian(&self, curv: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.x.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= curv[i].sqrt();
        }
        let mut h = scaled.tr_mul(&scaled);
        let d = self.dim();
        for j in 0..d - 1 {
            h[(j, j)] += 1.0;
        }
        // keeps the bias direction solvable when every instance saturates
        add_ridge(h, 1e-10)
    }

    fn minimize(&self, max_iterations: usize, tolerance: f64) -> DVector<f64> {
        let mut theta = DVector::zeros(self.dim());
        let mut f = self.objective(&theta);
        let newton = self.dim() <= NEWTON_MAX_PARAMS;
        let mut step = 1.0;
        for _ in 0..max_iterations {
            let (g, curv) = self.gradient(&theta);
            let gnorm = g.norm();
            if gnorm <= tolerance {
                break;
            }
            let dir = if newton {
                let h = self.hessian(&curv);
                match solve_symmetric(
                    &h,
                    &DMatrix::from_column_slice(g.len(), 1, g.as_slice()),
                    "newton",
                ) {
                    Ok(s) => -DVector::from_column_slice(s.as_slice()),
                    Err(_) => -&g,
                }
            } else {
                -&g
            };
            let slope = g.dot(&dir);
            let mut t = if newton { 1.0 } else { step };
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &theta + &dir * t;
                let fc = self.objective(&cand);
                if fc <= f + 1e-4 * t * slope {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            if !newton {
                step = (t * 2.0).min(1e6);
            }
        }
        theta
    }
}

/// Platt scaling by Newton's method on the smoothed targets.
fn fit_platt(scores: &[f64], labels: &[f64]) -> Calibration {
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels
        .iter()
        .map(|&y| if y > 0.5 { hi } else { lo })
        .collect();
    let (mut a, mut b) = (1.0, 0.0);
    let obj = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let z = a * s + b;
                softplus(z) - t * z
            })
            .sum()
    };
    let mut f = obj(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            ga += (p - t) * s;
            gb += p - t;
            let w = p * (1.0 - p);
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        if (ga * ga + gb * gb).sqrt() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        if det <= 0.0 {
            break;
        }
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(haa * gb - hab * ga) / det;
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let fc = obj(a + t * da, b + t * db);
            if fc < f {
                a += t * da;
                b += t * db;
                f = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if a > 0.0 && a.is_finite() && b.is_finite() {
        Calibration {
            scale: a,
            offset: b,
        }
    } else {
        Calibration::IDENTITY
    }
}

/// Trains one classifier per annotation row.
///
/// `features` and `annotations` must share the same instance order (see
/// [`crate::validate_aligned`]).
pub fn train_known(
    features: &FeatureMatrix,
    annotations: &AnnotationMatrix,
    cfg: &KnownTrainConfig,
) -> Result<KnownAttributeModel> {
    if features.instance_ids() != annotations.instance_ids() {
        return Err(Error::InvalidConfig(
            "features and annotations are not aligned".into(),
        ));
    }
    if !(cfg.cost > 0.0 && cfg.cost.is_finite()) {
        return Err(Error::InvalidConfig("cost must be positive".into()));
    }
    let vocab = annotations.vocabulary();
    let n = annotations.len();
    for (p, name) in vocab.names().iter().enumerate() {
        let pos = annotations
            .cells()
            .row(p)
            .iter()
            .filter(|&&v| v == 1)
            .count();
        if pos == 0 || pos == n {
            return Err(Error::DegenerateAttribute(name.clone()));
        }
    }
    let x = design(features);
    let d = features.dim();
    let fitted: Vec<(Vec<f64>, f64, Calibration)> = (0..vocab.len())
        .into_par_iter()
        .map(|p| {
            let y: Vec<f64> = annotations
                .cells()
                .row(p)
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            let sample_weight = y
                .iter()
                .map(|&yi| match cfg.positive_weight {
                    Some(w) if yi > 0.5 => w,
                    _ => 1.0,
                })
                .collect();
            let problem = LogisticProblem {
                x: &x,
                y,
                sample_weight,
                cost: cfg.cost,
            };
            let theta = problem.minimize(cfg.max_iterations, cfg.tolerance);
            let calibration = if cfg.platt {
                let scores: Vec<f64> = (&x * &theta).iter().copied().collect();
                fit_platt(&scores, &problem.y)
            } else {
                Calibration::IDENTITY
            };
            (
                theta.rows(0, d).iter().copied().collect(),
                theta[d],
                calibration,
            )
        })
        .collect();

    let mut weights = Vec::with_capacity(fitted.len());
    let mut biases = Vec::with_capacity(fitted.len());
    let mut calibration = Vec::with_capacity(fitted.len());
    for (w, b, c) in fitted {
        weights.push(w);
        biases.push(b);
        calibration.push(c);
    }
    let model = KnownAttributeModel {
        vocabulary: vocab.clone(),
        weights,
        biases,
        calibration,
        cost: cfg.cost,
    };
    if !model.is_finite() {
        return Err(Error::NonFinite("known-attribute model"));
    }
    Ok(model)
}

impl KnownAttributeModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|v| v.is_finite())
            && self.biases.iter().all(|v| v.is_finite())
            && self
                .calibration
                .iter()
                .all(|c| c.scale.is_finite() && c.offset.is_finite())
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.dim(),
                found: features.dim(),
            });
        }
        Ok(())
    }

    /// Raw decision scores `w_p . x + b_p`, attributes by instances.
    pub fn decision_scores(&self, features: &FeatureMatrix) -> Result<DMatrix<f64>> {
        self.check_dim(features)?;
        let w = DMatrix::from_fn(self.weights.len(), self.dim(), |p, j| self.weights[p][j]);
        let mut s = w * features.data();
        for (p, mut row) in s.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.biases[p]);
        }
        Ok(s)
    }

    /// Calibrated per-attribute probabilities before normalisation.
    pub fn attribute_probabilities(&self, features: &FeatureMatrix) -> Result<DMatrix<f64>> {
        let mut s = self.decision_scores(features)?;
        for (p, mut row) in s.row_iter_mut().enumerate() {
            let c = self.calibration[p];
            row.apply(|v| *v = sigmoid(c.logit(*v)));
        }
        Ok(s)
    }
}

/// Multinomial confidences p(known_p | x): calibrated sigmoids divided by
/// their sum over attributes.
pub fn predict_known(model: &KnownAttributeModel, features: &FeatureMatrix) -> Result<ScoreMatrix> {
    let mut s = model.decision_scores(features)?;
    // normalise log-sigmoids so saturated scores cannot underflow to 0/0
    for (p, mut row) in s.row_iter_mut().enumerate() {
        let c = model.calibration[p];
        row.apply(|v| *v = -softplus(-c.logit(*v)));
    }
    for mut col in s.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    ScoreMatrix::new(
        model.vocabulary.clone(),
        features.instance_ids().to_vec(),
        s,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FeatureMatrix, AnnotationMatrix) {
        let f = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        )
        .unwrap();
        let a = AnnotationMatrix::new(
            AttributeVocabulary::new(["pos"]).unwrap(),
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(1, 2, &[1, 0]),
        )
        .unwrap();
        (f, a)
    }

    #[test]
    fn default_cost_is_one() {
        assert_eq!(KnownTrainConfig::default().cost, 1.0);
    }

    #[test]
    fn separable_toy_is_fit() {
        let (f, a) = toy();
        let m = train_known(&f, &a, &KnownTrainConfig::default()).unwrap();
        let p = m.attribute_probabilities(&f).unwrap();
        assert!(p[(0, 0)] > 0.5);
        assert!(p[(0, 1)] < 0.5);
    }

    #[test]
    fn optimum_is_stationary() {
        let (f, a) = toy();
        let m = train_known(&f, &a, &KnownTrainConfig::default()).unwrap();
        // d/dw: w + sum (p - y) x = 0 ; d/db: sum (p - y) = 0
        let x = [1.0, -1.0];
        let y = [1.0, 0.0];
        let (mut gw, mut gb) = (m.weights[0][0], 0.0);
        for i in 0..2 {
            let p = sigmoid(m.weights[0][0] * x[i] + m.biases[0]);
            gw += (p - y[i]) * x[i];
            gb += p - y[i];
        }
        assert!(gw.abs() < 1e-6 && gb.abs() < 1e-6, "{gw} {gb}");
    }

    #[test]
    fn degenerate_attribute_rejected() {
        let (f, _) = toy();
        let a = AnnotationMatrix::new(
            AttributeVocabulary::new(["all"]).unwrap(),
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(1, 2, &[1, 1]),
        )
        .unwrap();
        match train_known(&f, &a, &KnownTrainConfig::default()) {
            Err(Error::DegenerateAttribute(n)) => assert_eq!(n, "all"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mirror_symmetric_gives_half() {
        let m = KnownAttributeModel {
            vocabulary: AttributeVocabulary::new(["l", "r"]).unwrap(),
            weights: vec![vec![1.0], vec![-1.0]],
            biases: vec![0.0, 0.0],
            calibration: vec![Calibration::IDENTITY; 2],
            cost: 1.0,
        };
        let f = FeatureMatrix::new(vec!["x".into()], DMatrix::zeros(1, 1)).unwrap();
        let s = predict_known(&m, &f).unwrap();
        assert_eq!(s.scores().column(0).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn dimension_mismatch() {
        let (f, a) = toy();
        let m = train_known(&f, &a, &KnownTrainConfig::default()).unwrap();
        let g = FeatureMatrix::new(vec!["x".into()], DMatrix::zeros(2, 1)).unwrap();
        assert!(matches!(
            predict_known(&m, &g),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn saturated_scores_stay_normalised() {
        let m = KnownAttributeModel {
            vocabulary: AttributeVocabulary::new(["l", "r"]).unwrap(),
            weights: vec![vec![1.0], vec![1.0]],
            biases: vec![0.0, 1.0],
            calibration: vec![Calibration::IDENTITY; 2],
            cost: 1.0,
        };
        let f = FeatureMatrix::new(vec!["x".into()], DMatrix::from_element(1, 1, -2000.0)).unwrap();
        let s = predict_known(&m, &f).unwrap();
        let col = s.scores().column(0);
        assert!((col.sum() - 1.0).abs() < 1e-12);
        assert!(col[1] > col[0]);
    }

    #[test]
    fn platt_is_monotone() {
        let scores = [-2.0, -1.0, 0.5, 1.0, 3.0, -0.5];
        let labels = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let c = fit_platt(&scores, &labels);
        assert!(c.scale > 0.0);
    }
}
