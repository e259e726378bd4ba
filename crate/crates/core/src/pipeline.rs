//! One model on one split: data preparation, training and scoring.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{
    dmp_outputs, eszsl_scores, eszsl_train, exdap_scores, exdap_train, wve_scores, wve_train,
    DEFAULT_RIDGE_LAMBDA,
};
use crate::context::{
    cooc_conditional, cooccurrence, fit_bilinear, text_conditional, OptimConfig, Temperature,
    WeightConfig,
};
use crate::domain::{
    AnnotationMatrix, AttributeEmbeddings, AttributeVocabulary, DatasetSplit, FeatureMatrix,
    ScoreMatrix,
};
use crate::error::{Error, Result};
use crate::ingest::{embed_vocabulary, split_rng, WordVectorTable};
use crate::known_model::{predict_known, train_known, KnownAttributeModel, KnownTrainConfig};
use crate::zsl::marginal_predict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TexCazsl,
    CoCazsl,
    Wve,
    Eszsl,
    Exdap,
    Dmp,
    /// Uniform random scores; the chance reference.
    Random,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::TexCazsl,
        ModelKind::CoCazsl,
        ModelKind::Wve,
        ModelKind::Eszsl,
        ModelKind::Exdap,
        ModelKind::Dmp,
        ModelKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TexCazsl => "texcazsl",
            ModelKind::CoCazsl => "cocazsl",
            ModelKind::Wve => "wve",
            ModelKind::Eszsl => "eszsl",
            ModelKind::Exdap => "exdap",
            ModelKind::Dmp => "dmp",
            ModelKind::Random => "random",
        }
    }

    /// Whether the model consumes the known-attribute classifier bank.
    pub fn uses_known_classifiers(self) -> bool {
        matches!(self, ModelKind::TexCazsl | ModelKind::CoCazsl)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model `{s}`")))
    }
}

/// Every tunable knob with its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Text-conditional temperature.
    pub gamma: f64,
    /// Bilinear ridge weight.
    pub lambda: f64,
    /// Weight exponent; `None` uses 0.75.
    pub alpha: Option<f64>,
    /// Weight cap; `None` derives it from the training counts.
    pub c_max: Option<f64>,
    pub optim: OptimConfig,
    pub known: KnownTrainConfig,
    /// Ridge weight of the ExDAP/WVE/DMP regressor and the ExDAP decode.
    pub ridge_lambda: f64,
    pub eszsl_lambda1: f64,
    pub eszsl_lambda2: f64,
    /// Seed of the random-score model.
    pub random_seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            lambda: 1e-3,
            alpha: None,
            c_max: None,
            optim: OptimConfig::default(),
            known: KnownTrainConfig::default(),
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            eszsl_lambda1: 1e-3,
            eszsl_lambda2: 1e-3,
            random_seed: 0,
        }
    }
}

/// A parsed, id-aligned dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub annotations: AnnotationMatrix,
    pub vectors: WordVectorTable,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        annotations: AnnotationMatrix,
        vectors: WordVectorTable,
    ) -> Result<Self> {
        let (features, annotations) = crate::validate_aligned(&features, &annotations)?;
        Ok(Self {
            features,
            annotations,
            vectors,
        })
    }

    /// Drops the listed instances everywhere; unknown ids are ignored.
    pub fn excluding(self, ids: &HashSet<String>) -> Result<Self> {
        let annotations = self.annotations.without_ids(ids);
        if annotations.is_empty() {
            return Err(Error::Empty("every instance is excluded"));
        }
        Ok(Self {
            features: self.features.select(annotations.instance_ids())?,
            annotations,
            vectors: self.vectors,
        })
    }

    /// Scales every feature vector to unit L2 norm.
    pub fn l2_normalized(self) -> Self {
        Self {
            features: self.features.l2_normalized(),
            ..self
        }
    }
}

/// Everything a model needs from one split.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split_index: u64,
    /// Known attributes with both classes among training instances.
    pub known: AttributeEmbeddings,
    /// Known attributes dropped for lacking a positive or negative example.
    pub dropped_known: Vec<String>,
    pub novel: AttributeEmbeddings,
    pub train_features: FeatureMatrix,
    /// Training annotations over `known`.
    pub train_labels: AnnotationMatrix,
    pub test_features: FeatureMatrix,
    /// Test annotations over `novel`.
    pub test_labels: AnnotationMatrix,
}

pub fn prepare(dataset: &Dataset, split: &DatasetSplit) -> Result<SplitData> {
    split.check_covers(dataset.annotations.vocabulary())?;
    if split.train_ids.is_empty() {
        return Err(Error::Empty("split has no training instances"));
    }
    if split.test_ids.is_empty() {
        return Err(Error::Empty("split has no test instances"));
    }
    let train_all = dataset
        .annotations
        .select_instances(&split.train_ids)?
        .select_attributes(&split.known)?;
    let n = train_all.len();
    let (kept, dropped): (Vec<_>, Vec<_>) =
        split.known.names().iter().enumerate().partition(|(p, _)| {
            let pos = train_all
                .cells()
                .row(*p)
                .iter()
                .filter(|&&v| v == 1)
                .count();
            pos > 0 && pos < n
        });
    if kept.is_empty() {
        return Err(Error::Empty(
            "no known attribute has both classes in training",
        ));
    }
    let known_vocab = AttributeVocabulary::new(kept.into_iter().map(|(_, n)| n.clone()))?;
    let train_labels = train_all.select_attributes(&known_vocab)?;
    let test_labels = dataset
        .annotations
        .select_instances(&split.test_ids)?
        .select_attributes(&split.novel)?;
    Ok(SplitData {
        split_index: split.split_index,
        known: embed_vocabulary(&known_vocab, &dataset.vectors)?,
        dropped_known: dropped.into_iter().map(|(_, n)| n.clone()).collect(),
        novel: embed_vocabulary(&split.novel, &dataset.vectors)?,
        train_features: dataset.features.select(&split.train_ids)?,
        train_labels,
        test_features: dataset.features.select(&split.test_ids)?,
        test_labels,
    })
}

/// Scores of one trained model on the split's test side.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: ModelKind,
    pub scores: ScoreMatrix,
    /// Binary predictions when the model produces its own (DMP).
    pub labels: Option<DMatrix<u8>>,
    /// Serialised trained model.
    pub artifact: serde_json::Value,
}

pub fn train_known_bank(data: &SplitData, hp: &Hyperparameters) -> Result<KnownAttributeModel> {
    train_known(&data.train_features, &data.train_labels, &hp.known)
}

fn weight_config(
    hp: &Hyperparameters,
    counts: &crate::context::CooccurrenceMatrix,
) -> Result<WeightConfig> {
    let auto = WeightConfig::for_counts(counts);
    WeightConfig::new(
        hp.c_max.unwrap_or(auto.c_max),
        hp.alpha.unwrap_or(auto.alpha),
    )
}

/// Trains `kind` on the split's training side and scores its test side.
///
/// `known_bank` lets callers share one classifier bank between the two
/// marginalising models; it is trained on demand when absent.
pub fn run_model(
    kind: ModelKind,
    data: &SplitData,
    hp: &Hyperparameters,
    known_bank: Option<&KnownAttributeModel>,
) -> Result<RunOutput> {
    if !kind.uses_known_classifiers() {
        return run_direct(kind, data, hp);
    }
    let owned;
    let bank = match known_bank {
        Some(b) => b,
        None => {
            owned = train_known_bank(data, hp)?;
            &owned
        }
    };

    let known_scores = predict_known(bank, &data.test_features)?;
    let known_json = serde_json::to_value(bank).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (conditional, artifact) = match kind {
        ModelKind::TexCazsl => {
            let t = Temperature::new(hp.gamma)?;
            (
                text_conditional(&data.novel, &data.known, t)?,
                json!({ "kind": "texcazsl", "gamma": hp.gamma, "known": known_json }),
            )
        }
        ModelKind::CoCazsl => {
            let counts = cooccurrence(&data.train_labels);
            let cfg = weight_config(hp, &counts)?;
            let model = fit_bilinear(&data.known, &counts, hp.lambda, &cfg, &hp.optim)?;
            (
                cooc_conditional(&data.novel, &data.known, &model)?,
                json!({ "kind": "cocazsl", "context": model.to_json(), "known": known_json }),
            )
        }
        _ => unreachable!("only marginalising models reach here"),
    };
    Ok(RunOutput {
        model: kind,
        scores: marginal_predict(&known_scores, &conditional)?,
        labels: None,
        artifact,
    })
}

fn run_direct(kind: ModelKind, data: &SplitData, hp: &Hyperparameters) -> Result<RunOutput> {
    let (x, y, x_te) = (
        &data.train_features,
        &data.train_labels,
        &data.test_features,
    );
    let with_kind = |name: &str, mut v: serde_json::Value| {
        v["kind"] = json!(name);
        v
    };
    Ok(match kind {
        ModelKind::Wve => {
            let reg = wve_train(x, y, &data.known, hp.ridge_lambda)?;
            RunOutput {
                model: kind,
                scores: wve_scores(x_te, &reg, &data.novel)?,
                labels: None,
                artifact: with_kind("wve", reg.to_json()),
            }
        }
        ModelKind::Exdap => {
            let reg = exdap_train(x, y, &data.known, hp.ridge_lambda)?;
            RunOutput {
                model: kind,
                scores: exdap_scores(x_te, &reg, &data.novel, hp.ridge_lambda)?,
                labels: None,
                artifact: with_kind("exdap", reg.to_json()),
            }
        }
        ModelKind::Dmp => {
            let reg = exdap_train(x, y, &data.known, hp.ridge_lambda)?;
            let (labels, scores) = dmp_outputs(x_te, &reg, &data.novel)?;
            RunOutput {
                model: kind,
                scores,
                labels: Some(labels),
                artifact: with_kind("dmp", reg.to_json()),
            }
        }
        ModelKind::Eszsl => {
            let m = eszsl_train(x, y, &data.known, hp.eszsl_lambda1, hp.eszsl_lambda2)?;
            RunOutput {
                model: kind,
                scores: eszsl_scores(x_te, &m, &data.novel)?,
                labels: None,
                artifact: with_kind("eszsl", m.to_json()),
            }
        }
        ModelKind::Random => {
            let mut rng = split_rng(hp.random_seed, data.split_index);
            let (q, n) = (data.novel.len(), x_te.len());
            let s = DMatrix::from_fn(q, n, |_, _| rng.random::<f64>());
            RunOutput {
                model: kind,
                scores: ScoreMatrix::new(
                    data.novel.vocabulary().clone(),
                    x_te.instance_ids().to_vec(),
                    s,
                )?,
                labels: None,
                artifact: json!({ "kind": "random", "seed": hp.random_seed }),
            }
        }
        ModelKind::TexCazsl | ModelKind::CoCazsl => unreachable!("handled by run_model"),
    })
}
