//! Batch driver: every model on every split, then a summary table.
//!
//! Output layout under `out`:
//!
//! ```text
//! table.csv                       mean and std per model and metric
//! summary.json                    config echo, aggregates, failures
//! split_000/split.json
//! split_000/<model>/scores.csv
//! split_000/<model>/labels.csv    DMP only
//! split_000/<model>/model.json
//! split_000/<model>/metrics.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::AnnotationMatrix;
use crate::error::{Error, Result};
use crate::ingest::{
    generate_split, load_annotations, load_features, load_id_list, load_word_vectors,
    save_annotations, save_scores, save_split, SplitConfig,
};
use crate::metrics::{aggregate, evaluate, AggregateReport, BinarizePolicy, MetricsReport};
use crate::pipeline::{
    prepare, run_model, train_known_bank, Dataset, Hyperparameters, ModelKind, SplitData,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    pub features: PathBuf,
    pub annotations: PathBuf,
    pub vectors: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub split: SplitConfig,
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub binarize: BinarizePolicy,
    /// File of instance ids to leave out, one per line.
    #[serde(default)]
    pub exclude_ids: Option<PathBuf>,
    /// Scale feature vectors to unit L2 norm before training.
    #[serde(default)]
    pub l2_normalize: bool,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            Some(&mut cfg.features),
            Some(&mut cfg.annotations),
            Some(&mut cfg.vectors),
            Some(&mut cfg.out),
            cfg.exclude_ids.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("experiment lists no models".into()));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(Error::InvalidConfig(
                "experiment lists a model twice".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub split_index: u64,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub completed: usize,
    pub failures: Vec<CellFailure>,
    /// `None` when every cell failed.
    pub aggregate: Option<AggregateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub split: SplitConfig,
    pub l2_normalize: bool,
    pub excluded_ids: Option<PathBuf>,
    pub hyperparameters: Hyperparameters,
    pub binarize: BinarizePolicy,
    pub models: Vec<ModelSummary>,
}

fn failure(split_index: u64, e: &Error) -> CellFailure {
    CellFailure {
        split_index,
        code: e.code().to_string(),
        message: e.to_string(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn split_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("split_{index:03}"))
}

/// Trains, scores, evaluates and writes one cell.
fn run_cell(
    kind: ModelKind,
    data: &SplitData,
    cfg: &ExperimentConfig,
    bank: Option<&crate::known_model::KnownAttributeModel>,
    dir: &Path,
) -> Result<MetricsReport> {
    let out = run_model(kind, data, &cfg.hyperparameters, bank)?;
    let report = evaluate(
        &out.scores,
        &data.test_labels,
        out.labels.as_ref(),
        cfg.binarize,
    )?;
    create_dir(dir)?;
    save_scores(&out.scores, dir.join("scores.csv"))?;
    if let Some(labels) = &out.labels {
        let m = AnnotationMatrix::new(
            out.scores.vocabulary().clone(),
            out.scores.instance_ids().to_vec(),
            labels.clone(),
        )?;
        save_annotations(&m, dir.join("labels.csv"))?;
    }
    write_json(
        &dir.join("model.json"),
        &json!({
            "model": out.artifact,
            "split_index": data.split_index,
            "dropped_known": data.dropped_known,
            "hyperparameters": cfg.hyperparameters,
        }),
    )?;
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

type Cell = std::result::Result<MetricsReport, CellFailure>;

fn run_split(
    dataset: &Dataset,
    vocab: &crate::domain::AttributeVocabulary,
    cfg: &ExperimentConfig,
    s: usize,
) -> Vec<Cell> {
    let index = s as u64;
    let fail_all = |e: Error| {
        let f = failure(index, &e);
        cfg.models.iter().map(|_| Err(f.clone())).collect()
    };
    let split = match generate_split(vocab, &dataset.annotations, &cfg.split, s) {
        Ok(v) => v,
        Err(e) => return fail_all(e),
    };
    let dir = split_dir(&cfg.out, s);
    if let Err(e) = create_dir(&dir).and_then(|_| save_split(&split, dir.join("split.json"))) {
        return fail_all(e);
    }
    let data = match prepare(dataset, &split) {
        Ok(v) => v,
        Err(e) => return fail_all(e),
    };
    let bank = cfg
        .models
        .iter()
        .any(|m| m.uses_known_classifiers())
        .then(|| train_known_bank(&data, &cfg.hyperparameters).map_err(|e| failure(index, &e)));
    cfg.models
        .par_iter()
        .map(|&kind| {
            let bank = match (&bank, kind.uses_known_classifiers()) {
                (Some(Err(f)), true) => return Err(f.clone()),
                (Some(Ok(b)), true) => Some(b),
                _ => None,
            };
            run_cell(kind, &data, cfg, bank, &dir.join(kind.name())).map_err(|e| failure(index, &e))
        })
        .collect()
}

/// Runs every (split, model) cell on the global rayon pool.
///
/// Input and config errors abort immediately; errors inside a cell are
/// recorded and the remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let mut dataset = Dataset::new(
        load_features(&cfg.features)?,
        load_annotations(&cfg.annotations)?,
        load_word_vectors(&cfg.vectors)?,
    )?;
    if let Some(path) = &cfg.exclude_ids {
        dataset = dataset.excluding(&load_id_list(path)?)?;
    }
    if cfg.l2_normalize {
        dataset = dataset.l2_normalized();
    }
    let vocab = dataset.annotations.vocabulary().clone();
    cfg.split.validate(vocab.len())?;
    create_dir(&cfg.out)?;

    let per_split: Vec<Vec<Cell>> = (0..cfg.split.num_splits)
        .into_par_iter()
        .map(|s| run_split(&dataset, &vocab, cfg, s))
        .collect();

    let mut models = Vec::with_capacity(cfg.models.len());
    for (m, &kind) in cfg.models.iter().enumerate() {
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        for cells in &per_split {
            match &cells[m] {
                Ok(r) => reports.push(r.clone()),
                Err(f) => failures.push(f.clone()),
            }
        }
        models.push(ModelSummary {
            model: kind,
            completed: reports.len(),
            failures,
            aggregate: if reports.is_empty() {
                None
            } else {
                Some(aggregate(&reports)?)
            },
        });
    }
    let summary = ExperimentSummary {
        split: cfg.split,
        l2_normalize: cfg.l2_normalize,
        excluded_ids: cfg.exclude_ids.clone(),
        hyperparameters: cfg.hyperparameters.clone(),
        binarize: cfg.binarize,
        models,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    let table = cfg.out.join("table.csv");
    fs::write(&table, summary_table(&summary)).map_err(|e| Error::io(&table, e))?;
    Ok(summary)
}

/// One row per model, mean and std per metric; fully failed rows read `FAILED`.
pub fn summary_table(summary: &ExperimentSummary) -> String {
    let metrics = ["auc", "label_ap", "example_ap", "hamming", "ranking"];
    let mut out = String::from("model,completed,failed");
    for m in metrics {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push('\n');
    for row in &summary.models {
        out.push_str(&format!(
            "{},{},{}",
            row.model,
            row.completed,
            row.failures.len()
        ));
        match &row.aggregate {
            Some(agg) => {
                for (_, v) in agg.fields() {
                    out.push_str(&format!(",{},{}", v.mean, v.std));
                }
            }
            None => out.push_str(&",FAILED".repeat(2 * metrics.len())),
        }
        out.push('\n');
    }
    out
}
