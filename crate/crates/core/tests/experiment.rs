use std::fs;

use ctxzsl::experiment::{run_experiment, summary_table, ExperimentConfig};
use ctxzsl::ingest::{generate_split, SplitConfig};
use ctxzsl::metrics::{evaluate, BinarizePolicy};
use ctxzsl::pipeline::{prepare, run_model, Dataset, Hyperparameters, ModelKind};
use ctxzsl::synth::{generate, save, SynthConfig};
use ctxzsl::Error;

fn small_synth(dir: &std::path::Path) -> ctxzsl::synth::SynthDataset {
    let d = generate(&SynthConfig {
        num_instances: 400,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    save(&d, dir).unwrap();
    d
}

fn config(dir: &std::path::Path, models: Vec<ModelKind>, splits: usize) -> ExperimentConfig {
    ExperimentConfig {
        features: dir.join("features.csv"),
        annotations: dir.join("annotations.csv"),
        vectors: dir.join("vectors.txt"),
        out: dir.join("out"),
        split: SplitConfig {
            num_novel: 6,
            num_splits: splits,
            seed: 2,
        },
        models,
        hyperparameters: Hyperparameters {
            optim: ctxzsl::context::OptimConfig {
                max_iterations: 2000,
                ..Default::default()
            },
            ..Hyperparameters::default()
        },
        binarize: BinarizePolicy::default(),
        exclude_ids: None,
        l2_normalize: false,
    }
}

#[test]
fn one_cell_experiment_matches_a_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = small_synth(dir.path());
    let cfg = config(dir.path(), vec![ModelKind::CoCazsl], 1);
    let summary = run_experiment(&cfg).unwrap();

    let ds = Dataset::new(d.features, d.annotations, d.vectors).unwrap();
    let split = generate_split(&d.vocabulary, &ds.annotations, &cfg.split, 0).unwrap();
    let data = prepare(&ds, &split).unwrap();
    let out = run_model(ModelKind::CoCazsl, &data, &cfg.hyperparameters, None).unwrap();
    let direct = evaluate(&out.scores, &data.test_labels, None, cfg.binarize).unwrap();

    let agg = summary.models[0].aggregate.as_ref().unwrap();
    assert_eq!(agg.per_split, vec![direct.clone()]);
    assert_eq!(agg.auc.mean, direct.auc);
    assert_eq!(agg.auc.std, 0.0);

    let cell = cfg.out.join("split_000").join("cocazsl");
    for f in ["scores.csv", "model.json", "metrics.json"] {
        assert!(cell.join(f).is_file(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(cfg.out.join("table.csv")).unwrap(),
        summary_table(&summary)
    );
}

#[test]
fn table_has_a_row_per_model() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let models = vec![ModelKind::TexCazsl, ModelKind::Random, ModelKind::Dmp];
    let summary = run_experiment(&config(dir.path(), models, 2)).unwrap();
    let table = summary_table(&summary);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("model,completed,failed,auc_mean,auc_std"));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 13));
    assert!(summary.models.iter().all(|m| m.completed == 2));
}

#[test]
fn missing_input_file_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), vec![ModelKind::Random], 1);
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    fs::write(
        &path,
        r#"{"features":"f.csv","annotations":"a.csv","vectors":"v.txt","out":"o","models":["wve"]}"#,
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.features, dir.path().join("f.csv"));
    assert_eq!(cfg.out, dir.path().join("o"));
    assert_eq!(cfg.split.num_novel, SplitConfig::default().num_novel);
}
