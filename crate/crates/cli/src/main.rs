//! `ctxzsl`: command-line driver for zero-shot attribute experiments.
//!
//! Every failure prints one line `error[CODE]: message` to stderr and exits
//! with status 1. `CTXZSL_WORKERS` caps the worker threads.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxzsl::context::{cooc_conditional, text_conditional, BilinearContextModel, Temperature};
use ctxzsl::experiment::{run_experiment, summary_table, ExperimentConfig};
use ctxzsl::ingest::{
    embed_attribute, embed_vocabulary, generate_split, load_annotations, load_features,
    load_id_list, load_scores, load_split, load_vocabulary, load_word_vectors, save_annotations,
    save_scores, save_split, SplitConfig,
};
use ctxzsl::metrics::{evaluate, BinarizePolicy};
use ctxzsl::pipeline::{prepare, run_model, Dataset, Hyperparameters, ModelKind};
use ctxzsl::synth::{generate, SynthConfig};
use ctxzsl::zsl::explain_novel;
use ctxzsl::{AnnotationMatrix, AttributeEmbeddings, AttributeVocabulary, Error, Result};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "ctxzsl",
    version,
    about = "Context-aware zero-shot attribute prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded known/novel splits.
    Split {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 9)]
        num_novel: usize,
        #[arg(long, default_value_t = 50)]
        num_splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// File of instance ids to leave out, one per line.
        #[arg(long)]
        exclude_ids: Option<PathBuf>,
    },
    /// Train one model on a split and score its test instances.
    Run(Box<RunArgs>),
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// `uniform`, `fixed:<t>` or `topk:<k>`.
        #[arg(long, default_value = "uniform")]
        binarize: BinarizePolicy,
        /// Precomputed binary predictions, overriding --binarize.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank known attributes by their conditional link to a novel one.
    Explain {
        /// A `model.json` written by `run` (texcazsl or cocazsl) or a bare
        /// bilinear model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        novel: String,
        /// Known attribute names, one per line.
        #[arg(long)]
        known_vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured model on every split and tabulate.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    out: PathBuf,
    /// File of instance ids to leave out, one per line.
    #[arg(long)]
    exclude_ids: Option<PathBuf>,
    /// Scale feature vectors to unit L2 norm first.
    #[arg(long)]
    l2_normalize: bool,
    /// JSON file of hyperparameters; flags below override it.
    #[arg(long)]
    hyperparameters: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    c_max: Option<f64>,
    #[arg(long)]
    cost: Option<f64>,
    /// Weight of positive examples in the known-attribute classifiers.
    #[arg(long)]
    positive_weight: Option<f64>,
    #[arg(long)]
    ridge_lambda: Option<f64>,
    #[arg(long)]
    eszsl_lambda1: Option<f64>,
    #[arg(long)]
    eszsl_lambda2: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Seed of the random-score model.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn hyperparameters(&self) -> Result<Hyperparameters> {
        let mut hp = match &self.hyperparameters {
            Some(p) => read_json(p)?,
            None => Hyperparameters::default(),
        };
        if let Some(v) = self.gamma {
            hp.gamma = v;
        }
        if let Some(v) = self.lambda {
            hp.lambda = v;
        }
        if self.alpha.is_some() {
            hp.alpha = self.alpha;
        }
        if self.c_max.is_some() {
            hp.c_max = self.c_max;
        }
        if let Some(v) = self.cost {
            hp.known.cost = v;
        }
        if self.positive_weight.is_some() {
            hp.known.positive_weight = self.positive_weight;
        }
        if let Some(v) = self.ridge_lambda {
            hp.ridge_lambda = v;
        }
        if let Some(v) = self.eszsl_lambda1 {
            hp.eszsl_lambda1 = v;
        }
        if let Some(v) = self.eszsl_lambda2 {
            hp.eszsl_lambda2 = v;
        }
        if let Some(v) = self.max_iterations {
            hp.optim.max_iterations = v;
        }
        if let Some(v) = self.tolerance {
            hp.optim.tolerance = v;
        }
        if let Some(v) = self.seed {
            hp.random_seed = v;
        }
        Ok(hp)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn split(annotations: &Path, cfg: SplitConfig, exclude: Option<&Path>, out: &Path) -> Result<()> {
    let mut ann = load_annotations(annotations)?;
    if let Some(path) = exclude {
        ann = ann.without_ids(&load_id_list(path)?);
    }
    cfg.validate(ann.vocabulary().len())?;
    create_dir(out)?;
    for i in 0..cfg.num_splits {
        let s = generate_split(ann.vocabulary(), &ann, &cfg, i)?;
        save_split(&s, out.join(format!("split_{i:03}.json")))?;
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let hp = args.hyperparameters()?;
    let mut dataset = Dataset::new(
        load_features(&args.features)?,
        load_annotations(&args.annotations)?,
        load_word_vectors(&args.vectors)?,
    )?;
    if let Some(path) = &args.exclude_ids {
        dataset = dataset.excluding(&load_id_list(path)?)?;
    }
    if args.l2_normalize {
        dataset = dataset.l2_normalized();
    }
    let split = load_split(&args.split)?;
    let data = prepare(&dataset, &split).map_err(|e| e.in_file(&args.split))?;
    let out = run_model(args.model, &data, &hp, None)?;
    create_dir(&args.out)?;
    save_scores(&out.scores, args.out.join("scores.csv"))?;
    if let Some(labels) = &out.labels {
        let m = AnnotationMatrix::new(
            out.scores.vocabulary().clone(),
            out.scores.instance_ids().to_vec(),
            labels.clone(),
        )?;
        save_annotations(&m, args.out.join("labels.csv"))?;
    }
    write_json(
        &args.out.join("model.json"),
        &json!({
            "model": out.artifact,
            "split_index": data.split_index,
            "dropped_known": data.dropped_known,
            "hyperparameters": hp,
        }),
    )
}

fn eval(
    scores: &Path,
    annotations: &Path,
    split: &Path,
    policy: BinarizePolicy,
    labels: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let scores = load_scores(scores)?;
    let gt = load_annotations(annotations)?;
    let split = load_split(split)?;
    let mut have: Vec<&String> = scores.vocabulary().names().iter().collect();
    let mut want: Vec<&String> = split.novel.names().iter().collect();
    have.sort();
    want.sort();
    if have != want {
        return Err(Error::VocabularyMismatch(format!(
            "score columns {have:?} differ from the split's novel attributes {want:?}"
        )));
    }
    let binary = match labels {
        Some(p) => {
            let l = load_annotations(p)?
                .select_attributes(scores.vocabulary())?
                .select_instances(scores.instance_ids())?;
            Some(l.cells().clone())
        }
        None => None,
    };
    let report = evaluate(&scores, &gt, binary.as_ref(), policy)?;
    write_json(out, &report)
}

/// Finds the bilinear map or temperature inside a model file.
enum ExplainModel {
    Bilinear(BilinearContextModel),
    Text(f64),
}

fn explain_model(path: &Path) -> Result<ExplainModel> {
    let value: Value = read_json(path)?;
    let inner = value.get("model").unwrap_or(&value);
    let bad = |m: &str| Error::InvalidConfig(format!("{}: {m}", path.display()));
    if let Some(ctx) = inner.get("context") {
        return BilinearContextModel::from_json(ctx.clone())
            .map(ExplainModel::Bilinear)
            .map_err(|e| Error::json(path, e));
    }
    match inner.get("kind").and_then(Value::as_str) {
        Some("texcazsl") => inner
            .get("gamma")
            .and_then(Value::as_f64)
            .map(ExplainModel::Text)
            .ok_or_else(|| bad("texcazsl model without gamma")),
        Some(k) => Err(bad(&format!("model kind `{k}` has no conditional matrix"))),
        None => BilinearContextModel::from_json(inner.clone())
            .map(ExplainModel::Bilinear)
            .map_err(|e| Error::json(path, e)),
    }
}

fn explain(
    model: &Path,
    vectors: &Path,
    novel: &str,
    known_vocab: &Path,
    out: &Path,
) -> Result<()> {
    let model = explain_model(model)?;
    let table = load_word_vectors(vectors)?;
    let known = embed_vocabulary(&load_vocabulary(known_vocab)?, &table)?;
    let v = embed_attribute(novel, &table)?;
    let novel_emb = AttributeEmbeddings::new(AttributeVocabulary::new([novel])?, nalgebra_row(&v))?;
    let cond = match model {
        ExplainModel::Bilinear(m) => cooc_conditional(&novel_emb, &known, &m)?,
        ExplainModel::Text(g) => text_conditional(&novel_emb, &known, Temperature::new(g)?)?,
    };
    let ranked = explain_novel(novel, &cond)?;
    let mut text = String::from("attribute,probability\n");
    for (name, p) in ranked {
        text.push_str(&format!("{name},{p}\n"));
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))
}

fn nalgebra_row(v: &[f64]) -> ctxzsl::nalgebra::DMatrix<f64> {
    ctxzsl::nalgebra::DMatrix::from_row_slice(1, v.len(), v)
}

fn synth(config: &Path, out: &Path) -> Result<()> {
    let cfg: SynthConfig = read_json(config)?;
    let data = generate(&cfg)?;
    ctxzsl::synth::save(&data, out)
}

fn experiment(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let summary = run_experiment(&cfg)?;
    let mut stdout = std::io::stdout().lock();
    // a closed stdout is not worth failing a finished experiment over
    let _ = stdout.write_all(summary_table(&summary).as_bytes());
    Ok(())
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("CTXZSL_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "CTXZSL_WORKERS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_workers()?;
    match cli.command {
        Command::Split {
            annotations,
            num_novel,
            num_splits,
            seed,
            out,
            exclude_ids,
        } => split(
            &annotations,
            SplitConfig {
                num_novel,
                num_splits,
                seed,
            },
            exclude_ids.as_deref(),
            &out,
        ),
        Command::Run(args) => run(&args),
        Command::Eval {
            scores,
            annotations,
            split,
            binarize,
            labels,
            out,
        } => eval(
            &scores,
            &annotations,
            &split,
            binarize,
            labels.as_deref(),
            &out,
        ),
        Command::Explain {
            model,
            vectors,
            novel,
            known_vocab,
            out,
        } => explain(&model, &vectors, &novel, &known_vocab, &out),
        Command::Synth { config, out } => synth(&config, &out),
        Command::Experiment { config } => experiment(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[E_USAGE]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
