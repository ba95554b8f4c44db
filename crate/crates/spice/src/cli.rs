//! The `spice` command line.
//!
//! Exit codes: 0 on success (and for `--help`/`--version`), 1 for usage
//! errors, 2 for data and validation errors. `SPICE_THREADS` caps the worker
//! pool.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use spice_core::cnn::{train, CnnConfig, EpochRecord, LabeledClip, LeafCnn, TrainConfig};
use spice_core::data::{speaker_split, ManifestRow, Split, SynthConfig};
use spice_core::embed::EmbeddingRecord;
use spice_core::eval::{evaluate, ClassMap, EvalItem, EvalOptions};
use spice_core::frontend::GaborFrontendParams;
use spice_core::heads::{ForestConfig, HeadConfig, HeadKind, HeadModel, LabeledEmbedding, LogRegConfig};
use spice_core::checkpoint::ModelKind;
use spice_core::{ClassScores, Task, CANONICAL_RATE};

use crate::io::{load_canonical, read_checkpoint, read_embeddings, write_atomic, write_checkpoint};
use crate::manifest::{read_manifest, write_manifest, Manifest};
use crate::render::render_report;
use crate::synth::write_synth_corpus;

pub const THREADS_ENV: &str = "SPICE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spice", version, about = "Dysarthric speech intelligibility classification")]
pub struct Cli {
    /// Log progress (per-epoch training losses and the like) to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus: WAV files plus a manifest.
    Synth(SynthArgs),
    /// Assign speaker-level train/val/test splits to a manifest.
    Split(SplitArgs),
    /// Train the learnable frontend and CNN on the train split.
    TrainCnn(TrainCnnArgs),
    /// Train classifier heads on precomputed embeddings.
    EmbedTrain(EmbedTrainArgs),
    /// Write per-utterance class scores to CSV.
    Predict(PredictArgs),
    /// Score predictions against manifest labels.
    Evaluate(EvaluateArgs),
    /// Render a saved evaluation report as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives manifest.csv and wavs/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub speakers_per_class: usize,
    /// Utterances per speaker.
    #[arg(long, default_value_t = 25)]
    pub utts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the manifest with its split column.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_ratios)]
    pub ratios: [f64; 3],
    /// Split all speakers together instead of within each label.
    #[arg(long)]
    pub no_stratify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Four blocks, 32-64 channels.
    Desk,
    /// Ten blocks, about 8M parameters.
    Paper,
}

#[derive(Debug, Args)]
pub struct TrainCnnArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Train on random windows of at most this many seconds.
    #[arg(long)]
    pub crop_seconds: Option<f64>,
    /// Anneal the learning rate along a half cosine over --epochs.
    #[arg(long)]
    pub cosine_decay: bool,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Frontend filterbank channels.
    #[arg(long, default_value_t = 40)]
    pub channels: usize,
    /// Also write the per-epoch history as JSON here.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedTrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    /// Train only this head; `--out` is then a file. Without it all three
    /// are trained and `--out` is a directory receiving `<head>.spck`.
    #[arg(long, value_parser = parse_head)]
    pub head: Option<HeadKind>,
    #[arg(long)]
    pub out: PathBuf,
    /// Forest seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2_lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub shrinkage: f64,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 2)]
    pub min_leaf: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Required for head models.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Only rows of this split.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// CSV: utterance_id,speaker_id,p0..p{K-1}.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["predictions", "model"])))]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the class count of the predictions.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Prediction CSV written by `predict`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Predict on the fly with this checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Manifest column to slice the report by (e.g. etiology).
    #[arg(long)]
    pub slice_by: Option<String>,
    /// Manifest column with reference intelligibility percentages.
    #[arg(long)]
    pub ref_percent_column: Option<String>,
    /// Intelligibility percentage for classes 0-4.
    #[arg(long, default_value = "100,90,60,40,20", value_parser = parse_class_map)]
    pub class_map: ClassMap,
    /// Print a table instead of JSON.
    #[arg(long)]
    pub pretty: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by `evaluate --out`.
    #[arg(long)]
    pub input: PathBuf,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "2" => Ok(Task::MildPlus),
        "5" => Ok(Task::FiveClass),
        _ => Err(format!("expected 2 or 5, got {s:?}")),
    }
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    s.parse().map_err(|e: spice_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|_| format!("expected train, val or test, got {s:?}"))
}

fn parse_class_map(s: &str) -> Result<ClassMap, String> {
    s.parse().map_err(|e: spice_core::Error| e.to_string())
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    v.try_into().map_err(|_| String::from("expected three comma-separated fractions"))
}

/// A flag combination that parses but cannot be acted on.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return 1;
            }
        },
        Err(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::TrainCnn(a) => cmd_train_cnn(a),
        Command::EmbedTrain(a) => cmd_embed_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    Ok(text)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let rows = write_synth_corpus(
        &a.out,
        SynthConfig {
            n_speakers_per_class: a.speakers_per_class,
            utterances_per_speaker: a.utts,
            seed: a.seed,
        },
    )?;
    log::info!("wrote {} utterances to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let mut manifest = read_manifest(&a.manifest)?;
    let counts = speaker_split(&mut manifest.rows, &a.ratios, a.seed, !a.no_stratify)
        .with_context(|| format!("splitting {}", a.manifest.display()))?;
    // Relative audio paths must keep pointing at the same files.
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    if out_dir != manifest.base_dir {
        for row in manifest.rows.iter_mut() {
            let p = Path::new(&row.audio_path);
            if p.is_relative() {
                row.audio_path = absolute(&manifest.base_dir.join(p)).to_string_lossy().into_owned();
            }
        }
    }
    write_manifest(&a.out, &manifest.rows)?;
    log::info!("speakers per split: train {} val {} test {}", counts[0], counts[1], counts[2]);
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn rows_in(manifest: &Manifest, split: Split) -> Result<Vec<&ManifestRow>> {
    if manifest.rows.iter().any(|r| r.split.is_none()) {
        bail!("manifest rows need a split column (run `spice split` first)");
    }
    Ok(manifest.rows.iter().filter(|r| r.split == Some(split)).collect())
}

fn load_clips(manifest: &Manifest, rows: &[&ManifestRow], task: Task) -> Result<Vec<LabeledClip>> {
    rows.par_iter()
        .map(|r| {
            let clip = load_canonical(&manifest.audio_path(r))
                .with_context(|| format!("utterance {:?}", r.utterance_id))?;
            Ok(LabeledClip {
                clip,
                label: task.target(r.label),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    task: Task,
    n_train: usize,
    n_val: usize,
    n_params: usize,
    best_epoch: usize,
    history: &'a [EpochRecord],
}

fn cmd_train_cnn(a: TrainCnnArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let train_rows = rows_in(&manifest, Split::Train)?;
    let val_rows = rows_in(&manifest, Split::Val)?;
    if train_rows.is_empty() || val_rows.is_empty() {
        bail!("manifest {} needs both train and val rows", a.manifest.display());
    }
    let k = a.task.n_classes();
    let cnn_config = match a.preset {
        Preset::Desk => CnnConfig::desk(k, a.channels),
        Preset::Paper => CnnConfig::paper_scale(k, a.channels),
    };
    let frontend = GaborFrontendParams::mel_init(
        a.channels,
        CANONICAL_RATE,
        spice_core::frontend::DEFAULT_FMIN,
        spice_core::frontend::DEFAULT_FMAX,
    )
    .map_err(|e| usage(format!("--channels: {e}")))?;
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        weight_decay: a.weight_decay,
        crop_seconds: a.crop_seconds,
        cosine_decay: a.cosine_decay,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let train_set = load_clips(&manifest, &train_rows, a.task)?;
    let val_set = load_clips(&manifest, &val_rows, a.task)?;
    let n_params = cnn_config.n_params();
    let outcome = train(&train_set, &val_set, cnn_config, frontend, &config)?;
    write_checkpoint(&a.out, &outcome.model.to_checkpoint())?;
    let summary = TrainSummary {
        task: a.task,
        n_train: train_set.len(),
        n_val: val_set.len(),
        n_params,
        best_epoch: outcome.best_epoch,
        history: &outcome.history,
    };
    let text = print_json(&summary)?;
    if let Some(path) = &a.history {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

/// Embedding vectors by utterance id.
fn embedding_index(path: &Path) -> Result<(usize, HashMap<String, EmbeddingRecord>)> {
    let (dim, records) = read_embeddings(path)?;
    Ok((dim, records.into_iter().map(|r| (r.utterance_id.clone(), r)).collect()))
}

fn labeled(
    rows: &[&ManifestRow],
    index: &HashMap<String, EmbeddingRecord>,
    task: Task,
    source: &Path,
) -> Result<Vec<LabeledEmbedding>> {
    rows.iter()
        .map(|r| {
            let rec = index
                .get(&r.utterance_id)
                .ok_or_else(|| anyhow!("utterance {:?} has no embedding in {}", r.utterance_id, source.display()))?;
            Ok(LabeledEmbedding::new(rec, task.target(r.label)))
        })
        .collect()
}

#[derive(Serialize)]
struct HeadSummary {
    head: HeadKind,
    path: PathBuf,
    train_accuracy: f64,
    val_accuracy: Option<f64>,
    oob_accuracy: Option<f64>,
}

fn accuracy_of(model: &HeadModel, data: &[LabeledEmbedding]) -> Result<f64> {
    let mut hits = 0;
    for s in data {
        hits += (model.predict_scores(&s.x)?.argmax() == s.label) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}

fn cmd_embed_train(a: EmbedTrainArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let (_, index) = embedding_index(&a.embeddings)?;
    let has_splits = manifest.rows.iter().all(|r| r.split.is_some());
    let train_rows: Vec<&ManifestRow> = if has_splits {
        rows_in(&manifest, Split::Train)?
    } else {
        manifest.rows.iter().collect()
    };
    if train_rows.is_empty() {
        bail!("manifest {} has no train rows", a.manifest.display());
    }
    let train_set = labeled(&train_rows, &index, a.task, &a.embeddings)?;
    let val_set = if has_splits {
        labeled(&rows_in(&manifest, Split::Val)?, &index, a.task, &a.embeddings)?
    } else {
        Vec::new()
    };
    let config = HeadConfig {
        logreg: LogRegConfig {
            l2_lambda: a.l2_lambda,
            ..LogRegConfig::default()
        },
        lda_shrinkage: Some(a.shrinkage),
        forest: ForestConfig {
            n_trees: a.trees,
            min_leaf: a.min_leaf,
            max_features: None,
            seed: a.seed,
        },
    };
    let jobs: Vec<(HeadKind, PathBuf)> = match a.head {
        Some(kind) => vec![(kind, a.out.clone())],
        None => HeadKind::ALL
            .iter()
            .map(|&k| (k, a.out.join(format!("{}.spck", k.name()))))
            .collect(),
    };
    let mut summaries = Vec::new();
    for (kind, path) in jobs {
        let model = HeadModel::train(kind, &train_set, a.task.n_classes(), &config)
            .with_context(|| format!("training {kind} head"))?;
        write_checkpoint(&path, &model.to_checkpoint())?;
        summaries.push(HeadSummary {
            head: kind,
            train_accuracy: accuracy_of(&model, &train_set)?,
            val_accuracy: if val_set.is_empty() { None } else { Some(accuracy_of(&model, &val_set)?) },
            oob_accuracy: match &model {
                HeadModel::Forest(f) => f.oob_accuracy,
                _ => None,
            },
            path,
        });
    }
    print_json(&summaries)?;
    Ok(())
}

enum LoadedModel {
    Cnn(LeafCnn),
    Head(HeadModel, HashMap<String, EmbeddingRecord>),
}

fn load_model(model: &Path, embeddings: Option<&Path>) -> Result<LoadedModel> {
    let ck = read_checkpoint(model)?;
    Ok(match ck.kind {
        ModelKind::Cnn => LoadedModel::Cnn(
            LeafCnn::from_checkpoint(&ck).with_context(|| format!("loading {}", model.display()))?,
        ),
        _ => {
            let head = HeadModel::from_checkpoint(&ck).with_context(|| format!("loading {}", model.display()))?;
            let path = embeddings
                .ok_or_else(|| usage(format!("--embeddings is required for the {} model {}", ck.kind.name(), model.display())))?;
            let (dim, index) = embedding_index(path)?;
            if dim != head.dim() {
                bail!(
                    "{} holds {dim}-d embeddings but {} expects {}",
                    path.display(),
                    model.display(),
                    head.dim()
                );
            }
            LoadedModel::Head(head, index)
        }
    })
}

fn predict_rows(manifest: &Manifest, rows: &[&ManifestRow], model: &LoadedModel) -> Result<Vec<ClassScores>> {
    rows.par_iter()
        .map(|r| {
            let ctx = || format!("utterance {:?}", r.utterance_id);
            match model {
                LoadedModel::Cnn(m) => {
                    let clip = load_canonical(&manifest.audio_path(r)).with_context(ctx)?;
                    m.predict_utterance(&clip).with_context(ctx)
                }
                LoadedModel::Head(m, index) => {
                    let rec = index
                        .get(&r.utterance_id)
                        .ok_or_else(|| anyhow!("utterance {:?} has no embedding", r.utterance_id))?;
                    m.predict_scores(&rec.to_f64()).with_context(ctx)
                }
            }
        })
        .collect()
}

fn scoped_rows(manifest: &Manifest, split: Option<Split>) -> Result<Vec<&ManifestRow>> {
    let rows: Vec<&ManifestRow> = match split {
        Some(s) => rows_in(manifest, s)?,
        None => manifest.rows.iter().collect(),
    };
    if rows.is_empty() {
        bail!("no manifest rows in scope");
    }
    Ok(rows)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let rows = scoped_rows(&manifest, a.split)?;
    let model = load_model(&a.model, a.embeddings.as_deref())?;
    let scores = predict_rows(&manifest, &rows, &model)?;
    let k = scores[0].n_classes();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::from("utterance_id"), String::from("speaker_id")];
    header.extend((0..k).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for (r, s) in rows.iter().zip(&scores) {
        let mut rec = vec![r.utterance_id.clone(), r.speaker_id.clone()];
        rec.extend(s.probs().iter().map(|p| format!("{p:e}")));
        w.write_record(&rec)?;
    }
    write_atomic(&a.out, &w.into_inner().context("flushing predictions")?)?;
    Ok(())
}

/// Reads a prediction CSV into scores by utterance id.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, ClassScores>> {
    let ctx = || format!("predictions {}", path.display());
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(ctx)?;
    let headers: Vec<String> = reader.headers().with_context(ctx)?.iter().map(String::from).collect();
    let id_col = headers
        .iter()
        .position(|h| h == "utterance_id")
        .ok_or_else(|| anyhow!("missing column utterance_id")).with_context(ctx)?;
    let mut prob_cols = Vec::new();
    while let Some(i) = headers.iter().position(|h| *h == format!("p{}", prob_cols.len())) {
        prob_cols.push(i);
    }
    if prob_cols.len() < 2 {
        return Err(anyhow!("expected score columns p0, p1, ...")).with_context(ctx);
    }
    let mut out = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.with_context(ctx)?;
        let row = line + 2;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let probs = prob_cols
            .iter()
            .map(|&i| rec.get(i).unwrap_or_default().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("row {row}: unparsable score"))
            .with_context(ctx)?;
        let scores = ClassScores::new(probs).with_context(|| format!("row {row}")).with_context(ctx)?;
        if out.insert(id.clone(), scores).is_some() {
            return Err(anyhow!("row {row}: duplicate utterance_id {id:?}")).with_context(ctx);
        }
    }
    if out.is_empty() {
        return Err(anyhow!("no rows")).with_context(ctx);
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let rows = scoped_rows(&manifest, a.split)?;
    let scores: Vec<ClassScores> = match (&a.predictions, &a.model) {
        (Some(path), _) => {
            let mut preds = read_predictions(path)?;
            rows.iter()
                .map(|r| {
                    preds
                        .remove(&r.utterance_id)
                        .ok_or_else(|| anyhow!("utterance {:?} has no prediction in {}", r.utterance_id, path.display()))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(model)) => predict_rows(&manifest, &rows, &load_model(model, a.embeddings.as_deref())?)?,
        (None, None) => return Err(usage("one of --predictions or --model is required")),
    };
    let k = scores[0].n_classes();
    let task = match a.task {
        Some(t) if t.n_classes() != k => bail!("--task {} does not match {k}-class predictions", t.n_classes()),
        Some(t) => t,
        None => Task::from_n_classes(k)?,
    };
    if let Some(col) = &a.slice_by {
        if manifest.rows.iter().all(|r| r.field(col).is_none()) {
            return Err(usage(format!("--slice-by: manifest has no values in column {col:?}")));
        }
    }
    let items = rows
        .iter()
        .zip(scores)
        .map(|(r, scores)| {
            let reference_percent = match &a.ref_percent_column {
                Some(col) => match r.field(col).filter(|v| !v.trim().is_empty()) {
                    Some(v) => Some(v.trim().parse::<f64>().with_context(|| {
                        format!("utterance {:?}: column {col:?} value {v:?} is not a number", r.utterance_id)
                    })?),
                    None => None,
                },
                None => None,
            };
            Ok(EvalItem {
                utterance_id: r.utterance_id.clone(),
                speaker_id: r.speaker_id.clone(),
                reference: task.target(r.label),
                scores,
                slice: a.slice_by.as_ref().and_then(|c| r.field(c)),
                reference_percent,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(
        &items,
        task,
        &EvalOptions {
            class_map: a.class_map,
        },
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &a.out {
        write_atomic(path, json.as_bytes())?;
    }
    if a.pretty {
        print!("{}", render_report(&serde_json::to_value(&report)?));
    } else {
        println!("{json}");
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    print!("{}", render_report(&read_report(&a.input)?));
    Ok(())
}

/// Loads a report written by `evaluate --out`.
pub fn read_report(path: &Path) -> Result<serde_json::Value> {
    let bytes = crate::io::read_bytes(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}
