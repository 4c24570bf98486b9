use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use spanrel_core::corpus::{load_corpus, parse_sentence};
use spanrel_core::evaluation::{self, BucketAxis, Bucket, MatchPolicy};
use spanrel_core::training::{self, EpochLog, Stream, TrainSettings};
use spanrel_core::{load_checkpoint, save_checkpoint, Ablation, Fingerprint, LabelVocab, Model, Preset, RunConfig, Scores, Sentence};

#[derive(Parser, Debug)]
#[command(name = "spanrel", version, about = "Two-phase span-based joint entity and relation extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, the epoch log and metrics.
    Train(TrainArgs),
    /// Score a checkpoint or a predictions file against gold annotations.
    Evaluate(EvaluateArgs),
    /// Annotate JSON-lines sentences with a trained checkpoint.
    Predict(PredictArgs),
    /// Report label counts, imbalance ratios and entity-distance statistics.
    Audit(AuditArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set training.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides).context("loading configuration")
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Named architecture row: full, no-two-phase, no-bi-features,
    /// no-multi-features, no-both-features, no-gated or base.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Output directory (defaults to `output.dir` from the config).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint directory whose predictions are scored.
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Pre-computed predictions in the corpus format.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Refuse checkpoints whose fingerprint differs from this file.
    #[arg(long, requires = "checkpoint")]
    expect: Option<PathBuf>,
    /// Gold corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "conll04")]
    preset: Preset,
    /// Relation types matched regardless of direction.
    #[arg(long = "symmetric", value_name = "LABEL")]
    symmetric: Vec<String>,
    /// Add F1 by entity length.
    #[arg(long)]
    by_length: bool,
    /// Add F1 by entity distance.
    #[arg(long)]
    by_distance: bool,
    /// Add macro-averaged and per-type scores.
    #[arg(long = "macro")]
    macro_average: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, requires = "checkpoint")]
    expect: Option<PathBuf>,
    /// Input JSON lines, `-` for stdin.
    #[arg(long, short, default_value = "-")]
    input: PathBuf,
    /// Output JSON lines, `-` for stdout.
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Corpus to audit (defaults to `corpus.train`).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Sampling seed (defaults to `sampling.seed`, then `training.seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Audit(args) => cmd_audit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_corpus(path: &Path, vocab: Option<&LabelVocab>) -> Result<(Vec<Sentence>, LabelVocab)> {
    load_corpus(path, vocab).with_context(|| format!("reading corpus {}", path.display()))
}

fn open_checkpoint(dir: &Path, expect: Option<&Path>) -> Result<Model> {
    let expected: Option<Fingerprint> = match expect {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    load_checkpoint(dir, expected.as_ref()).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn predict_all(model: &Model, sentences: &[Sentence]) -> Result<Vec<Sentence>> {
    sentences
        .iter()
        .map(|s| model.predict_sentence(s).with_context(|| format!("predicting sentence {}", s.id)))
        .collect()
}

#[derive(Serialize)]
struct TrainMetrics {
    ablation: Option<String>,
    epochs: usize,
    final_loss: f64,
    train: Scores,
    dev: Option<Scores>,
    best_epoch: Option<usize>,
    best_dev: Option<Scores>,
    trainable_parameters: usize,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(ablation) = args.ablation {
        cfg.apply_ablation(ablation);
    }
    let out_dir = args.output.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let Some(train_path) = cfg.corpus.train.clone() else {
        bail!("corpus.train is not set");
    };
    let vocab = cfg
        .corpus
        .vocab
        .as_ref()
        .map(|p| LabelVocab::read(p).with_context(|| format!("reading vocab {}", p.display())))
        .transpose()?;
    let (train, vocab) = read_corpus(&train_path, vocab.as_ref())?;
    if train.is_empty() {
        bail!("training corpus {} is empty", train_path.display());
    }
    let dev = match &cfg.corpus.dev {
        Some(p) => Some(read_corpus(p, Some(&vocab))?.0),
        None => None,
    };
    log::info!(
        "training on {} sentences ({} entity types, {} relation types)",
        train.len(),
        vocab.num_entity_types(),
        vocab.num_relation_types()
    );

    let model = cfg.build_model(&train, vocab)?;
    let trainable_parameters = model.num_trainable_params();
    let settings = TrainSettings {
        train: cfg.training.clone(),
        sampling: cfg.sampling.clone(),
        dev: dev.as_deref(),
        policy: cfg.policy(),
    };
    let outcome = training::train(model, &train, &settings)?;

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    write_json(&out_dir.join("log.json"), &outcome.log)?;
    save_checkpoint(&outcome.model, out_dir.join("last"))?;

    let mut best_dev = None;
    if let Some((epoch, params)) = &outcome.best {
        let mut best = outcome.model.clone();
        best.params = params.clone();
        save_checkpoint(&best, out_dir.join("best"))?;
        best_dev = outcome.log[epoch - 1].dev.clone();
    }

    let train_scores = evaluation::score(&train, &predict_all(&outcome.model, &train)?, &settings.policy)?;
    let last: &EpochLog = outcome.log.last().expect("at least one epoch");
    let metrics = TrainMetrics {
        ablation: args.ablation.map(|a| a.name().to_string()),
        epochs: outcome.log.len(),
        final_loss: last.loss.total,
        train: train_scores,
        dev: last.dev.clone(),
        best_epoch: outcome.best.as_ref().map(|(e, _)| *e),
        best_dev,
        trainable_parameters,
    };
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    print!("{}", evaluation::format_scores(&metrics.train));
    log::info!("wrote {}", out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    preset: Preset,
    sentences: usize,
    scores: Scores,
    #[serde(skip_serializing_if = "Option::is_none")]
    macro_scores: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    by_length: Option<Vec<Bucket>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    by_distance: Option<Vec<Bucket>>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (gold, _) = read_corpus(&args.corpus, None)?;
    if gold.is_empty() {
        bail!("gold corpus {} has no sentences", args.corpus.display());
    }
    let pred = match (&args.checkpoint, &args.predictions) {
        (Some(dir), _) => predict_all(&open_checkpoint(dir, args.expect.as_deref())?, &gold)?,
        (None, Some(path)) => read_corpus(path, None)?.0,
        (None, None) => bail!("either --checkpoint or --predictions is required"),
    };
    let mut policy: MatchPolicy = args.preset.policy();
    policy.symmetric_relations = args.symmetric.clone();

    let scores = evaluation::score(&gold, &pred, &policy)?;
    let mut text = format!("preset {} over {} sentences\n", args.preset, gold.len());
    text.push_str(&evaluation::format_scores(&scores));
    if scores.head_fallbacks > 0 {
        text.push_str(&format!("{} gold entities lack a head region and were matched on the full span\n", scores.head_fallbacks));
    }

    let macro_scores = if args.macro_average {
        let by_type = evaluation::score_by_type(&gold, &pred, &policy)?;
        let (ner, re) = by_type.macro_scores();
        text.push_str("\nmacro-averaged\n");
        text.push_str(&evaluation::format_scores(&Scores {
            ner,
            re,
            head_fallbacks: scores.head_fallbacks,
        }));
        Some(json!({ "ner": ner, "re": re, "per_type": by_type }))
    } else {
        None
    };
    let mut bucketed = |on: bool, axis: BucketAxis, title: &str| -> Result<Option<Vec<Bucket>>> {
        if !on {
            return Ok(None);
        }
        let buckets = evaluation::bucketed_f1(&gold, &pred, &policy, axis)?;
        text.push('\n');
        text.push_str(&evaluation::format_buckets(title, &buckets));
        Ok(Some(buckets))
    };
    let by_length = bucketed(args.by_length, BucketAxis::EntityLength, "NER F1 by entity length")?;
    let by_distance = bucketed(args.by_distance, BucketAxis::EntityDistance, "RE F1 by entity distance")?;

    print!("{text}");
    if let Some(path) = &args.json {
        let report = EvaluationReport {
            preset: args.preset,
            sentences: gold.len(),
            scores,
            macro_scores,
            by_length,
            by_distance,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = open_checkpoint(&args.checkpoint, args.expect.as_deref())?;
    let input: Box<dyn BufRead> = if args.input == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let f = fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
        Box::new(BufReader::new(f))
    };
    let output: Box<dyn Write> = if args.output == Path::new("-") {
        Box::new(io::stdout().lock())
    } else {
        let f = fs::File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
        Box::new(f)
    };
    let mut out = BufWriter::new(output);
    let (mut ok, mut failed) = (0usize, 0usize);
    for (i, line) in input.lines().enumerate() {
        let line = line.context("reading input")?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_sentence(&line, i + 1, false)
            .and_then(|s| model.predict_sentence(&s))
            .map(|s| serde_json::to_value(s).expect("sentence serializes"));
        match record {
            Ok(value) => {
                ok += 1;
                writeln!(out, "{value}")?;
            }
            Err(e) => {
                failed += 1;
                log::warn!("line {}: {e}", i + 1);
                writeln!(out, "{}", json!({ "line": i + 1, "error": e.to_string() }))?;
            }
        }
    }
    out.flush()?;
    log::info!("predicted {ok} sentences, {failed} errors");
    Ok(())
}

#[derive(Serialize)]
struct AuditReport {
    sentences: usize,
    seed: u64,
    counts: spanrel_core::LabelCounts,
    ratios: Vec<evaluation::AuditRow>,
    distance: Vec<evaluation::DistanceRow>,
}

fn cmd_audit(args: AuditArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let Some(path) = args.corpus.clone().or_else(|| cfg.corpus.train.clone()) else {
        bail!("no corpus given (use --corpus or set corpus.train)");
    };
    let (sentences, vocab) = read_corpus(&path, None)?;
    let seed = args.seed.or(cfg.sampling.seed).unwrap_or(cfg.training.seed);
    let mut rng = training::stream_rng(seed, Stream::Sampling);
    let counts = evaluation::sampled_label_counts(
        &sentences,
        &vocab,
        cfg.spans.max_width,
        cfg.sampling.neg_entities,
        cfg.sampling.neg_relations,
        &mut rng,
    );
    let ratios = evaluation::audit_distributions(&counts)?;
    let distance = evaluation::distance_type_stats(&sentences);
    match args.format {
        Format::Markdown => {
            println!("## Label counts ({} sentences, seed {seed})\n", sentences.len());
            println!("{}", evaluation::counts_markdown(&counts));
            println!("## Imbalance ratios\n");
            println!("{}", evaluation::audit_markdown(&ratios));
            println!("## Entity distance by type pair\n");
            print!("{}", evaluation::distance_markdown(&distance));
        }
        Format::Json => {
            let report = AuditReport {
                sentences: sentences.len(),
                seed,
                counts,
                ratios,
                distance,
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
