//! `seqtag` — one binary for the whole pipeline: BPE training, fold
//! splitting, corpus statistics, model training, cross-validation,
//! prediction, and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime or
//! numeric error. Diagnostics go to stderr, results to stdout or the
//! paths given by `--out`-style flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use seqtag_core::checkpoint::{self, CheckpointError};
use seqtag_core::corpus::{
    class_distribution, parse_conll, repair_bio, split_kfold, to_conll, validate_bio, Corpus,
    CorpusError, Tagset,
};
use seqtag_core::encoder::EncoderConfig;
use seqtag_core::eval::{
    check_tokens_match, parse_metrics, phrase_f1_with, render_metrics, render_report, word_f1,
    EvalError, EvalReport, OrphanPolicy, ReportStyle,
};
use seqtag_core::rng::DEFAULT_SEED;
use seqtag_core::tokenizer::{train_bpe, word_counts, MergeTable, TokenizerError};
use seqtag_core::trainer::{
    cross_validate, resume, train, TrainConfig, TrainError,
};

const SEED_ENV: &str = "SEQTAG_SEED";

#[derive(Parser)]
#[command(
    name = "seqtag",
    version,
    about = "Sequence labeling with BPE subwords, a self-attention encoder, and a linear-chain CRF"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a BPE merge table from a token file.
    #[command(name = "bpe-train")]
    BpeTrain(BpeTrainArgs),
    /// Split a corpus into k folds.
    Split(SplitArgs),
    /// Corpus statistics: class distribution, token and sentence totals.
    Stats(StatsArgs),
    /// Train a model.
    Train(TrainArgs),
    /// K-fold cross-validation.
    Cv(CvArgs),
    /// Tag a token file with a trained model.
    Predict(PredictArgs),
    /// Score predictions against gold in CoNLL format.
    Eval(EvalArgs),
    /// Re-render a saved metrics file as a text table.
    Report(ReportArgs),
}

#[derive(Args)]
struct TagsetArgs {
    /// Builtin tagset name: `peyma` or `arman`.
    #[arg(long, conflicts_with = "tagset_file")]
    tagset: Option<String>,
    /// File with one class name per line.
    #[arg(long)]
    tagset_file: Option<PathBuf>,
}

#[derive(Args)]
struct BpeTrainArgs {
    /// Input file: one token per line (a tag column is ignored).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    vocab_size: usize,
    #[arg(long)]
    out_vocab: PathBuf,
    #[arg(long)]
    out_merges: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    tagset: TagsetArgs,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Fold files are written as `<prefix>.fold<i>.conll`.
    #[arg(long)]
    out_prefix: String,
    /// Promote orphan I- tags to B- while parsing.
    #[arg(long)]
    repair: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    tagset: TagsetArgs,
    #[arg(long)]
    repair: bool,
    /// Also write a machine-readable TSV (class, phrase_count, token_count).
    #[arg(long)]
    table: Option<PathBuf>,
}

/// Hyperparameters shared by `train` and `cv`. Unset flags fall back to
/// the `--config` file, then (for the seed) to `SEQTAG_SEED`, then to
/// built-in defaults.
#[derive(Args, Clone)]
struct HyperArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Penalize O->I-c and B-c->I-c' transitions at initialization.
    #[arg(long)]
    constrain_transitions: bool,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// BPE vocabulary budget when training a tokenizer from the corpus.
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "train")]
    train: PathBuf,
    #[command(flatten)]
    tagset: TagsetArgs,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Load an existing BPE vocabulary instead of training one.
    #[arg(long, requires = "merges")]
    vocab: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    merges: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue training from a saved checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    repair: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    tagset: TagsetArgs,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    repair: bool,
    /// Write pooled metrics (flat key=value) here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value = "summary")]
    style: String,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tokenized input: one token per line (a tag column is ignored).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[command(flatten)]
    tagset: TagsetArgs,
    #[arg(long, default_value = "per-tag")]
    style: String,
    /// Write full-precision metrics (flat key=value) here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// What an I- tag without a live span does: `open` (conlleval) or `drop`.
    #[arg(long, default_value = "open")]
    orphan_policy: String,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, default_value = "per-tag")]
    style: String,
}

/// Errors carrying their process exit code.
enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::BadTrainConfig(_) | TrainError::VocabMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            TrainError::Alignment { .. }
            | TrainError::EmptyDev
            | TrainError::TagsetMismatch
            | TrainError::Corpus(_)
            | TrainError::Tokenizer(_)
            | TrainError::Eval(_) => CliError::Data(e.to_string()),
            TrainError::NonFiniteLoss { .. } | TrainError::Encoder(_) | TrainError::Crf(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn resolve_tagset(args: &TagsetArgs) -> Result<Tagset, CliError> {
    match (&args.tagset, &args.tagset_file) {
        (Some(name), None) => match name.as_str() {
            "peyma" => Ok(Tagset::peyma()),
            "arman" => Ok(Tagset::arman()),
            other => Err(CliError::Usage(format!(
                "unknown tagset {other:?}: builtin tagsets are `peyma` and `arman`"
            ))),
        },
        (None, Some(path)) => {
            let text = read_file(path)?;
            let classes: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("custom");
            Tagset::new(name, &classes).map_err(CliError::from)
        }
        _ => Err(CliError::Usage(
            "exactly one of --tagset or --tagset-file is required".to_string(),
        )),
    }
}

fn load_corpus(path: &Path, tagset: &Tagset, repair: bool) -> Result<Corpus, CliError> {
    let text = read_file(path)?;
    let mut corpus = parse_conll(&text, tagset, &path.display().to_string())?;
    if repair {
        corpus.sentences = corpus
            .sentences
            .iter()
            .map(|s| repair_bio(s, tagset))
            .collect();
    }
    Ok(corpus)
}

fn parse_style(name: &str) -> Result<ReportStyle, CliError> {
    ReportStyle::parse(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown style {name:?}: expected per-tag, per-class, or summary"
        ))
    })
}

/// Key=value config file; `#` starts a comment line.
struct ConfigFile(BTreeMap<String, String>);

impl ConfigFile {
    const KEYS: [&'static str; 19] = [
        "epochs",
        "batch-size",
        "learning-rate",
        "beta1",
        "beta2",
        "epsilon",
        "weight-decay",
        "grad-clip-norm",
        "seed",
        "patience",
        "threads",
        "constrain-transitions",
        "d-model",
        "n-heads",
        "n-layers",
        "d-ff",
        "max-len",
        "dropout",
        "vocab-size",
    ];

    fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = read_file(path)?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "{}:{}: expected key=value",
                        path.display(),
                        idx + 1
                    )));
                };
                let key = key.trim().to_string();
                if !Self::KEYS.contains(&key.as_str()) {
                    return Err(CliError::Usage(format!(
                        "{}:{}: unknown config key {key:?}",
                        path.display(),
                        idx + 1
                    )));
                }
                map.insert(key, value.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}: cannot parse {raw:?} as u64"))),
        Err(_) => Ok(None),
    }
}

/// Flag > config file > SEQTAG_SEED env > built-in default.
fn resolve_seed(flag: Option<u64>, config: &ConfigFile) -> Result<u64, CliError> {
    Ok(flag
        .or(config.get("seed")?)
        .or(env_seed()?)
        .unwrap_or(DEFAULT_SEED))
}

struct ResolvedHyper {
    train: TrainConfig,
    encoder: EncoderConfig,
    vocab_size: usize,
}

fn resolve_hyper(args: &HyperArgs) -> Result<ResolvedHyper, CliError> {
    let config = ConfigFile::load(args.config.as_ref())?;
    let defaults = TrainConfig::default();
    let seed = resolve_seed(args.seed, &config)?;
    let train = TrainConfig {
        epochs: args.epochs.or(config.get("epochs")?).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(config.get("batch-size")?)
            .unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(config.get("learning-rate")?)
            .unwrap_or(defaults.learning_rate),
        beta1: args.beta1.or(config.get("beta1")?).unwrap_or(defaults.beta1),
        beta2: args.beta2.or(config.get("beta2")?).unwrap_or(defaults.beta2),
        epsilon: args
            .epsilon
            .or(config.get("epsilon")?)
            .unwrap_or(defaults.epsilon),
        weight_decay: args
            .weight_decay
            .or(config.get("weight-decay")?)
            .unwrap_or(defaults.weight_decay),
        grad_clip_norm: args
            .grad_clip_norm
            .or(config.get("grad-clip-norm")?)
            .unwrap_or(defaults.grad_clip_norm),
        seed,
        patience: args
            .patience
            .or(config.get("patience")?)
            .unwrap_or(defaults.patience),
        dev_fraction: defaults.dev_fraction,
        threads: args
            .threads
            .or(config.get("threads")?)
            .unwrap_or(defaults.threads),
        constrain_transitions: args.constrain_transitions
            || config.get("constrain-transitions")?.unwrap_or(false),
    };
    let encoder = EncoderConfig {
        vocab_size: 0, // set from the merge table by the caller
        d_model: args.d_model.or(config.get("d-model")?).unwrap_or(64),
        n_heads: args.n_heads.or(config.get("n-heads")?).unwrap_or(4),
        n_layers: args.n_layers.or(config.get("n-layers")?).unwrap_or(2),
        d_ff: args.d_ff.or(config.get("d-ff")?).unwrap_or(256),
        max_len: args.max_len.or(config.get("max-len")?).unwrap_or(128),
        dropout_rate: args.dropout.or(config.get("dropout")?).unwrap_or(0.1),
        seed,
    };
    let vocab_size = args
        .vocab_size
        .or(config.get("vocab-size")?)
        .unwrap_or(1000);
    Ok(ResolvedHyper {
        train,
        encoder,
        vocab_size,
    })
}

/// Lenient token reader for `bpe-train` and `predict`: first column per
/// line, blank lines separate sentences.
fn read_token_sentences(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = read_file(path)?;
    let mut sentences = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for raw in text.split('\n') {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let token = line
            .split(['\t', ' '])
            .next()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| {
                CliError::Data(format!("{}: blank token column", path.display()))
            })?;
        current.push(token.to_string());
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

fn run_bpe_train(args: &BpeTrainArgs) -> Result<(), CliError> {
    let sentences = read_token_sentences(&args.input)?;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for sentence in &sentences {
        for token in sentence {
            *counts.entry(token.clone()).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no tokens found",
            args.input.display()
        )));
    }
    let table = train_bpe(&counts, args.vocab_size)?;
    write_file(&args.out_vocab, &table.vocab_text())?;
    write_file(&args.out_merges, &table.merges_text())?;
    println!(
        "vocab {} subwords ({} merges) -> {} / {}",
        table.vocab_size(),
        table.merges().len(),
        args.out_vocab.display(),
        args.out_merges.display()
    );
    Ok(())
}

fn run_split(args: &SplitArgs) -> Result<(), CliError> {
    let tagset = resolve_tagset(&args.tagset)?;
    let corpus = load_corpus(&args.input, &tagset, args.repair)?;
    let config = ConfigFile(BTreeMap::new());
    let seed = resolve_seed(args.seed, &config)?;
    let split = split_kfold(&corpus, args.k, seed)?;
    for fold in 0..args.k {
        let indices = split.fold_indices(fold);
        let subset = corpus.subset(&indices)?;
        let path = PathBuf::from(format!("{}.fold{fold}.conll", args.out_prefix));
        write_file(&path, &to_conll(&subset))?;
        println!("fold{fold}: {} sentences -> {}", indices.len(), path.display());
    }
    Ok(())
}

fn run_stats(args: &StatsArgs) -> Result<(), CliError> {
    let tagset = resolve_tagset(&args.tagset)?;
    let corpus = load_corpus(&args.input, &tagset, args.repair)?;
    let distribution = class_distribution(&corpus);
    let violations: usize = corpus
        .sentences
        .iter()
        .map(|s| validate_bio(s, &tagset).len())
        .sum();
    println!("source={}", corpus.source_name);
    println!("tagset={}", tagset.name());
    println!("sentences={}", distribution.total_sentences);
    println!("tokens={}", distribution.total_tokens);
    println!("bio_violations={violations}");
    for (class, name) in tagset.classes().iter().enumerate() {
        println!("class.{name}.phrases={}", distribution.phrase_counts[class]);
        println!("class.{name}.tokens={}", distribution.token_counts[class]);
    }
    if let Some(table_path) = &args.table {
        let mut table = String::from("class\tphrase_count\ttoken_count\n");
        for (class, name) in tagset.classes().iter().enumerate() {
            table.push_str(&format!(
                "{name}\t{}\t{}\n",
                distribution.phrase_counts[class], distribution.token_counts[class]
            ));
        }
        write_file(table_path, &table)?;
    }
    Ok(())
}

fn load_or_train_merges(
    args: &TrainArgs,
    corpus: &Corpus,
    vocab_size: usize,
) -> Result<MergeTable, CliError> {
    match (&args.vocab, &args.merges) {
        (Some(vocab_path), Some(merges_path)) => {
            let vocab_text = read_file(vocab_path)?;
            let merges_text = read_file(merges_path)?;
            Ok(MergeTable::from_text(&vocab_text, &merges_text)?)
        }
        _ => Ok(train_bpe(&word_counts(corpus), vocab_size)?),
    }
}

fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let tagset = resolve_tagset(&args.tagset)?;
    let train_corpus = load_corpus(&args.train, &tagset, args.repair)?;
    let dev_corpus = args
        .dev
        .as_ref()
        .map(|path| load_corpus(path, &tagset, args.repair))
        .transpose()?;
    let hyper = resolve_hyper(&args.hyper)?;

    let checkpoint = match &args.resume {
        Some(resume_path) => {
            let loaded = checkpoint::load(resume_path)?;
            resume(loaded, &train_corpus, dev_corpus.as_ref(), &hyper.train)?
        }
        None => {
            let merges = load_or_train_merges(args, &train_corpus, hyper.vocab_size)?;
            let encoder_config = EncoderConfig {
                vocab_size: merges.vocab_size(),
                ..hyper.encoder
            };
            train(
                &train_corpus,
                dev_corpus.as_ref(),
                merges,
                encoder_config,
                &hyper.train,
            )?
        }
    };

    for entry in &checkpoint.history {
        println!(
            "epoch {} train_loss {:.6} dev_f1 {:.6}",
            entry.epoch, entry.train_loss, entry.dev_f1
        );
    }
    println!(
        "best epoch {} dev_f1 {:.6}",
        checkpoint.best.epoch, checkpoint.best.dev_f1
    );
    checkpoint::save(&checkpoint, &args.out)?;
    println!("saved {}", args.out.display());
    Ok(())
}

fn run_cv(args: &CvArgs) -> Result<(), CliError> {
    let style = parse_style(&args.style)?;
    let tagset = resolve_tagset(&args.tagset)?;
    let corpus = load_corpus(&args.input, &tagset, args.repair)?;
    let hyper = resolve_hyper(&args.hyper)?;
    let outcome = cross_validate(
        &corpus,
        args.k,
        hyper.vocab_size,
        hyper.encoder,
        &hyper.train,
    )?;
    for fold in &outcome.folds {
        println!(
            "fold {}: train {} test {} epochs {} best_dev_f1 {:.4} phrase_f1 {:.4} word_f1 {:.4}",
            fold.fold,
            fold.train_sentences,
            fold.test_sentences,
            fold.epochs_run,
            fold.best_dev_f1,
            fold.report.phrase_total().f1(),
            fold.report.word_total().f1(),
        );
    }
    println!("pooled:");
    print!("{}", render_report(&outcome.pooled, style));
    if let Some(metrics_path) = &args.metrics {
        write_file(metrics_path, &render_metrics(&outcome.pooled))?;
    }
    Ok(())
}

fn run_predict(args: &PredictArgs) -> Result<(), CliError> {
    let loaded = checkpoint::load(&args.model)?;
    let model = loaded.best_model();
    let sentences = read_token_sentences(&args.input)?;
    if sentences.is_empty() {
        write_file(&args.out, "")?;
        return Ok(());
    }
    let mut out = String::new();
    let mut skipped = 0usize;
    for (index, tokens) in sentences.iter().enumerate() {
        let tags = match model.predict_sentence(tokens) {
            Ok(tags) => tags,
            Err(TrainError::Tokenizer(TokenizerError::WordTooLong { word_index, .. })) => {
                eprintln!(
                    "warning: sentence {index}: word {word_index} exceeds the subword budget; \
                     emitting all-O tags"
                );
                skipped += 1;
                vec![seqtag_core::corpus::LabelId::OUTSIDE; tokens.len()]
            }
            Err(other) => return Err(other.into()),
        };
        for (token, tag) in tokens.iter().zip(&tags) {
            out.push_str(token);
            out.push('\t');
            out.push_str(model.tagset.label_name(*tag));
            out.push('\n');
        }
        out.push('\n');
    }
    write_file(&args.out, &out)?;
    println!(
        "wrote {} sentences to {}{}",
        sentences.len(),
        args.out.display(),
        if skipped > 0 {
            format!(" ({skipped} skipped as all-O)")
        } else {
            String::new()
        }
    );
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let style = parse_style(&args.style)?;
    let policy = match args.orphan_policy.as_str() {
        "open" => OrphanPolicy::Open,
        "drop" => OrphanPolicy::Drop,
        other => {
            return Err(CliError::Usage(format!(
                "unknown orphan policy {other:?}: expected open or drop"
            )))
        }
    };
    let tagset = resolve_tagset(&args.tagset)?;
    let gold = load_corpus(&args.gold, &tagset, false)?;
    let pred = load_corpus(&args.pred, &tagset, false)?;
    check_tokens_match(&gold, &pred)?;
    let gold_tags: Vec<_> = gold.sentences.iter().map(|s| s.tags.clone()).collect();
    let pred_tags: Vec<_> = pred.sentences.iter().map(|s| s.tags.clone()).collect();
    let report = EvalReport {
        word_tags: word_f1(&gold_tags, &pred_tags, &tagset)?,
        phrase_classes: phrase_f1_with(&gold_tags, &pred_tags, &tagset, policy)?,
        tagset,
    };
    print!("{}", render_report(&report, style));
    if let Some(metrics_path) = &args.metrics {
        write_file(metrics_path, &render_metrics(&report))?;
    }
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<(), CliError> {
    let style = parse_style(&args.style)?;
    let text = read_file(&args.metrics)?;
    let report = parse_metrics(&text)?;
    print!("{}", render_report(&report, style));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BpeTrain(args) => run_bpe_train(args),
        Command::Split(args) => run_split(args),
        Command::Stats(args) => run_stats(args),
        Command::Train(args) => run_train(args),
        Command::Cv(args) => run_cv(args),
        Command::Predict(args) => run_predict(args),
        Command::Eval(args) => run_eval(args),
        Command::Report(args) => run_report(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version print to stdout and exit 0; real usage
            // errors exit 1.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.code())
        }
    }
}
