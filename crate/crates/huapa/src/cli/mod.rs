//! The `huapa` binary: reproducible training runs, checkpoint evaluation,
//! attention export, and synthetic corpus generation.
//!
//! A run is described by a TOML config file; command-line flags override
//! individual fields. All machine-readable outputs are line-delimited JSON
//! records carrying a `schema` version field. Exit codes: 0 success,
//! 1 usage/config error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    self, build_vocab, encode, gen_synthetic_opts, parse_corpus, write_corpus, CorpusFormat,
    DataError, EncodeStats, EncodedDoc, Vocabulary,
};
use crate::model::checkpoint::{self, CkptError};
use crate::model::{forward_huapa, HuapaParams, ModelDims, ModelError, Variant};
use crate::training::{evaluate, train, EvalResult, TrainConfig, TrainError};

mod export;

pub use export::AttnRecord;


#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Data(DataError),
    Checkpoint(CkptError),
    Numeric(TrainError),
    Io { path: String, msg: String },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Data(e) => e.fmt(f),
            CliError::Checkpoint(e) => e.fmt(f),
            CliError::Numeric(e) => e.fmt(f),
            CliError::Io { path, msg } => write!(f, "{path}: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl From<CkptError> for CliError {
    fn from(e: CkptError) -> Self {
        CliError::Checkpoint(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptyDataset => CliError::Data(DataError::EmptyCorpus),
            TrainError::InvalidConfig { msg } => CliError::Config(msg),
            other => CliError::Numeric(other),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Numeric(TrainError::Model(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Checkpoint(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Numeric(_) => "numeric",
            CliError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.display().to_string(), msg: e.to_string() }
}

// ---- run configuration ----

fn default_separator() -> String {
    "\t\t".to_string()
}

fn default_delimiter() -> String {
    "<sssss>".to_string()
}

fn default_true() -> bool {
    true
}

fn default_min_frequency() -> u32 {
    2
}

fn default_max_sentences() -> usize {
    40
}

fn default_max_words() -> usize {
    50
}

fn default_classes() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub classes: usize,
    pub field_separator: String,
    pub sentence_delimiter: String,
    pub lowercase: bool,
    pub min_frequency: u32,
    pub max_sentences: usize,
    pub max_words: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: default_classes(),
            field_separator: default_separator(),
            sentence_delimiter: default_delimiter(),
            lowercase: default_true(),
            min_frequency: default_min_frequency(),
            max_sentences: default_max_sentences(),
            max_words: default_max_words(),
        }
    }
}

impl DataConfig {
    fn corpus_format(&self) -> CorpusFormat {
        CorpusFormat {
            classes: self.classes,
            field_separator: self.field_separator.clone(),
            sentence_delimiter: self.sentence_delimiter.clone(),
            lowercase: self.lowercase,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: String,
    pub word_dim: usize,
    pub user_dim: usize,
    pub product_dim: usize,
    pub hidden: usize,
    pub attention: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: "huapa".to_string(),
            word_dim: 200,
            user_dim: 200,
            product_dim: 200,
            hidden: 100,
            attention: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub batch_size: usize,
    pub max_epochs: u32,
    pub patience: u32,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 0.005,
            lambda1: 0.4,
            lambda2: 0.3,
            lambda3: 0.3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 1,
            clip_norm: 0.0,
        }
    }
}

/// Everything a training run needs: file paths, data handling, model sizes,
/// optimization settings, and the architecture variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        Variant::parse(&self.model.variant).ok_or_else(|| {
            CliError::Config(format!(
                "unknown variant {:?}; expected huapa, hua, hpa or no-attention-baseline",
                self.model.variant
            ))
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            word_dim: self.model.word_dim,
            user_dim: self.model.user_dim,
            product_dim: self.model.product_dim,
            hidden: self.model.hidden,
            attention: self.model.attention,
            classes: self.data.classes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            lambda: [self.train.lambda1, self.train.lambda2, self.train.lambda3],
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed: self.train.seed,
            clip_norm: self.train.clip_norm,
            dims: self.dims(),
        }
    }
}

// ---- command line ----

#[derive(Parser, Debug)]
#[command(name = "huapa", version, about = "Dual-view attention sentiment engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a model from a TOML run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Export attention weights for selected documents.
    AttnExport(ExportArgs),
    /// Generate a synthetic corpus with latent user/product effects.
    GenCorpus(GenArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<u32>,
    #[arg(long)]
    patience: Option<u32>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = &self.variant {
            cfg.model.variant = v.clone();
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.lambda1 {
            t.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            t.lambda2 = v;
        }
        if let Some(v) = self.lambda3 {
            t.lambda3 = v;
        }
        if let Some(v) = self.clip_norm {
            t.clip_norm = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.paths.out_dir = v.clone();
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "\t\t")]
    field_separator: String,
    #[arg(long, default_value = "<sssss>")]
    sentence_delimiter: String,
    #[arg(long, default_value_t = true)]
    lowercase: bool,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Zero-based document indices into the corpus file.
    #[arg(long, value_delimiter = ',', required = true)]
    indices: Vec<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "\t\t")]
    field_separator: String,
    #[arg(long, default_value = "<sssss>")]
    sentence_delimiter: String,
    #[arg(long, default_value_t = true)]
    lowercase: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    users: usize,
    #[arg(long, default_value_t = 20)]
    products: usize,
    #[arg(long, default_value_t = 2000)]
    docs: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Draw all user biases and product qualities as zero.
    #[arg(long, default_value_t = false)]
    unbiased: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Entry point used by the binary. Prints a single-line error record to
/// stderr on failure and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string());
            report(&err);
            return err.exit_code();
        }
    };
    let outcome = match cli.cmd {
        Cmd::Train(args) => run_train(args),
        Cmd::Eval(args) => run_eval(args),
        Cmd::AttnExport(args) => run_export(args),
        Cmd::GenCorpus(args) => run_gen(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            report(&e);
            e.exit_code()
        }
    }
}

fn report(e: &CliError) {
    let record = serde_json::json!({
        "schema": "huapa.error.v1",
        "kind": e.kind(),
        "exit": e.exit_code(),
        "message": e.to_string(),
    });
    eprintln!("{record}");
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    args.apply(&mut cfg);
    let summary = cmd_train(&cfg)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let fmt_overrides = FormatOverrides {
        field_separator: args.field_separator,
        sentence_delimiter: args.sentence_delimiter,
        lowercase: args.lowercase,
    };
    let result = cmd_eval(&args.checkpoint, &args.vocab, &args.corpus, &fmt_overrides)?;
    println!("accuracy {:.3}", result.accuracy);
    println!("rmse {:.3}", result.rmse);
    let record = serde_json::json!({
        "schema": "huapa.eval.v1",
        "accuracy": result.accuracy,
        "rmse": result.rmse,
        "docs": result.confusion.iter().flatten().sum::<u64>(),
    });
    println!("{record}");
    Ok(())
}

fn run_export(args: ExportArgs) -> Result<(), CliError> {
    let fmt_overrides = FormatOverrides {
        field_separator: args.field_separator,
        sentence_delimiter: args.sentence_delimiter,
        lowercase: args.lowercase,
    };
    let files = cmd_attn_export(&args.checkpoint, &args.vocab, &args.corpus, &args.indices, &args.out_dir, &fmt_overrides)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn run_gen(args: GenArgs) -> Result<(), CliError> {
    let paths = cmd_gen_corpus(
        args.seed,
        args.users,
        args.products,
        args.docs,
        args.classes,
        !args.unbiased,
        &args.out_dir,
    )?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

/// Format fields that must match whatever the corpus on disk uses.
#[derive(Debug, Clone)]
pub struct FormatOverrides {
    pub field_separator: String,
    pub sentence_delimiter: String,
    pub lowercase: bool,
}

impl Default for FormatOverrides {
    fn default() -> Self {
        FormatOverrides {
            field_separator: default_separator(),
            sentence_delimiter: default_delimiter(),
            lowercase: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub schema: String,
    pub variant: String,
    pub best_epoch: u32,
    pub best_dev_accuracy: f64,
    pub test_accuracy: f64,
    pub test_rmse: f64,
    pub checkpoint: PathBuf,
    pub epoch_log: PathBuf,
    pub vocab: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct DataSummary<'a> {
    schema: &'static str,
    split: &'a str,
    #[serde(flatten)]
    stats: EncodeStats,
    unk_rate: f64,
}

fn summarize(split: &str, stats: &EncodeStats) -> String {
    let record = DataSummary {
        schema: "huapa.data.v1",
        split,
        stats: *stats,
        unk_rate: if stats.total_tokens == 0 {
            0.0
        } else {
            stats.unk_tokens as f64 / stats.total_tokens as f64
        },
    };
    serde_json::to_string(&record).expect("stats serialize")
}

fn load_split(
    path: &Path,
    fmt: &CorpusFormat,
    vocab: &Vocabulary,
    data_cfg: &DataConfig,
    split: &str,
    summaries: &mut Vec<String>,
) -> Result<Vec<EncodedDoc>, CliError> {
    let docs = parse_corpus(path, fmt)?;
    let (encoded, stats) = encode(&docs, vocab, data_cfg.max_sentences, data_cfg.max_words);
    summaries.push(summarize(split, &stats));
    Ok(encoded)
}

/// Full training pipeline: parse and encode the three splits, build the
/// model, train with dev-based selection, then write the checkpoint, the
/// vocabulary, the epoch log, and the test metrics into the output
/// directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let variant = cfg.variant()?;
    let train_cfg = cfg.train_config();
    train_cfg.validate().map_err(CliError::from)?;
    for path in [&cfg.paths.train, &cfg.paths.dev, &cfg.paths.test] {
        if !path.is_file() {
            return Err(CliError::Config(format!("corpus not found: {}", path.display())));
        }
    }
    if let Some(emb) = &cfg.paths.embeddings {
        if !emb.is_file() {
            return Err(CliError::Config(format!("embedding file not found: {}", emb.display())));
        }
    }
    fs::create_dir_all(&cfg.paths.out_dir).map_err(io_err(&cfg.paths.out_dir))?;

    let fmt = cfg.data.corpus_format();
    let train_docs_raw = parse_corpus(&cfg.paths.train, &fmt)?;
    let vocab = build_vocab(&train_docs_raw, cfg.data.min_frequency)?;

    let mut summaries = Vec::new();
    let (train_docs, train_stats) =
        encode(&train_docs_raw, &vocab, cfg.data.max_sentences, cfg.data.max_words);
    summaries.push(summarize("train", &train_stats));
    let dev_docs = load_split(&cfg.paths.dev, &fmt, &vocab, &cfg.data, "dev", &mut summaries)?;
    let test_docs = load_split(&cfg.paths.test, &fmt, &vocab, &cfg.data, "test", &mut summaries)?;

    let dims = cfg.dims();
    let table = match &cfg.paths.embeddings {
        Some(path) => {
            let t = data::load_embeddings(path, &vocab, dims.word_dim, cfg.train.seed ^ 0x9e37)?;
            summaries.push(format!(
                "{{\"schema\":\"huapa.embeddings.v1\",\"random_rows\":{},\"total_rows\":{}}}",
                t.random_rows,
                vocab.n_words()
            ));
            t.data
        }
        None => data::random_embeddings(&vocab, dims.word_dim, cfg.train.seed ^ 0x9e37).data,
    };
    for line in &summaries {
        println!("{line}");
    }
    let summary_path = cfg.paths.out_dir.join("data_summary.jsonl");
    fs::write(&summary_path, summaries.join("\n") + "\n").map_err(io_err(&summary_path))?;

    let params = HuapaParams::init(
        variant,
        dims,
        (vocab.n_words(), vocab.n_users(), vocab.n_products()),
        table,
        cfg.train.seed,
    );
    let result = train(&train_cfg, &params, &train_docs, &dev_docs)?;

    let log_path = cfg.paths.out_dir.join("epochs.jsonl");
    {
        let mut f = fs::File::create(&log_path).map_err(io_err(&log_path))?;
        for rec in &result.log {
            let line = serde_json::to_string(rec).expect("epoch record serializes");
            writeln!(f, "{line}").map_err(io_err(&log_path))?;
        }
    }
    let vocab_path = cfg.paths.out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let ckpt_path = cfg.paths.out_dir.join("model.ckpt");
    checkpoint::save(&ckpt_path, &params, &vocab.hashes())?;

    let test_result = evaluate(&params, &test_docs)?;
    let metrics_path = cfg.paths.out_dir.join("test_metrics.json");
    let metrics = serde_json::json!({
        "schema": "huapa.eval.v1",
        "accuracy": test_result.accuracy,
        "rmse": test_result.rmse,
        "docs": test_docs.len(),
    });
    fs::write(&metrics_path, metrics.to_string() + "\n").map_err(io_err(&metrics_path))?;

    Ok(TrainSummary {
        schema: "huapa.train.v1".to_string(),
        variant: variant.name().to_string(),
        best_epoch: result.best_epoch,
        best_dev_accuracy: result.best_dev_accuracy,
        test_accuracy: test_result.accuracy,
        test_rmse: test_result.rmse,
        checkpoint: ckpt_path,
        epoch_log: log_path,
        vocab: vocab_path,
    })
}

fn load_model(
    ckpt: &Path,
    vocab_path: &Path,
) -> Result<(HuapaParams, Vocabulary), CliError> {
    let vocab = Vocabulary::load(vocab_path)?;
    let params = checkpoint::load(ckpt, &vocab.hashes())?;
    Ok((params, vocab))
}

/// Evaluate a checkpoint against a corpus, refusing to run if the supplied
/// vocabulary does not hash to what the checkpoint was trained with.
pub fn cmd_eval(
    ckpt: &Path,
    vocab_path: &Path,
    corpus: &Path,
    overrides: &FormatOverrides,
) -> Result<EvalResult, CliError> {
    let (params, vocab) = load_model(ckpt, vocab_path)?;
    let fmt = CorpusFormat {
        classes: params.dims.classes,
        field_separator: overrides.field_separator.clone(),
        sentence_delimiter: overrides.sentence_delimiter.clone(),
        lowercase: overrides.lowercase,
    };
    let docs = parse_corpus(corpus, &fmt)?;
    if docs.is_empty() {
        return Err(CliError::Data(DataError::EmptyCorpus));
    }
    let (encoded, _) = encode(&docs, &vocab, default_max_sentences(), default_max_words());
    Ok(evaluate(&params, &encoded)?)
}

/// Export attention traces for the selected documents: one JSON record per
/// document plus a standalone heat-shaded HTML page per document.
pub fn cmd_attn_export(
    ckpt: &Path,
    vocab_path: &Path,
    corpus: &Path,
    indices: &[usize],
    out_dir: &Path,
    overrides: &FormatOverrides,
) -> Result<Vec<PathBuf>, CliError> {
    let (params, vocab) = load_model(ckpt, vocab_path)?;
    let fmt = CorpusFormat {
        classes: params.dims.classes,
        field_separator: overrides.field_separator.clone(),
        sentence_delimiter: overrides.sentence_delimiter.clone(),
        lowercase: overrides.lowercase,
    };
    let docs = parse_corpus(corpus, &fmt)?;
    for &i in indices {
        if i >= docs.len() {
            return Err(CliError::Usage(format!(
                "document index {i} out of range for corpus of {} documents",
                docs.len()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let (encoded, _) = encode(&docs, &vocab, default_max_sentences(), default_max_words());

    let records_path = out_dir.join("attention.jsonl");
    let mut records_file = fs::File::create(&records_path).map_err(io_err(&records_path))?;
    let mut written = vec![records_path.clone()];
    for &i in indices {
        let out = forward_huapa(&params, &encoded[i])?;
        let record = export::build_record(i, &encoded[i], &out, &vocab);
        let line = serde_json::to_string(&record).expect("attention record serializes");
        writeln!(records_file, "{line}").map_err(io_err(&records_path))?;
        let html_path = out_dir.join(format!("attn_{i}.html"));
        fs::write(&html_path, export::render_html(&record)).map_err(io_err(&html_path))?;
        written.push(html_path);
    }
    Ok(written)
}

/// Generate a synthetic corpus and write the three splits plus the latent
/// user/product effects used to produce the labels.
pub fn cmd_gen_corpus(
    seed: u64,
    users: usize,
    products: usize,
    docs: usize,
    classes: usize,
    biased: bool,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    if classes < 2 {
        return Err(CliError::Config("need at least two classes".to_string()));
    }
    if users == 0 || products == 0 || docs < 10 {
        return Err(CliError::Config("need at least one user, one product and ten documents".to_string()));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let corpus = gen_synthetic_opts(seed, users, products, docs, classes, biased);
    let fmt = CorpusFormat { classes, ..Default::default() };
    let mut written = Vec::new();
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let path = out_dir.join(format!("{name}.tsv"));
        write_corpus(&path, split, &fmt)?;
        written.push(path);
    }
    let latents_path = out_dir.join("latents.json");
    let mut user_bias: Vec<(&String, &i64)> = corpus.user_bias.iter().collect();
    user_bias.sort();
    let mut product_quality: Vec<(&String, &i64)> = corpus.product_quality.iter().collect();
    product_quality.sort();
    let latents = serde_json::json!({
        "schema": "huapa.latents.v1",
        "user_bias": user_bias.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
        "product_quality": product_quality.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
    });
    fs::write(&latents_path, latents.to_string() + "\n").map_err(io_err(&latents_path))?;
    written.push(latents_path);
    Ok(written)
}
