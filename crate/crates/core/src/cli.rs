//! Command-line front end: `synth`, `train`, `eval`, `explain`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_synthetic, load_dataset, split, write_dataset, EhrSample, SynthSpec, TaskSchema};
use crate::embeddings::EmbeddingProvider;
use crate::error::{LdamError, Result};
use crate::explain::{
    channel_ranking, export_embeddings, highlight_truncated, write_jsonl, ChannelRanking, EmbeddingRow,
    DEFAULT_FRACTION,
};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::{parse_key_values, Checkpoint, Ldam, ModelConfig, NameEmbeddings, META_EMBEDDINGS, META_SCHEMA};
use crate::training::{evaluate, prepare, EpochRecord, TrainConfig, Trainer, TRAIN_LOG_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CHECKPOINT_FILE: &str = "checkpoint.ldam";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_LABEL_FILE: &str = "metrics_per_label.csv";
pub const HIGHLIGHTS_FILE: &str = "highlights.jsonl";
pub const HIGHLIGHTS_MD_FILE: &str = "highlights.md";
pub const RANKINGS_FILE: &str = "channel_rankings.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

const VAL_RATIO: f64 = 0.8;

#[derive(Debug, Parser)]
#[command(name = "ldam", version, about = "Label-dependent attention model for multimodal risk prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-signal synthetic dataset and its schema.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train(Box<TrainArgs>),
    /// Score a dataset with a checkpoint.
    Eval(EvalArgs),
    /// Export attention highlights, channel rankings, and embeddings.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "LDAM_SEED")]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    /// Dataset output (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Input schema; the built-in 17-indicator, 25-label schema otherwise.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Where the schema is written; `schema.json` beside `--out` by default.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    /// Generator settings as JSON; defaults derived from the schema otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "embedding_source", required = true, multiple = false, args = ["embeddings", "toy_embed"])]
pub struct EmbeddingSource {
    /// Tab-separated embedding table covering tokens and names.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Deterministic hash-seeded toy embeddings.
    #[arg(long = "toy-embed", value_name = "SEED")]
    pub toy_embed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OptionalEmbeddingSource {
    /// Overrides the embedding source recorded in the checkpoint.
    #[arg(long, conflicts_with = "toy_embed")]
    pub embeddings: Option<PathBuf>,
    #[arg(long = "toy-embed", value_name = "SEED")]
    pub toy_embed: Option<u64>,
}

/// Every model and training key, settable as `--key value`.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long = "embed_dim", alias = "embed-dim")]
    pub embed_dim: Option<String>,
    #[arg(long = "hidden_dim", alias = "hidden-dim")]
    pub hidden_dim: Option<String>,
    #[arg(long = "max_note_len", alias = "max-note-len")]
    pub max_note_len: Option<String>,
    #[arg(long)]
    pub ngram: Option<String>,
    #[arg(long = "conv_channels", alias = "conv-channels")]
    pub conv_channels: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long = "lambda_label", alias = "lambda-label")]
    pub lambda_label: Option<String>,
    #[arg(long = "init_seed", alias = "init-seed")]
    pub init_seed: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long = "batch_size", alias = "batch-size")]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long, env = "LDAM_SEED")]
    pub seed: Option<String>,
    #[arg(long)]
    pub shuffle: Option<String>,
    #[arg(long = "checkpoint_every", alias = "checkpoint-every")]
    pub checkpoint_every: Option<String>,
    #[arg(long = "early_stop_patience", alias = "early-stop-patience")]
    pub early_stop_patience: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        [
            ("embed_dim", &self.embed_dim),
            ("hidden_dim", &self.hidden_dim),
            ("max_note_len", &self.max_note_len),
            ("ngram", &self.ngram),
            ("conv_channels", &self.conv_channels),
            ("mode", &self.mode),
            ("attention", &self.attention),
            ("lambda_label", &self.lambda_label),
            ("init_seed", &self.init_seed),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("seed", &self.seed),
            ("shuffle", &self.shuffle),
            ("checkpoint_every", &self.checkpoint_every),
            ("early_stop_patience", &self.early_stop_patience),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[command(flatten)]
    pub source: EmbeddingSource,
    /// Flat `key=value` file; flags of the same name win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the checkpoint and the log.
    #[arg(long)]
    pub out: PathBuf,
    /// Validation set; otherwise 20% of `--data` is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Directory for the metric CSVs; the checkpoint's directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub source: OptionalEmbeddingSource,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FRACTION)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub source: OptionalEmbeddingSource,
}

/// Exit status for an error: validation problems are usage errors.
pub fn exit_code(e: &LdamError) -> i32 {
    match e {
        LdamError::Io { .. }
        | LdamError::NonFinite { .. }
        | LdamError::Graph(_)
        | LdamError::Optimizer(_)
        | LdamError::Metric(_)
        | LdamError::Json(_) => EXIT_RUNTIME,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command, and returns the exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Explain(a) => cmd_explain(&a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(LdamError::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| LdamError::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LdamError::io(path, e))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if let Some(p) = &a.schema {
        require_file(p, "schema")?;
    }
    if let Some(p) = &a.spec {
        require_file(p, "spec")?;
    }
    let schema = match &a.schema {
        Some(p) => TaskSchema::load(p)?,
        None => TaskSchema::default(),
    };
    let spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| LdamError::io(p, e))?;
            let mut spec: SynthSpec =
                serde_json::from_str(&text).map_err(|e| LdamError::Config(format!("{}: {e}", p.display())))?;
            spec.seed = a.seed;
            spec.n_samples = a.n;
            spec
        }
        None => SynthSpec::for_schema(&schema, a.seed, a.n),
    };
    spec.validate(&schema)?;
    let samples = generate_synthetic(&spec, &schema)?;
    let schema_out =
        a.schema_out.clone().unwrap_or_else(|| a.out.parent().unwrap_or(Path::new(".")).join("schema.json"));
    write_dataset(&a.out, &samples)?;
    schema.save(&schema_out)?;

    println!("wrote {} samples to {}", samples.len(), a.out.display());
    println!("label prevalence:");
    for (j, name) in schema.label_names.iter().enumerate() {
        let pos = samples.iter().filter(|s| s.labels[j] == 1).count();
        let rate = if samples.is_empty() { 0.0 } else { pos as f64 / samples.len() as f64 };
        println!("  {rate:.3}  {name}");
    }
    Ok(())
}

fn embedding_source_string(source: &EmbeddingSource, dim: usize) -> String {
    match (&source.embeddings, source.toy_embed) {
        (Some(p), _) => format!("file:{}", p.display()),
        (None, Some(seed)) => format!("toy:{seed}:{dim}"),
        (None, None) => unreachable!("clap requires one source"),
    }
}

/// Model and training settings from the config file, then flags, then the schema.
fn resolve_configs(a: &TrainArgs, schema: &TaskSchema, file_dim: Option<usize>) -> Result<(ModelConfig, TrainConfig)> {
    let mut pairs: BTreeMap<String, String> = match &a.config {
        Some(p) => parse_key_values(&fs::read_to_string(p).map_err(|e| LdamError::io(p, e))?)?,
        None => BTreeMap::new(),
    };
    for (k, v) in a.overrides.pairs() {
        pairs.insert(k.to_string(), v.to_string());
    }
    let derived = [("n_indicators", schema.n_indicators()), ("n_labels", schema.n_labels()), ("time_steps", schema.t)];
    for (k, v) in derived {
        if let Some(given) = pairs.get(k) {
            if given.trim() != v.to_string() {
                return Err(LdamError::Config(format!("{k}={given} contradicts the schema ({v})")));
            }
        }
        pairs.insert(k.to_string(), v.to_string());
    }
    if let Some(dim) = file_dim {
        if let Some(given) = pairs.get("embed_dim") {
            if given.trim() != dim.to_string() {
                return Err(LdamError::Config(format!("embed_dim={given} contradicts the embedding file ({dim})")));
            }
        }
        pairs.insert("embed_dim".into(), dim.to_string());
    }
    if !pairs.contains_key("init_seed") {
        if let Some(seed) = pairs.get("seed").cloned() {
            pairs.insert("init_seed".into(), seed);
        }
    }
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    let leftover = model.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let unknown = train.apply(leftover.into_iter().map(|k| (k, pairs[k].as_str())))?;
    if let Some(k) = unknown.first() {
        return Err(LdamError::Config(format!("unknown config key {k:?}")));
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

fn log_row(r: &EpochRecord) -> String {
    let auc = r.val_micro_auc.map_or(String::new(), |a| format!("{a:?}"));
    format!("{},{:?},{:?},{:?},{},{:.3}\n", r.epoch, r.loss, r.term1, r.term2, auc, r.seconds)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    require_file(&a.data, "data file")?;
    require_file(&a.schema, "schema")?;
    for (p, what) in [
        (&a.source.embeddings, "embeddings"),
        (&a.config, "config"),
        (&a.val, "validation file"),
        (&a.resume, "checkpoint"),
    ] {
        if let Some(p) = p {
            require_file(p, what)?;
        }
    }
    let schema = TaskSchema::load(&a.schema)?;
    let file_provider = a.source.embeddings.as_deref().map(EmbeddingProvider::from_file).transpose()?;
    let (model_cfg, train_cfg) = resolve_configs(a, &schema, file_provider.as_ref().map(|p| p.dim()))?;
    let provider = match (file_provider, a.source.toy_embed) {
        (Some(p), _) => p,
        (None, Some(seed)) => EmbeddingProvider::toy(seed, model_cfg.embed_dim),
        (None, None) => unreachable!("clap requires one source"),
    };
    let dataset = load_dataset(&a.data, &schema)?;
    if dataset.is_empty() {
        return Err(LdamError::Empty(format!("{} has no samples", a.data.display())));
    }
    let (train_set, val_set): (Vec<EhrSample>, Option<Vec<EhrSample>>) = match &a.val {
        Some(p) => (dataset, Some(load_dataset(p, &schema)?)),
        None if dataset.len() >= 2 => {
            let (t, v) = split(&dataset, VAL_RATIO, train_cfg.seed)?;
            (t, Some(v))
        }
        None => (dataset, None),
    };

    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != model_cfg {
                return Err(LdamError::Config("checkpoint model settings differ from the requested ones".into()));
            }
            Trainer::from_checkpoint(ck, train_cfg.clone())?
        }
        None => Trainer::new(model_cfg.clone(), train_cfg.clone())?,
    };
    let names = NameEmbeddings::from_schema(&provider, &schema)?;
    let train_prep = prepare(&trainer.model, &provider, &train_set)?;
    let val_prep = val_set.as_ref().map(|v| prepare(&trainer.model, &provider, v)).transpose()?;

    create_dir(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    let log_path = a.out.join(TRAIN_LOG_FILE);
    let mut metadata = BTreeMap::new();
    metadata.insert(META_SCHEMA.to_string(), serde_json::to_string(&schema)?);
    metadata.insert(META_EMBEDDINGS.to_string(), embedding_source_string(&a.source, model_cfg.embed_dim));

    let mut log_text = match (&a.resume, fs::read_to_string(&log_path)) {
        (Some(_), Ok(existing)) if existing.starts_with(TRAIN_LOG_HEADER) => existing,
        _ => format!("{TRAIN_LOG_HEADER}\n"),
    };
    println!(
        "training on {} samples ({} validation), {} epochs",
        train_prep.len(),
        val_prep.as_ref().map_or(0, |v| v.len()),
        train_cfg.epochs
    );
    let every = train_cfg.checkpoint_every;
    trainer.fit(&names, &train_prep, val_prep.as_deref(), |t, r| {
        let auc = r.val_micro_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        println!(
            "epoch {:>3}  loss {:.5}  term1 {:.5}  term2 {:.5}  val micro AUC {auc}",
            r.epoch, r.loss, r.term1, r.term2
        );
        log_text.push_str(&log_row(r));
        write_file(&log_path, &log_text)?;
        if every > 0 && r.epoch % every == 0 {
            t.checkpoint(metadata.clone()).save(&ck_path)?;
        }
        Ok(())
    })?;
    trainer.checkpoint(metadata).save(&ck_path)?;
    println!("wrote {} and {}", ck_path.display(), log_path.display());
    Ok(())
}

/// Model, schema, and embeddings recovered from a checkpoint.
struct Loaded {
    model: Ldam,
    schema: TaskSchema,
    provider: EmbeddingProvider,
}

fn load_checkpoint(path: &Path, source: &OptionalEmbeddingSource) -> Result<Loaded> {
    require_file(path, "checkpoint")?;
    let ck = Checkpoint::load(path)?;
    let schema = ck.schema()?;
    let provider = match (&source.embeddings, source.toy_embed) {
        (Some(p), _) => {
            require_file(p, "embeddings")?;
            EmbeddingProvider::from_file(p)?
        }
        (None, Some(seed)) => EmbeddingProvider::toy(seed, ck.config.embed_dim),
        (None, None) => match ck.metadata.get(META_EMBEDDINGS) {
            Some(s) => EmbeddingProvider::from_source(s)?,
            None => {
                return Err(LdamError::Config(
                    "checkpoint names no embeddings; pass --embeddings or --toy-embed".into(),
                ))
            }
        },
    };
    let model = Ldam::from_parts(ck.config, ck.params)?;
    Ok(Loaded { model, schema, provider })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.data, "data file")?;
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(LdamError::Config(format!("threshold {} must lie in (0, 1)", a.threshold)));
    }
    let l = load_checkpoint(&a.checkpoint, &a.source)?;
    let data = load_dataset(&a.data, &l.schema)?;
    let names = NameEmbeddings::from_schema(&l.provider, &l.schema)?;
    let prepared = prepare(&l.model, &l.provider, &data)?;
    let report = evaluate(&l.model, &names, &prepared, a.threshold)?;
    print!("{report}");
    let out =
        a.out.clone().unwrap_or_else(|| a.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    create_dir(&out)?;
    write_file(&out.join(METRICS_FILE), &report.to_csv())?;
    write_file(&out.join(PER_LABEL_FILE), &report.per_label_csv(&l.schema.label_names))?;
    Ok(())
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    require_file(&a.data, "data file")?;
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return Err(LdamError::Config(format!("fraction {} must lie in (0, 1]", a.fraction)));
    }
    let l = load_checkpoint(&a.checkpoint, &a.source)?;
    let data = load_dataset(&a.data, &l.schema)?;
    let names = NameEmbeddings::from_schema(&l.provider, &l.schema)?;
    let cfg = &l.model.config;

    let mut highlights = Vec::new();
    let mut rankings = Vec::new();
    let mut note_rows = Vec::new();
    for s in &data {
        let out = l.model.forward_sample(s, &l.provider, &names)?;
        if let Some(beta) = &out.beta {
            highlights.push(highlight_truncated(&s.id, &s.note_tokens, beta, cfg.max_note_len, a.fraction)?);
        }
        if let Some(alpha) = &out.alpha {
            rankings
                .push(ChannelRanking { id: s.id.clone(), ranking: channel_ranking(alpha, &l.schema.indicator_names)? });
        }
        note_rows.push(EmbeddingRow { key: s.id.clone(), group: "note".into(), vector: out.z_m });
    }

    let mut rows = Vec::new();
    for (group, keys, matrix) in
        [("label", &l.schema.label_names, &names.labels), ("indicator", &l.schema.indicator_names, &names.indicators)]
    {
        let projected = l.model.project_names(matrix)?;
        for (j, key) in keys.iter().enumerate() {
            rows.push(EmbeddingRow { key: key.clone(), group: group.into(), vector: projected.column(j) });
        }
    }
    rows.extend(note_rows);

    create_dir(&a.out)?;
    if cfg.mode.uses_text() {
        write_jsonl(&a.out.join(HIGHLIGHTS_FILE), &highlights)?;
        let md: String = highlights.iter().map(|h| format!("- {}: {}\n", h.id, h.to_markdown())).collect();
        write_file(&a.out.join(HIGHLIGHTS_MD_FILE), &md)?;
    }
    if cfg.mode.uses_timeseries() {
        write_jsonl(&a.out.join(RANKINGS_FILE), &rankings)?;
    }
    export_embeddings(&rows, &a.out.join(EMBEDDINGS_FILE))?;
    println!(
        "wrote {} highlighted notes, {} channel rankings, {} embedding rows to {}",
        highlights.len(),
        rankings.len(),
        rows.len(),
        a.out.display()
    );
    Ok(())
}
