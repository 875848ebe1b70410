//! Subcommand definitions and their implementations.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use intent_core::datagen::{llm_generate, offline_generate, pair_combos, LlmClientConfig, LlmGenerator};
use intent_core::dataset::{load_dataset, Dataset, LabelSet, LabelVocabulary};
use intent_core::embedding::{
    align_embeddings, embed_dataset, load_embeddings, read_embeddings, save_embeddings, EmbeddingVector,
    ProviderConfig,
};
use intent_core::loss::LossKind;
use intent_core::metrics::Averaging;
use intent_core::mining::{MiningMode, PositiveRule};
use intent_core::pipeline::{evaluate_model, train_model};
use intent_core::trainer::{load_artifact, TrainConfig};
use intent_core::{Error, Result};

use crate::config::{required, PipelineConfig};
use crate::http::{bearer_from_env, HttpTransport};
use crate::model::{embedder_for, LoadedModel};
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "intent", version, about = "Multi-label intent classification pipeline")]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled JSONL dataset offline or through a chat-completion endpoint.
    Generate(GenerateArgs),
    /// Embed every dataset text and write a JSONL vector file.
    Embed(EmbedArgs),
    /// Pretrain the projection head and fine-tune the classifier.
    Train(TrainArgs),
    /// Score the holdout split and write a metrics report.
    Eval(EvalArgs),
    /// Classify one text and print the JSON result.
    Predict(PredictArgs),
    /// Serve POST /classify and GET /health.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline config file (JSON); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Taxonomy file; defaults to the built-in maritime taxonomy.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Use the seeded template generator instead of an LLM.
    #[arg(long)]
    pub offline: bool,
    /// Chat-completion endpoint URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub auth_token_env: Option<String>,
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// JSON array of label-name arrays, one composed sample each.
    #[arg(long, conflicts_with = "random_combos")]
    pub combos: Option<PathBuf>,
    /// Number of two-label combinations drawn from all label pairs.
    #[arg(long)]
    pub random_combos: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderKind {
    Toy,
    Http,
    File,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Embedding provider; defaults to the config file's, else toy.
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Hash seed of the toy provider.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    /// Embedding service URL (http provider).
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub embed_token_env: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub embed_timeout: u64,
    #[arg(long, default_value_t = 3)]
    pub embed_retries: u32,
    /// Precomputed vector file (file provider).
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

impl ProviderArgs {
    fn resolve(&self, config: &PipelineConfig) -> Result<ProviderConfig> {
        let need_dim = || {
            self.dim
                .ok_or_else(|| Error::InvalidConfig("--dim is required for this provider".into()))
        };
        let provider = match self.provider {
            None => config.provider.clone().unwrap_or_default(),
            Some(ProviderKind::Toy) => ProviderConfig::Toy {
                dim: self.dim.unwrap_or(256),
                seed: self.embed_seed,
            },
            Some(ProviderKind::Http) => ProviderConfig::Http {
                dim: need_dim()?,
                endpoint: self
                    .embed_endpoint
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("--embed-endpoint is required".into()))?,
                auth_token_env: self.embed_token_env.clone(),
                timeout_secs: self.embed_timeout,
                max_retries: self.embed_retries,
            },
            Some(ProviderKind::File) => ProviderConfig::File {
                dim: need_dim()?,
                path: self
                    .vectors
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("--vectors is required".into()))?
                    .display()
                    .to_string(),
            },
        };
        provider.validate()?;
        Ok(provider)
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Literal,
    Standard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Exact,
    Overlap,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Model artifact output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch loss log; defaults to `<out>.losses.json`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub epochs_pretrain: Option<usize>,
    #[arg(long)]
    pub epochs_finetune: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub finetune_lr: Option<f64>,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub mining_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub positive_rule: Option<RuleArg>,
    /// Percentage of refined pairs kept per polarity.
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl TrainArgs {
    fn train_config(&self, config: &PipelineConfig) -> TrainConfig {
        let mut c = config.train_config();
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag {
                    c.$($field).+ = v;
                }
            };
        }
        set!(loss => loss_kind);
        set!(epochs_pretrain => epochs_pretrain);
        set!(epochs_finetune => epochs_finetune);
        set!(batch_size => batch_size);
        set!(seed => seed);
        set!(lr => learning_rate);
        set!(finetune_lr => finetune_learning_rate);
        set!(holdout => holdout_fraction);
        set!(threshold => decision_threshold);
        set!(top_p => mining.p);
        set!(margin => ofc.margin);
        set!(alpha => ofc.alpha);
        set!(gamma => ofc.gamma);
        if let Some(m) = self.mining_mode {
            c.mining.mode = match m {
                ModeArg::Literal => MiningMode::Literal,
                ModeArg::Standard => MiningMode::Standard,
            };
        }
        if let Some(r) = self.positive_rule {
            c.mining.positive_rule = match r {
                RuleArg::Exact => PositiveRule::Exact,
                RuleArg::Overlap => PositiveRule::Overlap,
            };
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Precomputed embeddings; when omitted the model's provider embeds the dataset.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Report JSON output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the one-row markdown table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Macro-average precision, recall and F1 instead of micro.
    #[arg(long = "macro")]
    pub macro_average: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn pretty(value: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn load_combos(path: &Path, vocabulary: &LabelVocabulary) -> Result<Vec<LabelSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<Vec<String>> = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    names.iter().map(|c| vocabulary.label_set(c)).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
    }
}

fn llm_config(args: &GenerateArgs, config: &PipelineConfig) -> Result<LlmClientConfig> {
    let base = config.llm.clone();
    let endpoint_url = args
        .endpoint
        .clone()
        .or_else(|| base.as_ref().map(|b| b.endpoint_url.clone()))
        .ok_or_else(|| Error::InvalidConfig("pass --offline or an LLM --endpoint".into()))?;
    let cfg = LlmClientConfig {
        endpoint_url,
        model_name: args
            .model
            .clone()
            .or_else(|| base.as_ref().map(|b| b.model_name.clone()))
            .unwrap_or_else(|| "llama-2-7b-chat".into()),
        auth_token_env: args
            .auth_token_env
            .clone()
            .or_else(|| base.as_ref().and_then(|b| b.auth_token_env.clone())),
        timeout_secs: args
            .timeout
            .or(base.as_ref().map(|b| b.timeout_secs))
            .unwrap_or(60),
        max_retries: args
            .max_retries
            .or(base.as_ref().map(|b| b.max_retries))
            .unwrap_or(3),
        temperature: args
            .temperature
            .or(base.as_ref().map(|b| b.temperature))
            .unwrap_or(0.8),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let config = PipelineConfig::load_optional(args.common.config.as_deref())?;
    let vocabulary = config.vocabulary(args.common.taxonomy.as_deref())?;
    let out = required(args.out.clone(), &config.paths.dataset, "out")?;
    let combos = match (&args.combos, args.random_combos) {
        (Some(p), _) => load_combos(p, &vocabulary)?,
        (None, Some(n)) => pair_combos(&vocabulary, n, args.seed),
        (None, None) => Vec::new(),
    };
    let dataset = if args.offline {
        offline_generate(&vocabulary, args.per_class, &combos, args.seed)?
    } else {
        let cfg = llm_config(&args, &config)?;
        let generator = LlmGenerator {
            bearer: bearer_from_env(cfg.auth_token_env.as_deref())?,
            transport: HttpTransport::new(Duration::from_secs(cfg.timeout_secs), cfg.max_retries),
            config: cfg,
        };
        llm_generate(&vocabulary, args.per_class, &combos, &generator)?.0
    };
    let mut bytes = Vec::new();
    dataset
        .write_to(&mut bytes)
        .map_err(|e| Error::io(&out, e))?;
    write_file(&out, &bytes)?;

    let mut stdout = std::io::stdout().lock();
    for (i, label) in vocabulary.labels().iter().enumerate() {
        let n = dataset
            .samples
            .iter()
            .filter(|s| s.labels.indices() == [i])
            .count();
        let _ = writeln!(stdout, "{label}\t{n}");
    }
    let multi = dataset.samples.iter().filter(|s| s.labels.len() > 1).count();
    let _ = writeln!(stdout, "multi-label\t{multi}");
    let _ = writeln!(stdout, "total\t{}", dataset.len());
    Ok(())
}

fn embed(args: EmbedArgs) -> Result<()> {
    let config = PipelineConfig::load_optional(args.common.config.as_deref())?;
    let vocabulary = config.vocabulary(args.common.taxonomy.as_deref())?;
    let dataset_path = required(args.dataset, &config.paths.dataset, "dataset")?;
    let out = required(args.out, &config.paths.embeddings, "out")?;
    let dataset = load_dataset(&dataset_path, vocabulary)?;
    let provider = args.provider.resolve(&config)?;
    let vectors: Vec<EmbeddingVector> = match &provider {
        ProviderConfig::File { path, dim } => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let vectors = read_embeddings(file)?;
            let aligned = align_embeddings(vectors, &dataset)?;
            if let Some(s) = aligned.iter().find(|s| s.embedding.dim() != *dim) {
                return Err(Error::DimensionMismatch {
                    row: s.source_index,
                    expected: *dim,
                    found: s.embedding.dim(),
                });
            }
            aligned.into_iter().map(|s| s.embedding).collect()
        }
        p => embed_dataset(&dataset, embedder_for(p)?.as_ref())?
            .into_iter()
            .map(|s| s.embedding)
            .collect(),
    };
    save_embeddings(&out, &vectors)?;
    info!("wrote {} vectors of dim {} to {}", vectors.len(), provider.dim(), out.display());
    Ok(())
}

fn default_loss_log(model: &Path) -> PathBuf {
    let stem = model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    model.with_file_name(format!("{stem}.losses.json"))
}

fn train(args: TrainArgs) -> Result<()> {
    let config = PipelineConfig::load_optional(args.common.config.as_deref())?;
    let vocabulary = config.vocabulary(args.common.taxonomy.as_deref())?;
    let dataset_path = required(args.dataset.clone(), &config.paths.dataset, "dataset")?;
    let embeddings_path = required(args.embeddings.clone(), &config.paths.embeddings, "embeddings")?;
    let out = required(args.out.clone(), &config.paths.model, "out")?;
    let dataset = load_dataset(&dataset_path, vocabulary)?;
    let embedded = load_embeddings(&embeddings_path, &dataset)?;
    let provider = args.provider.resolve(&config)?;
    let train_config = args.train_config(&config);

    let run = train_model(&dataset, &embedded, &provider, &train_config)?;
    write_file(&out, &run.artifact.to_json_bytes()?)?;
    let log_path = args.loss_log.clone().unwrap_or_else(|| default_loss_log(&out));
    write_file(&log_path, &pretty(&run.log)?)?;

    let last = |v: &[f64]| v.last().map_or("n/a".to_string(), |x| format!("{x:.6}"));
    println!("pretrain loss (last epoch)\t{}", last(&run.log.pretrain));
    println!("finetune loss (last epoch)\t{}", last(&run.log.finetune));
    if let (Some(b), Some(a)) = (run.log.gap_before, run.log.gap_after) {
        println!("holdout margin gap\t{b:.4} -> {a:.4}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let config = PipelineConfig::load_optional(args.config.as_deref())?;
    let model_path = required(args.model, &config.paths.model, "model")?;
    let dataset_path = required(args.dataset, &config.paths.dataset, "dataset")?;
    let out = required(args.out, &config.paths.report, "out")?;
    let artifact = load_artifact(&model_path)?;
    let dataset: Dataset = load_dataset(&dataset_path, artifact.vocabulary.clone())?;
    let embedded = match args.embeddings.or(config.paths.embeddings) {
        Some(p) => load_embeddings(p, &dataset)?,
        None => embed_dataset(&dataset, embedder_for(&artifact.provider)?.as_ref())?,
    };
    let averaging = if args.macro_average {
        Averaging::Macro
    } else {
        Averaging::Micro
    };
    let report = evaluate_model(&artifact, &dataset, &embedded, averaging)?;
    write_file(&out, &pretty(&report)?)?;
    let table = report.table();
    if let Some(t) = args.table {
        write_file(&t, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let model = LoadedModel::load(&args.model)?;
    let body = model.classify_body(&args.text)?;
    std::io::stdout()
        .write_all(&body)
        .map_err(|e| Error::io("<stdout>", e))
}

fn serve(args: ServeArgs) -> Result<()> {
    let model = LoadedModel::load(&args.model)?;
    service::serve(model, args.addr)
}
