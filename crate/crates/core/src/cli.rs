//! `infoloss` command line.
//!
//! Settings resolve in three layers: the profile defaults, then the JSON file
//! given by `--config` (any subset of [`RunConfig`]), then command-line flags.
//! Every command writes the resolved configuration to `run_config.json` in its
//! output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::captioner::{ModelParams, ModelSize};
use crate::corpus::{
    build_vocabulary, corpus_bias_report, load_corpus, CaptionCorpus, CorpusError, CorpusFormat, Vocabulary,
};
use crate::decode::{generate, score_captions, DecodeConfig, MetricSet, Strategy};
use crate::experiment::{self, ExperimentConfig};
use crate::features::{load_feature_dir, save_feature_dir, synthesize_features, FeatureConfig, FeatureError, VideoFeatures};
use crate::hashing::derive_seed;
use crate::importance::{build_importance_table, ImportanceTable};
use crate::objective::{LossConfig, LossKind};
use crate::synth::{biased_corpus, templated_corpus, BiasConfig, TemplateConfig};
use crate::trainer::{build_samples, train, Checkpoint, Manifest, TrainConfig, Validation};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub videos: usize,
    pub captions: usize,
    pub variation: f64,
    /// Generate the planted-bias corpus instead of the templated one.
    pub biased: bool,
    pub rare_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub seeds: usize,
    pub videos: usize,
    pub captions: usize,
    pub rare_rate: f64,
    pub max_epochs: usize,
    pub lambda_zero_arm: bool,
}

/// Every setting a command can read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub features: FeatureConfig,
    pub model: ModelSize,
    pub min_count: usize,
    /// Share of distinct words counted as "most frequent" in the bias report.
    pub top_fraction: f64,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub decode: DecodeConfig,
    pub synth: SynthSettings,
    pub experiment: ExperimentSettings,
    pub corpus_format: CorpusFormat,
    pub paths: BTreeMap<String, PathBuf>,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (features, size, train, min_count) = match profile {
            Profile::Paper => (
                FeatureConfig::paper(),
                ModelSize {
                    hidden: 512,
                    embed: 512,
                    attention: 512,
                },
                TrainConfig::default(),
                5,
            ),
            Profile::Desk => (
                FeatureConfig::desk(),
                ModelSize {
                    hidden: 32,
                    embed: 32,
                    attention: 32,
                },
                TrainConfig {
                    learning_rate: 5e-3,
                    batch_size: 8,
                    dropout_keep: 1.0,
                    ..TrainConfig::default()
                },
                1,
            ),
        };
        Self {
            profile,
            seed: 0,
            features,
            model: size,
            min_count,
            top_fraction: 0.05,
            train,
            loss: LossConfig::default(),
            decode: DecodeConfig::default(),
            synth: SynthSettings {
                videos: 5,
                captions: 3,
                variation: 0.0,
                biased: false,
                rare_rate: 0.45,
            },
            experiment: ExperimentSettings {
                seeds: 5,
                videos: 20,
                captions: 20,
                rare_rate: 0.45,
                max_epochs: 30,
                lambda_zero_arm: false,
            },
            corpus_format: CorpusFormat::Tsv,
            paths: BTreeMap::new(),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable/unwritable files; exit status 2.
    Usage(String),
    /// Anything that fails after inputs were read; exit status 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "infoloss", version, about = "Video captioning with importance-weighted cross-entropy")]
pub struct Cli {
    /// JSON file with configuration overrides.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a vocabulary from a caption corpus.
    BuildVocab(BuildVocabArgs),
    /// Compute the importance table and the corpus bias report.
    Importance(ImportanceArgs),
    /// Generate a synthetic corpus and matching features.
    Synth(SynthArgs),
    /// Train a captioner.
    Train(TrainArgs),
    /// Caption a corpus split and score it.
    Eval(EvalArgs),
    /// Caption videos and export attention weights.
    Generate(GenerateArgs),
    /// Paired CE vs information-loss runs on a planted-bias corpus.
    BiasExperiment(BiasExperimentArgs),
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Tsv,
    Json,
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Vocabulary file built from the same corpus.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub top_fraction: Option<f64>,
    /// Print the statistics of one word.
    #[arg(long)]
    pub query: Option<String>,
    /// Video for `--query`'s relevance and importance values.
    #[arg(long, requires = "query")]
    pub video: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub captions: Option<usize>,
    #[arg(long)]
    pub variation: Option<f64>,
    #[arg(long)]
    pub biased: bool,
    #[arg(long)]
    pub rare_rate: Option<f64>,
    /// Synthesize features for this corpus instead of generating one.
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Ce,
    Il,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Vocabulary file; built from the corpus when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Validation corpus for best-checkpoint selection.
    #[arg(long)]
    pub val_corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout_keep: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Beam width; greedy decoding when absent.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Comma-separated subset of `bleu4,cider`.
    #[arg(long, default_value = "bleu4,cider")]
    pub metrics: String,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Videos to caption; every video of `--corpus` when absent.
    #[arg(long = "video")]
    pub videos: Vec<String>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BiasExperimentArgs {
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub captions: Option<usize>,
    #[arg(long)]
    pub rare_rate: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Add an information-loss arm with λ = 0.
    #[arg(long)]
    pub lambda_zero_arm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Profile defaults, then the config file, then the global flags.
pub fn resolve_config(config: Option<&Path>, profile: Option<Profile>, seed: Option<u64>) -> CliResult<RunConfig> {
    let file: Option<Value> = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let file_profile = match file.as_ref().and_then(|v| v.get("profile")) {
        Some(p) => Some(serde_json::from_value::<Profile>(p.clone()).map_err(usage)?),
        None => None,
    };
    let profile = profile.or(file_profile).unwrap_or_default();
    let mut value = serde_json::to_value(RunConfig::for_profile(profile)).expect("config serializes");
    if let Some(f) = file {
        merge(&mut value, f);
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| usage(format!("config: {e}")))?;
    cfg.profile = profile;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializes");
    fs::write(path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path, command: &str, cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    write_json(
        &dir.join(RUN_CONFIG_FILE),
        &serde_json::json!({ "command": command, "config": cfg }),
    )
}

fn corpus_error(e: CorpusError) -> CliError {
    match e {
        CorpusError::Io { .. } | CorpusError::Parse { .. } => usage(e),
        other => runtime(other),
    }
}

fn feature_error(e: FeatureError) -> CliError {
    match e {
        FeatureError::File { .. } | FeatureError::MissingVideo(_) => usage(e),
        other => runtime(other),
    }
}

fn apply_corpus_args(cfg: &mut RunConfig, args: &CorpusArgs, key: &str) {
    if let Some(p) = &args.corpus {
        cfg.paths.insert(key.into(), p.clone());
    }
    if let Some(f) = args.format {
        cfg.corpus_format = match f {
            FormatArg::Tsv => CorpusFormat::Tsv,
            FormatArg::Json => CorpusFormat::Json,
        };
    }
}

fn path<'a>(cfg: &'a RunConfig, key: &str) -> CliResult<&'a Path> {
    cfg.paths
        .get(key)
        .map(PathBuf::as_path)
        .ok_or_else(|| usage(format!("missing --{key} (or paths.{key} in the config file)")))
}

fn read_corpus(cfg: &RunConfig, key: &str) -> CliResult<CaptionCorpus> {
    load_corpus(path(cfg, key)?, cfg.corpus_format).map_err(corpus_error)
}

fn read_vocab(p: &Path) -> CliResult<Vocabulary> {
    Vocabulary::load(p).map_err(|e| match e {
        CorpusError::Io { .. } => usage(e),
        other => runtime(format!("{}: {other}", p.display())),
    })
}

fn check_vocab_corpus(vocab: &Vocabulary, corpus: &CaptionCorpus) -> CliResult<()> {
    if vocab.corpus_hash() != corpus.fingerprint() {
        return Err(runtime(format!(
            "vocabulary was built from corpus {} but this corpus hashes to {}",
            vocab.corpus_hash(),
            corpus.fingerprint()
        )));
    }
    Ok(())
}

fn read_features(cfg: &RunConfig, corpus: &CaptionCorpus, features: &FeatureConfig) -> CliResult<BTreeMap<String, VideoFeatures>> {
    load_feature_dir(path(cfg, "features")?, features, corpus.videos().iter().map(|v| v.video_id.as_str()))
        .map_err(feature_error)
}

fn read_checkpoint(dir: &Path) -> CliResult<Checkpoint> {
    if !dir.join(crate::trainer::MANIFEST_FILE).exists() {
        return Err(usage(format!("no checkpoint at {}", dir.display())));
    }
    Checkpoint::load(dir).map_err(runtime)
}

fn apply_decode(cfg: &mut RunConfig, args: &DecodeArgs) {
    if let Some(w) = args.beam {
        cfg.decode.strategy = Strategy::Beam;
        cfg.decode.beam_width = w;
    }
    if let Some(m) = args.max_length {
        cfg.decode.max_length = m;
    }
}

pub fn cmd_build_vocab(mut cfg: RunConfig, args: &BuildVocabArgs) -> CliResult<()> {
    apply_corpus_args(&mut cfg, &args.corpus, "corpus");
    if let Some(m) = args.min_count {
        cfg.min_count = m;
    }
    let corpus = read_corpus(&cfg, "corpus")?;
    let vocab = build_vocabulary(&corpus, cfg.min_count);
    prepare_out(&args.out, "build-vocab", &cfg)?;
    vocab.save(&args.out.join("vocab.json")).map_err(usage)?;
    println!("vocabulary: {} tokens (min count {}, hash {})", vocab.len(), cfg.min_count, vocab.hash());
    Ok(())
}

pub fn cmd_importance(mut cfg: RunConfig, args: &ImportanceArgs) -> CliResult<()> {
    apply_corpus_args(&mut cfg, &args.corpus, "corpus");
    cfg.paths.insert("vocab".into(), args.vocab.clone());
    if let Some(g) = args.gamma {
        cfg.loss.gamma = g;
    }
    if let Some(t) = args.top_fraction {
        cfg.top_fraction = t;
    }
    let corpus = read_corpus(&cfg, "corpus")?;
    let vocab = read_vocab(&args.vocab)?;
    check_vocab_corpus(&vocab, &corpus)?;
    let table = build_importance_table(&corpus, &vocab, cfg.loss.gamma).map_err(runtime)?;
    let report = corpus_bias_report(&corpus, &vocab, cfg.top_fraction);
    prepare_out(&args.out, "importance", &cfg)?;
    table.save(&args.out.join("table.json")).map_err(usage)?;
    write_json(&args.out.join("bias_report.json"), &report)?;
    println!(
        "top {}% of words ({} of {}) hold {:.4} of {} tokens",
        cfg.top_fraction * 100.0,
        report.top_words,
        report.distinct_words,
        report.share,
        report.total_tokens
    );
    if let Some(word) = &args.query {
        print_query(&table, &vocab, word, args.video.as_deref())?;
    }
    Ok(())
}

fn print_query(table: &ImportanceTable, vocab: &Vocabulary, word: &str, video: Option<&str>) -> CliResult<()> {
    let index = vocab
        .index_of(word)
        .ok_or_else(|| runtime(format!("{word:?} is not in the vocabulary")))?;
    match table.info_content(index) {
        Some(i) => println!("I({word}) = {i}"),
        None => println!("I({word}) undefined (appears in no video)"),
    }
    if let Some(v) = video {
        if !table.has_video(v) {
            return Err(runtime(format!("unknown video {v:?}")));
        }
        println!("R({word}|{v}) = {}", table.relevance(v, index));
        println!("f({word},{v}) = {}", table.importance(index, v));
    }
    Ok(())
}

pub fn cmd_synth(mut cfg: RunConfig, args: &SynthArgs) -> CliResult<()> {
    apply_corpus_args(&mut cfg, &args.corpus, "corpus");
    let s = &mut cfg.synth;
    if let Some(v) = args.videos {
        s.videos = v;
    }
    if let Some(c) = args.captions {
        s.captions = c;
    }
    if let Some(v) = args.variation {
        s.variation = v;
    }
    if let Some(r) = args.rare_rate {
        s.rare_rate = r;
    }
    s.biased |= args.biased;
    let corpus = if cfg.paths.contains_key("corpus") {
        read_corpus(&cfg, "corpus")?
    } else if cfg.synth.biased {
        biased_corpus(&BiasConfig {
            videos: cfg.synth.videos,
            captions: cfg.synth.captions,
            rare_rate: cfg.synth.rare_rate,
            seed: cfg.seed,
        })
        .map_err(usage)?
    } else {
        templated_corpus(&TemplateConfig {
            videos: cfg.synth.videos,
            captions: cfg.synth.captions,
            variation: cfg.synth.variation,
            seed: cfg.seed,
        })
        .map_err(usage)?
    };
    let features = synthesize_features(&corpus, &cfg.features, cfg.seed).map_err(runtime)?;
    prepare_out(&args.out, "synth", &cfg)?;
    let corpus_path = args.out.join("corpus.tsv");
    fs::write(&corpus_path, corpus.to_tsv()).map_err(|e| usage(format!("{}: {e}", corpus_path.display())))?;
    let feature_dir = args.out.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| usage(format!("{}: {e}", feature_dir.display())))?;
    save_feature_dir(&feature_dir, features.values()).map_err(feature_error)?;
    println!(
        "{} videos, {} captions -> {}",
        corpus.len(),
        corpus.captions().count(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(mut cfg: RunConfig, args: &TrainArgs) -> CliResult<()> {
    apply_corpus_args(&mut cfg, &args.corpus, "corpus");
    for (key, p) in [("features", &args.features), ("vocab", &args.vocab), ("val_corpus", &args.val_corpus)] {
        if let Some(p) = p {
            cfg.paths.insert(key.into(), p.clone());
        }
    }
    if let Some(l) = args.loss {
        cfg.loss.kind = match l {
            LossArg::Ce => LossKind::CrossEntropy,
            LossArg::Il => LossKind::InformationLoss,
        };
    }
    if let Some(v) = args.lambda {
        cfg.loss.lambda = v;
    }
    if let Some(v) = args.gamma {
        cfg.loss.gamma = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.dropout_keep {
        cfg.train.dropout_keep = v;
    }
    if let Some(v) = args.hidden {
        cfg.model.hidden = v;
    }
    cfg.train.validate().map_err(usage)?;
    cfg.loss.validate().map_err(usage)?;

    let corpus = read_corpus(&cfg, "corpus")?;
    let vocab = match cfg.paths.get("vocab") {
        Some(p) => {
            let v = read_vocab(p)?;
            check_vocab_corpus(&v, &corpus)?;
            v
        }
        None => build_vocabulary(&corpus, cfg.min_count),
    };
    let features = read_features(&cfg, &corpus, &cfg.features)?;
    let val = match cfg.paths.contains_key("val_corpus") {
        true => {
            let c = read_corpus(&cfg, "val_corpus")?;
            let f = read_features(&cfg, &c, &cfg.features)?;
            Some((c, f))
        }
        false => None,
    };
    let table = match cfg.loss.kind {
        LossKind::InformationLoss => Some(build_importance_table(&corpus, &vocab, cfg.loss.gamma).map_err(runtime)?),
        LossKind::CrossEntropy => None,
    };
    let dims = cfg.model.dims(&cfg.features, vocab.len());
    let init = ModelParams::init(dims.clone(), &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["init"])));
    let samples = build_samples(&corpus, &vocab);

    prepare_out(&args.out, "train", &cfg)?;
    let validation = val.as_ref().map(|(c, f)| Validation {
        corpus: c,
        features: f,
        decode: cfg.decode.clone(),
    });
    let outcome = train(
        &samples,
        &features,
        &vocab,
        table.as_ref(),
        init,
        &cfg.train,
        &cfg.loss,
        validation.as_ref(),
        Some(&args.out.join("diagnostics")),
    )
    .map_err(runtime)?;
    for r in &outcome.log {
        let val = r.val_cider.map(|c| format!(" val_cider {c:.4}")).unwrap_or_default();
        println!(
            "epoch {:4} lr {:.3e} loss {:.6} token_ce {:.6}{val} ({} ms)",
            r.epoch, r.lr, r.mean_loss, r.token_ce, r.wall_ms
        );
    }

    let config_value = serde_json::to_value(&cfg).expect("config serializes");
    let save = |dir: &Path, epoch: usize, params: &ModelParams| -> CliResult<()> {
        Checkpoint {
            manifest: Manifest {
                dims: dims.clone(),
                features: cfg.features.clone(),
                vocab_hash: vocab.hash(),
                epoch,
                config: config_value.clone(),
            },
            params: params.clone(),
            vocab: vocab.clone(),
        }
        .save(dir)
        .map_err(runtime)
    };
    save(&args.out, cfg.train.max_epochs, &outcome.params)?;
    if let Some((epoch, cider, params)) = &outcome.best {
        save(&args.out.join("best"), epoch + 1, params)?;
        println!("best validation CIDEr {cider:.4} after epoch {epoch}");
    }
    write_json(&args.out.join("train_log.json"), &outcome.log)?;
    if let Some(t) = &table {
        t.save(&args.out.join("table.json")).map_err(usage)?;
    }
    Ok(())
}

fn parse_metrics(spec: &str) -> CliResult<MetricSet> {
    let mut set = MetricSet {
        bleu4: false,
        cider: false,
    };
    for m in spec.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        match m {
            "bleu4" => set.bleu4 = true,
            "cider" => set.cider = true,
            other => return Err(usage(format!("unknown metric {other:?}; expected bleu4 or cider"))),
        }
    }
    if !(set.bleu4 || set.cider) {
        return Err(usage("--metrics selects nothing"));
    }
    Ok(set)
}

pub fn cmd_eval(mut cfg: RunConfig, args: &EvalArgs) -> CliResult<()> {
    apply_corpus_args(&mut cfg, &args.corpus, "corpus");
    if let Some(f) = &args.features {
        cfg.paths.insert("features".into(), f.clone());
    }
    cfg.paths.insert("checkpoint".into(), args.checkpoint.clone());
    apply_decode(&mut cfg, &args.decode);
    cfg.decode.validate().map_err(usage)?;
    let metrics = parse_metrics(&args.metrics)?;
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let corpus = read_corpus(&cfg, "corpus")?;
    let features = read_features(&cfg, &corpus, &ckpt.manifest.features)?;
    let mut captions = BTreeMap::new();
    for v in corpus.videos() {
        let out = generate(&features[&v.video_id], &ckpt.params, &ckpt.vocab, &cfg.decode).map_err(runtime)?;
        captions.insert(v.video_id.clone(), out.caption);
    }
    let report = score_captions(&captions, &corpus, &ckpt.manifest.vocab_hash, metrics).map_err(runtime)?;
    prepare_out(&args.out, "eval", &cfg)?;
    write_json(&args.out.join("report.json"), &report)?;
    if let Some(b) = report.bleu4 {
        println!("BLEU-4 {b:.6}");
    }
    if let Some(c) = report.cider {
        println!("CIDEr  {c:.6}");
    }
    Ok(())
}

#[derive(Serialize)]
struct CaptionRecord<'a> {
    video_id: &'a str,
    caption: String,
    log_prob: f64,
    attention: crate::captioner::AttentionTrace,
}

pub fn cmd_generate(mut cfg: RunConfig, args: &GenerateArgs) -> CliResult<()> {
    apply_corpus_args(&mut cfg, &args.corpus, "corpus");
    if let Some(f) = &args.features {
        cfg.paths.insert("features".into(), f.clone());
    }
    cfg.paths.insert("checkpoint".into(), args.checkpoint.clone());
    apply_decode(&mut cfg, &args.decode);
    cfg.decode.validate().map_err(usage)?;
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let ids: Vec<String> = if !args.videos.is_empty() {
        args.videos.clone()
    } else if cfg.paths.contains_key("corpus") {
        read_corpus(&cfg, "corpus")?
            .videos()
            .iter()
            .map(|v| v.video_id.clone())
            .collect()
    } else {
        return Err(usage("give --video ids or a --corpus"));
    };
    let features = load_feature_dir(path(&cfg, "features")?, &ckpt.manifest.features, ids.iter().map(String::as_str))
        .map_err(feature_error)?;
    prepare_out(&args.out, "generate", &cfg)?;
    let mut records = Vec::with_capacity(ids.len());
    let mut tsv = String::new();
    for id in &ids {
        let out = generate(&features[id], &ckpt.params, &ckpt.vocab, &cfg.decode).map_err(runtime)?;
        println!("{id}\t{}", out.caption);
        tsv.push_str(&format!("{id}\t{}\n", out.caption));
        records.push(CaptionRecord {
            video_id: id,
            caption: out.caption.to_string(),
            log_prob: out.log_prob,
            attention: out.attention,
        });
    }
    fs::write(args.out.join("captions.tsv"), tsv).map_err(usage)?;
    write_json(&args.out.join("captions.json"), &records)
}

pub fn cmd_bias_experiment(mut cfg: RunConfig, args: &BiasExperimentArgs) -> CliResult<()> {
    let e = &mut cfg.experiment;
    if let Some(v) = args.seeds {
        e.seeds = v;
    }
    if let Some(v) = args.videos {
        e.videos = v;
    }
    if let Some(v) = args.captions {
        e.captions = v;
    }
    if let Some(v) = args.rare_rate {
        e.rare_rate = v;
    }
    if let Some(v) = args.max_epochs {
        e.max_epochs = v;
    }
    e.lambda_zero_arm |= args.lambda_zero_arm;
    if let Some(v) = args.lambda {
        cfg.loss.lambda = v;
    }
    if let Some(v) = args.gamma {
        cfg.loss.gamma = v;
    }
    let config = experiment_config(&cfg);
    prepare_out(&args.out, "bias-experiment", &cfg)?;
    let report = experiment::run(&config, |s| {
        println!(
            "seed {}: rare recall CE {:.3} IL {:.3}; BLEU-4 CE {:.4} IL {:.4}",
            s.seed, s.ce.rare_recall, s.il.rare_recall, s.ce.bleu4, s.il.bleu4
        );
    })
    .map_err(runtime)?;
    write_json(&args.out.join("report.json"), &report)?;
    let a = &report.aggregate;
    println!(
        "mean rare recall CE {:.3} IL {:.3}; IL >= CE in {}/{} seeds; max BLEU-4 drop {:.4}",
        a.ce.rare_recall,
        a.il.rare_recall,
        a.il_rare_at_least_ce,
        report.per_seed.len(),
        a.max_bleu_drop
    );
    Ok(())
}

/// The experiment settings implied by a resolved run configuration.
pub fn experiment_config(cfg: &RunConfig) -> ExperimentConfig {
    let e = &cfg.experiment;
    ExperimentConfig {
        seeds: e.seeds,
        base_seed: cfg.seed,
        corpus: BiasConfig {
            videos: e.videos,
            captions: e.captions,
            rare_rate: e.rare_rate,
            seed: cfg.seed,
        },
        features: cfg.features.clone(),
        model: cfg.model,
        train: TrainConfig {
            max_epochs: e.max_epochs,
            ..cfg.train.clone()
        },
        lambda: cfg.loss.lambda,
        gamma: cfg.loss.gamma,
        lambda_zero_arm: e.lambda_zero_arm,
        decode: cfg.decode.clone(),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(cli.config.as_deref(), cli.profile, cli.seed)?;
    match &cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(cfg, a),
        Command::Importance(a) => cmd_importance(cfg, a),
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Generate(a) => cmd_generate(cfg, a),
        Command::BiasExperiment(a) => cmd_bias_experiment(cfg, a),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
