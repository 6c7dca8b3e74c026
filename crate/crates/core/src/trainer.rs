//! ADAM training with step-annealed learning rate, teacher forcing and
//! checkpointing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::{forward_teacher_forced, ModelDims, ModelError, ModelParams, Mode};
use crate::corpus::{encode_caption, CaptionCorpus, CorpusError, Vocabulary};
use crate::decode::{evaluate, DecodeConfig};
use crate::features::{FeatureConfig, VideoFeatures};
use crate::hashing::derive_seed;
use crate::importance::ImportanceTable;
use crate::ndcore::{log_sum_exp, Gradients, Graph, Tensor, TensorError};
use crate::objective::{caption_loss, LossConfig, LossKind, ObjectiveError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (videos {videos:?}){dump}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        videos: Vec<String>,
        dump: String,
    },
    #[error("gradient for {0:?} missing or mis-shaped")]
    GradientShape(String),
    #[error("no features for video {0:?}")]
    MissingFeatures(String),
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub anneal_factor: f64,
    pub anneal_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout_keep: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Validation interval in epochs when a validation split is supplied.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            anneal_factor: 0.8,
            anneal_every: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            max_epochs: 300,
            dropout_keep: 0.5,
            clip_norm: Some(5.0),
            seed: 0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a non-negative finite number");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return bad("anneal_factor must be in (0, 1]");
        }
        if self.anneal_every == 0 {
            return bad("anneal_every must be positive");
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad("dropout_keep must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        Ok(())
    }
}

/// `base · factor^⌊epoch / every⌋`, evaluated as a division by
/// `(1/factor)^k`, which reproduces decimal schedules such as
/// 1e-4 → 0.8e-4 → 0.64e-4 without rounding drift.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let k = (epoch / config.anneal_every) as i32;
    config.learning_rate / (1.0 / config.anneal_factor).powi(k)
}

/// First and second moments per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update over every parameter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            Some(g) if g.shape() == p.shape() => {
                if !g.is_finite() {
                    return Err(TensorError::NonFinite("gradient").into());
                }
            }
            _ => return Err(TrainError::GradientShape(name.clone())),
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);
    let correction1 = 1.0 - b1.powi(state.step as i32);
    let correction2 = 1.0 - b2.powi(state.step as i32);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()))
            .data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()))
            .data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (state.first[name].data(), state.second[name].data());
        for ((theta, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / correction1;
            let v_hat = vi / correction2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.scale_in_place(s));
    }
    norm
}

/// One (video, encoded caption) training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub target: Vec<usize>,
}

/// Every caption of every video becomes its own sample.
pub fn build_samples(corpus: &CaptionCorpus, vocab: &Vocabulary) -> Vec<Sample> {
    corpus
        .videos()
        .iter()
        .flat_map(|v| {
            v.captions.iter().map(|c| Sample {
                video_id: v.video_id.clone(),
                target: encode_caption(c, vocab),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean caption loss under the training objective.
    pub mean_loss: f64,
    /// Mean per-token negative log-likelihood, train mode.
    pub token_ce: f64,
    /// Not serialized, so logs of identical runs compare equal.
    #[serde(skip)]
    pub wall_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_cider: Option<f64>,
}

/// Validation split used for best-checkpoint selection by CIDEr.
pub struct Validation<'a> {
    pub corpus: &'a CaptionCorpus,
    pub features: &'a BTreeMap<String, VideoFeatures>,
    pub decode: DecodeConfig,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub best: Option<(usize, f64, ModelParams)>,
    pub log: Vec<EpochRecord>,
    pub state: OptimizerState,
}

/// Runs the epoch loop. Batches are drawn from a seeded shuffle; each
/// caption is unrolled to its own length, so no padding positions enter the
/// loss. The batch loss is the mean of the caption losses.
#[allow(clippy::too_many_arguments)]
pub fn train(
    samples: &[Sample],
    features: &BTreeMap<String, VideoFeatures>,
    vocab: &Vocabulary,
    table: Option<&ImportanceTable>,
    mut params: ModelParams,
    config: &TrainConfig,
    loss: &LossConfig,
    validation: Option<&Validation<'_>>,
    dump_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    loss.validate()?;
    if params.dims().vocab != vocab.len() {
        return Err(TrainError::Mismatch(format!(
            "model vocabulary {} vs vocabulary file {}",
            params.dims().vocab,
            vocab.len()
        )));
    }
    if let Some(t) = table {
        if t.vocab_hash() != vocab.hash() {
            return Err(TrainError::Mismatch("importance table built for another vocabulary".into()));
        }
        if loss.kind == LossKind::InformationLoss && t.gamma() != loss.gamma {
            return Err(TrainError::Mismatch(format!(
                "table gamma {} vs loss gamma {}",
                t.gamma(),
                loss.gamma
            )));
        }
    }
    for s in samples {
        if !features.contains_key(&s.video_id) {
            return Err(TrainError::MissingFeatures(s.video_id.clone()));
        }
    }

    let dims = params.dims().clone();
    let mut state = OptimizerState::new(&params);
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, config);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["shuffle", &epoch.to_string()]));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut nll_sum = 0.0;
        let mut tokens = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                &["dropout", &epoch.to_string(), &b.to_string()],
            ));
            let videos = || batch.iter().map(|&i| samples[i].video_id.clone()).collect::<Vec<_>>();
            let result = batch_gradients(
                samples,
                batch,
                features,
                table,
                &params,
                &dims,
                loss,
                config.dropout_keep,
                &mut dropout_rng,
            );
            let (batch_loss, batch_nll, batch_tokens, mut grads) = match result {
                Ok(r) if r.0.is_finite() => r,
                Ok(_) | Err(TrainError::Tensor(TensorError::NonFinite(_))) => {
                    let dump = dump_state(dump_dir, epoch, b, &videos(), &params);
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: b,
                        videos: videos(),
                        dump,
                    });
                }
                Err(e) => return Err(e),
            };
            loss_sum += batch_loss * batch.len() as f64;
            nll_sum += batch_nll;
            tokens += batch_tokens;
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam_step(&mut params, &grads, &mut state, lr, config)?;
        }

        let val_cider = match validation {
            Some(v) if (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.max_epochs => {
                let report = evaluate(&params, vocab, v.corpus, v.features, &v.decode)
                    .map_err(|e| TrainError::Config(format!("validation failed: {e}")))?;
                let cider = report.cider.unwrap_or(0.0);
                if best.as_ref().is_none_or(|(_, c, _)| cider > *c) {
                    best = Some((epoch, cider, params.clone()));
                }
                Some(cider)
            }
            _ => None,
        };
        log.push(EpochRecord {
            epoch,
            lr,
            mean_loss: if samples.is_empty() { 0.0 } else { loss_sum / samples.len() as f64 },
            token_ce: if tokens == 0 { 0.0 } else { nll_sum / tokens as f64 },
            wall_ms: started.elapsed().as_millis(),
            val_cider,
        });
    }
    Ok(TrainOutcome {
        params,
        best,
        log,
        state,
    })
}

type BatchResult = (f64, f64, usize, Gradients);

#[allow(clippy::too_many_arguments)]
fn batch_gradients(
    samples: &[Sample],
    batch: &[usize],
    features: &BTreeMap<String, VideoFeatures>,
    table: Option<&ImportanceTable>,
    params: &ModelParams,
    dims: &ModelDims,
    loss: &LossConfig,
    keep: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BatchResult, TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let mut losses = Vec::with_capacity(batch.len());
    let mut nll = 0.0;
    let mut tokens = 0;
    for &i in batch {
        let s = &samples[i];
        let feats = &features[&s.video_id];
        let mut mode = Mode::Train { keep, rng: &mut *rng };
        let fw = forward_teacher_forced(&mut g, feats, &s.target, &bound, dims, &mut mode)?;
        let targets = &s.target[1..];
        let l = caption_loss(&mut g, fw.logits, targets, &s.video_id, loss, table)?;
        nll += sequence_nll(g.value(fw.logits), targets);
        tokens += targets.len();
        losses.push(l);
    }
    let total = g.add_n(&losses)?;
    let mean = g.scale(total, 1.0 / batch.len() as f64)?;
    let value = g.scalar_value(mean);
    let grads = g.backward(mean)?;
    Ok((value, nll, tokens, grads))
}

/// Unweighted `Σ_t −log p(y_t)` from a `T×V` logit matrix.
pub fn sequence_nll(logits: &Tensor, targets: &[usize]) -> f64 {
    targets
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let row = logits.row(t);
            log_sum_exp(row) - row[y]
        })
        .sum()
}

/// Mean per-token cross-entropy over `samples` in eval mode.
pub fn token_cross_entropy(
    samples: &[Sample],
    features: &BTreeMap<String, VideoFeatures>,
    params: &ModelParams,
) -> Result<f64, TrainError> {
    let mut nll = 0.0;
    let mut tokens = 0;
    for s in samples {
        let feats = features
            .get(&s.video_id)
            .ok_or_else(|| TrainError::MissingFeatures(s.video_id.clone()))?;
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fw = forward_teacher_forced(&mut g, feats, &s.target, &bound, params.dims(), &mut Mode::Eval)?;
        nll += sequence_nll(g.value(fw.logits), &s.target[1..]);
        tokens += s.target.len() - 1;
    }
    Ok(if tokens == 0 { 0.0 } else { nll / tokens as f64 })
}

fn dump_state(dir: Option<&Path>, epoch: usize, batch: usize, videos: &[String], params: &ModelParams) -> String {
    let Some(dir) = dir else {
        return String::new();
    };
    let write = || -> Result<(), Box<dyn std::error::Error>> {
        fs::create_dir_all(dir)?;
        let info = serde_json::json!({ "epoch": epoch, "batch": batch, "videos": videos });
        fs::write(dir.join("diagnostic.json"), serde_json::to_string_pretty(&info)?)?;
        params.save(&dir.join("diagnostic_params.ndt"))?;
        Ok(())
    };
    match write() {
        Ok(()) => format!("; state dumped to {}", dir.display()),
        Err(e) => format!("; state dump failed: {e}"),
    }
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dims: ModelDims,
    pub features: FeatureConfig,
    pub vocab_hash: String,
    pub epoch: usize,
    /// The run configuration that produced the checkpoint.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ModelParams,
    pub vocab: Vocabulary,
}

pub const PARAMS_FILE: &str = "params.ndt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.json";

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let err = |message: String| TrainError::Checkpoint {
            path: dir.display().to_string(),
            message,
        };
        fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        self.params.save(&dir.join(PARAMS_FILE))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), manifest).map_err(|e| err(e.to_string()))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let err = |message: String| TrainError::Checkpoint {
            path: dir.display().to_string(),
            message,
        };
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| err(e.to_string()))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(TrainError::Mismatch("checkpoint vocabulary hash differs from manifest".into()));
        }
        let params = ModelParams::load(&dir.join(PARAMS_FILE), manifest.dims.clone())?;
        Ok(Self {
            manifest,
            params,
            vocab,
        })
    }
}
