//! Paired CE / information-loss runs on a planted-bias corpus.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captioner::{ModelParams, ModelSize};
use crate::corpus::{build_vocabulary, CaptionCorpus};
use crate::decode::{evaluate, DecodeConfig, EvalReport};
use crate::features::{synthesize_features, FeatureConfig};
use crate::hashing::derive_seed;
use crate::importance::build_importance_table;
use crate::objective::{LossConfig, LossKind};
use crate::synth::{biased_corpus, rare_token, BiasConfig};
use crate::trainer::{build_samples, train, TrainConfig, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seeds: usize,
    pub base_seed: u64,
    /// The corpus seed is replaced per run.
    pub corpus: BiasConfig,
    pub features: FeatureConfig,
    pub model: ModelSize,
    pub train: TrainConfig,
    pub lambda: f64,
    pub gamma: f64,
    /// Also train an information-loss arm with `λ = 0`.
    pub lambda_zero_arm: bool,
    pub decode: DecodeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    /// Fraction of videos whose caption contains the video's rare token.
    pub rare_recall: f64,
    /// Mean fraction of a video's non-rare reference words present in its caption.
    pub common_recall: f64,
    pub bleu4: f64,
    pub cider: f64,
    pub loss_curve: Vec<f64>,
    pub captions: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub ce: ArmResult,
    pub il: ArmResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub il_lambda_zero: Option<ArmResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub rare_recall: f64,
    pub common_recall: f64,
    pub bleu4: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ce: ArmSummary,
    pub il: ArmSummary,
    /// Seeds where the IL arm's rare-token recall is at least the CE arm's.
    pub il_rare_at_least_ce: usize,
    /// Largest per-seed `bleu4(CE) − bleu4(IL)`.
    pub max_bleu_drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

fn arm_result(corpus: &CaptionCorpus, report: &EvalReport, loss_curve: Vec<f64>) -> ArmResult {
    let n = report.videos.len().max(1) as f64;
    let mut rare_hits = 0;
    let mut common = 0.0;
    for (i, (video, eval)) in corpus.videos().iter().zip(&report.videos).enumerate() {
        let rare = rare_token(i);
        let generated: BTreeSet<&str> = eval.generated.split(' ').collect();
        if generated.contains(rare.as_str()) {
            rare_hits += 1;
        }
        let reference: BTreeSet<&str> = video
            .captions
            .iter()
            .flat_map(|c| c.tokens().iter().map(String::as_str))
            .filter(|t| *t != rare)
            .collect();
        let found = reference.iter().filter(|t| generated.contains(*t)).count();
        common += found as f64 / reference.len().max(1) as f64;
    }
    ArmResult {
        rare_recall: rare_hits as f64 / n,
        common_recall: common / n,
        bleu4: report.bleu4.unwrap_or(0.0),
        cider: report.cider.unwrap_or(0.0),
        loss_curve,
        captions: report
            .videos
            .iter()
            .map(|v| (v.video_id.clone(), v.generated.clone()))
            .collect(),
    }
}

fn summarize<'a>(arms: impl Iterator<Item = &'a ArmResult>) -> ArmSummary {
    let arms: Vec<_> = arms.collect();
    let n = arms.len().max(1) as f64;
    let mean = |f: fn(&ArmResult) -> f64| arms.iter().map(|a| f(a)).sum::<f64>() / n;
    ArmSummary {
        rare_recall: mean(|a| a.rare_recall),
        common_recall: mean(|a| a.common_recall),
        bleu4: mean(|a| a.bleu4),
        cider: mean(|a| a.cider),
    }
}

/// Trains every arm of one seed from the same initial parameters and the
/// same shuffle/dropout streams; only the objective differs.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedResult, TrainError> {
    let corpus = biased_corpus(&BiasConfig {
        seed,
        ..config.corpus.clone()
    })?;
    let vocab = build_vocabulary(&corpus, 1);
    let features = synthesize_features(&corpus, &config.features, seed)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let table = build_importance_table(&corpus, &vocab, config.gamma)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let dims = config.model.dims(&config.features, vocab.len());
    let init = ModelParams::init(dims, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &["init"])));
    let samples = build_samples(&corpus, &vocab);
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };

    let run_arm = |loss: LossConfig| -> Result<ArmResult, TrainError> {
        let out = train(
            &samples,
            &features,
            &vocab,
            Some(&table),
            init.clone(),
            &train_config,
            &loss,
            None,
            None,
        )?;
        let report = evaluate(&out.params, &vocab, &corpus, &features, &config.decode)
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(arm_result(&corpus, &report, out.log.iter().map(|r| r.mean_loss).collect()))
    };
    let il = |lambda: f64| LossConfig {
        kind: LossKind::InformationLoss,
        lambda,
        gamma: config.gamma,
    };
    Ok(SeedResult {
        seed,
        ce: run_arm(LossConfig {
            gamma: config.gamma,
            ..LossConfig::cross_entropy()
        })?,
        il: run_arm(il(config.lambda))?,
        il_lambda_zero: if config.lambda_zero_arm {
            Some(run_arm(il(0.0))?)
        } else {
            None
        },
    })
}

pub fn run(config: &ExperimentConfig, mut progress: impl FnMut(&SeedResult)) -> Result<ExperimentReport, TrainError> {
    let mut per_seed = Vec::with_capacity(config.seeds);
    for i in 0..config.seeds {
        let result = run_seed(config, config.base_seed + i as u64)?;
        progress(&result);
        per_seed.push(result);
    }
    let aggregate = Aggregate {
        ce: summarize(per_seed.iter().map(|s| &s.ce)),
        il: summarize(per_seed.iter().map(|s| &s.il)),
        il_rare_at_least_ce: per_seed
            .iter()
            .filter(|s| s.il.rare_recall >= s.ce.rare_recall)
            .count(),
        max_bleu_drop: per_seed
            .iter()
            .map(|s| s.ce.bleu4 - s.il.bleu4)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(ExperimentReport {
        config: config.clone(),
        per_seed,
        aggregate,
    })
}
