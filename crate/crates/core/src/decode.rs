//! Caption generation and evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::{
    decode_step, decoder_init, encode, AttentionTrace, FeatureVars, ModelError, ModelParams, Mode, Step,
};
use crate::corpus::{CaptionCorpus, TokenizedCaption, Vocabulary, BOS, EOS};
use crate::features::VideoFeatures;
use crate::metrics::{bleu4, cider, corpus_bleu4, MetricError, BLEU_VARIANT, CIDER_VARIANT};
use crate::ndcore::{log_sum_exp, Graph, Var};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no features for video {0:?}")]
    MissingFeatures(String),
    #[error("invalid decode config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_length: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            beam_width: 1,
            max_length: 20,
        }
    }
}

impl DecodeConfig {
    pub fn beam(width: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_width: width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_width == 0 || self.max_length == 0 {
            return Err(DecodeError::Config("beam_width and max_length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Generated indices without BOS/EOS.
    pub tokens: Vec<usize>,
    pub caption: TokenizedCaption,
    /// Sum of log-probabilities of the emitted tokens, EOS included.
    pub log_prob: f64,
    pub attention: AttentionTrace,
}

pub fn generate(
    features: &VideoFeatures,
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &DecodeConfig,
) -> Result<Generated, DecodeError> {
    config.validate()?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let feats = FeatureVars::bind(&mut g, features);
    let enc = encode(&mut g, &feats, &bound, &mut Mode::Eval).map_err(ModelError::from)?;
    let (h0, c0) = decoder_init(&mut g, &bound);

    let (tokens, log_prob, steps) = match config.strategy {
        Strategy::Greedy => {
            let (mut h, mut c, mut prev) = (h0, c0, BOS);
            let mut out = Vec::new();
            let mut steps = Vec::new();
            let mut log_prob = 0.0;
            for _ in 0..config.max_length {
                let step = decode_step(&mut g, prev, h, c, &enc, &bound, &mut Mode::Eval)?;
                let logits = g.value(step.logits).data();
                let best = argmax(logits);
                log_prob += logits[best] - log_sum_exp(logits);
                steps.push(step);
                if best == EOS {
                    break;
                }
                out.push(best);
                (h, c, prev) = (step.h, step.c, best);
            }
            (out, log_prob, steps)
        }
        Strategy::Beam => beam_search(&mut g, h0, c0, &enc, &bound, config)?,
    };
    let attention = AttentionTrace::read(&g, &enc, &steps);
    Ok(Generated {
        caption: vocab.decode(&tokens),
        tokens,
        log_prob,
        attention,
    })
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    h: Var,
    c: Var,
    steps: Vec<Step>,
}

/// Keeps the `beam_width` best expansions by cumulative log-probability
/// (ties: larger raw logit, then lower token index, then earlier parent).
/// Expansions ending in EOS leave the beam. Finished hypotheses are ranked by
/// log-probability per emitted token.
fn beam_search(
    g: &mut Graph,
    h0: Var,
    c0: Var,
    enc: &crate::captioner::Encoded,
    bound: &crate::captioner::BoundParams,
    config: &DecodeConfig,
) -> Result<(Vec<usize>, f64, Vec<Step>), DecodeError> {
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        h: h0,
        c: c0,
        steps: Vec::new(),
    }];
    let mut finished: Vec<(f64, Hypothesis)> = Vec::new();
    for _ in 0..config.max_length {
        if alive.is_empty() {
            break;
        }
        let mut candidates: Vec<(f64, f64, usize, usize, Step)> = Vec::new();
        for (parent, hyp) in alive.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let step = decode_step(g, prev, hyp.h, hyp.c, enc, bound, &mut Mode::Eval)?;
            let logits = g.value(step.logits).data();
            let lse = log_sum_exp(logits);
            for (tok, &l) in logits.iter().enumerate() {
                candidates.push((hyp.log_prob + (l - lse), l, tok, parent, step));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut next = Vec::with_capacity(config.beam_width);
        for (log_prob, _, tok, parent, step) in candidates.into_iter().take(config.beam_width) {
            let mut hyp = alive[parent].clone();
            hyp.log_prob = log_prob;
            hyp.steps.push(step);
            if tok == EOS {
                let len = hyp.tokens.len() + 1;
                finished.push((log_prob / len as f64, hyp));
            } else {
                hyp.tokens.push(tok);
                hyp.h = step.h;
                hyp.c = step.c;
                next.push(hyp);
            }
        }
        alive = next;
    }
    for hyp in alive {
        let len = hyp.tokens.len().max(1);
        finished.push((hyp.log_prob / len as f64, hyp));
    }
    let mut best = 0;
    for (i, (score, _)) in finished.iter().enumerate() {
        if *score > finished[best].0 {
            best = i;
        }
    }
    let (_, hyp) = finished.swap_remove(best);
    Ok((hyp.tokens, hyp.log_prob, hyp.steps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub video_id: String,
    pub generated: String,
    pub references: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu_variant: String,
    pub cider_variant: String,
    pub vocab_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
    pub videos: Vec<VideoEval>,
}

/// Which metrics to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricSet {
    pub bleu4: bool,
    pub cider: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            bleu4: true,
            cider: true,
        }
    }
}

/// Scores already generated captions against the corpus references.
pub fn score_captions(
    candidates: &BTreeMap<String, TokenizedCaption>,
    corpus: &CaptionCorpus,
    vocab_hash: &str,
    metrics: MetricSet,
) -> Result<EvalReport, DecodeError> {
    let references: BTreeMap<String, Vec<TokenizedCaption>> = corpus
        .videos()
        .iter()
        .map(|v| (v.video_id.clone(), v.captions.clone()))
        .collect();
    let cider_scores = if metrics.cider {
        Some(cider(candidates, &references)?)
    } else {
        None
    };
    let mut pairs = Vec::new();
    let mut videos = Vec::new();
    for v in corpus.videos() {
        let Some(cand) = candidates.get(&v.video_id) else { continue };
        pairs.push((cand, v.captions.as_slice()));
        videos.push(VideoEval {
            video_id: v.video_id.clone(),
            generated: cand.to_string(),
            references: v.captions.iter().map(ToString::to_string).collect(),
            bleu4: metrics.bleu4.then(|| bleu4(cand, &v.captions)),
            cider: cider_scores.as_ref().map(|c| c.per_video[&v.video_id]),
        });
    }
    Ok(EvalReport {
        bleu_variant: BLEU_VARIANT.into(),
        cider_variant: CIDER_VARIANT.into(),
        vocab_hash: vocab_hash.to_string(),
        bleu4: metrics.bleu4.then(|| corpus_bleu4(pairs.iter().map(|(c, r)| (*c, *r)))),
        cider: cider_scores.map(|c| c.corpus),
        videos,
    })
}

/// Generates one caption per corpus video and scores it.
pub fn evaluate(
    params: &ModelParams,
    vocab: &Vocabulary,
    corpus: &CaptionCorpus,
    features: &BTreeMap<String, VideoFeatures>,
    config: &DecodeConfig,
) -> Result<EvalReport, DecodeError> {
    evaluate_with(params, vocab, corpus, features, config, MetricSet::default())
}

pub fn evaluate_with(
    params: &ModelParams,
    vocab: &Vocabulary,
    corpus: &CaptionCorpus,
    features: &BTreeMap<String, VideoFeatures>,
    config: &DecodeConfig,
    metrics: MetricSet,
) -> Result<EvalReport, DecodeError> {
    let candidates = generate_all(params, vocab, corpus, features, config)?;
    score_captions(&candidates, corpus, &vocab.hash(), metrics)
}

pub fn generate_all(
    params: &ModelParams,
    vocab: &Vocabulary,
    corpus: &CaptionCorpus,
    features: &BTreeMap<String, VideoFeatures>,
    config: &DecodeConfig,
) -> Result<BTreeMap<String, TokenizedCaption>, DecodeError> {
    let mut out = BTreeMap::new();
    for v in corpus.videos() {
        let f = features
            .get(&v.video_id)
            .ok_or_else(|| DecodeError::MissingFeatures(v.video_id.clone()))?;
        out.insert(v.video_id.clone(), generate(f, params, vocab, config)?.caption);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::ModelDims;
    use crate::corpus::{build_vocabulary, parse_corpus, CorpusFormat};
    use crate::features::{synthesize_features, FeatureConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (CaptionCorpus, Vocabulary, BTreeMap<String, VideoFeatures>, ModelDims) {
        let c = parse_corpus("v1\ta dog runs\nv2\ta cat sleeps\n", CorpusFormat::Tsv).unwrap();
        let vocab = build_vocabulary(&c, 1);
        let fc = FeatureConfig {
            n_frames: 3,
            k_objects: 2,
            d_object: 4,
            d_frame: 4,
            d_clip: 4,
        };
        let feats = synthesize_features(&c, &fc, 1).unwrap();
        let dims = ModelDims::new(6, 5, 4, &fc, vocab.len());
        (c, vocab, feats, dims)
    }

    #[test]
    fn eos_peaked_model_gives_empty_caption() {
        let (_, vocab, feats, dims) = setup();
        let mut p = ModelParams::zeros(dims);
        // Zero hidden state ⇒ logits = output · h = 0; make EOS win through
        // a constant unit in h: forget bias keeps c at 0, so instead bias the
        // candidate gate and push one output row.
        let h = p.dims().hidden;
        p.get_mut("lstm_f.bias").unwrap().data_mut()[3 * h..4 * h].fill(5.0);
        p.get_mut("lstm_f.bias").unwrap().data_mut()[..3 * h].fill(5.0);
        p.get_mut("output").unwrap().data_mut()[EOS * h..(EOS + 1) * h].fill(3.0);
        let out = generate(&feats["v1"], &p, &vocab, &DecodeConfig::default()).unwrap();
        assert!(out.caption.is_empty());
        assert!(out.tokens.is_empty());
    }

    #[test]
    fn beam_width_one_matches_greedy() {
        let (_, vocab, feats, dims) = setup();
        for seed in 0..5 {
            let p = ModelParams::init(dims.clone(), &mut ChaCha8Rng::seed_from_u64(seed));
            for id in ["v1", "v2"] {
                let greedy = generate(&feats[id], &p, &vocab, &DecodeConfig::default()).unwrap();
                let beam = generate(&feats[id], &p, &vocab, &DecodeConfig::beam(1)).unwrap();
                assert_eq!(greedy.tokens, beam.tokens);
            }
        }
    }

    #[test]
    fn max_length_caps_output() {
        let (_, vocab, feats, dims) = setup();
        let p = ModelParams::init(dims, &mut ChaCha8Rng::seed_from_u64(3));
        let cfg = DecodeConfig {
            max_length: 2,
            ..DecodeConfig::default()
        };
        assert!(generate(&feats["v1"], &p, &vocab, &cfg).unwrap().tokens.len() <= 2);
        let wide = DecodeConfig {
            max_length: 2,
            ..DecodeConfig::beam(3)
        };
        assert!(generate(&feats["v1"], &p, &vocab, &wide).unwrap().tokens.len() <= 2);
    }

    #[test]
    fn copied_references_score_perfect_bleu() {
        let (c, vocab, _, _) = setup();
        let cands = c
            .videos()
            .iter()
            .map(|v| (v.video_id.clone(), v.captions[0].clone()))
            .collect();
        let r = score_captions(&cands, &c, &vocab.hash(), MetricSet::default()).unwrap();
        assert_eq!(r.bleu4, Some(1.0));
        for v in &r.videos {
            assert_eq!(v.bleu4, Some(1.0));
        }
    }

    #[test]
    fn missing_features_reported() {
        let (c, vocab, mut feats, dims) = setup();
        feats.remove("v2");
        let p = ModelParams::zeros(dims);
        assert!(matches!(
            evaluate(&p, &vocab, &c, &feats, &DecodeConfig::default()),
            Err(DecodeError::MissingFeatures(id)) if id == "v2"
        ));
    }
}
