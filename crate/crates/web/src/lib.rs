//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function takes plain strings and numbers and returns a JSON
//! string. The `*_json` functions hold the logic and are callable natively.

use std::collections::BTreeMap;

use infoloss::corpus::{
    build_vocabulary, encode_caption, parse_corpus, CaptionCorpus, CorpusFormat, TokenizedCaption, Vocabulary, EOS, UNK,
};
use infoloss::importance::build_importance_table;
use infoloss::metrics::{bleu4, cider};
use infoloss::ndcore::Tensor;
use infoloss::objective::loss_report;
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn load(corpus_tsv: &str, min_count: usize) -> Result<(CaptionCorpus, Vocabulary)> {
    let corpus = parse_corpus(corpus_tsv, CorpusFormat::Tsv).map_err(|e| e.to_string())?;
    let vocab = build_vocabulary(&corpus, min_count);
    Ok((corpus, vocab))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct ImportanceRow {
    pub word: String,
    pub relevance: f64,
    pub info: f64,
    pub importance: f64,
}

#[derive(Debug, Serialize)]
pub struct VideoImportance {
    pub video: String,
    pub captions: usize,
    /// Words occurring in the video, highest importance first.
    pub words: Vec<ImportanceRow>,
}

pub fn importance_json(corpus_tsv: &str, gamma: f64, min_count: usize) -> Result<String> {
    let (corpus, vocab) = load(corpus_tsv, min_count)?;
    let table = build_importance_table(&corpus, &vocab, gamma).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(corpus.len());
    for v in corpus.videos() {
        let mut words: Vec<ImportanceRow> = (UNK..vocab.len())
            .filter(|&w| table.captions_containing(&v.video_id, w) > 0)
            .map(|w| ImportanceRow {
                word: vocab.token(w).unwrap_or_default().to_string(),
                relevance: table.relevance(&v.video_id, w),
                info: table.info_content(w).unwrap_or(0.0),
                importance: table.importance(w, &v.video_id),
            })
            .collect();
        words.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.word.cmp(&b.word)));
        out.push(VideoImportance {
            video: v.video_id.clone(),
            captions: v.caption_count(),
            words,
        });
    }
    to_json(&out)
}

#[derive(Debug, Serialize)]
pub struct TokenLoss {
    pub token: String,
    pub nll: f64,
    pub importance: f64,
    pub weight: f64,
    pub weighted: f64,
}

#[derive(Debug, Serialize)]
pub struct LossBreakdown {
    pub tokens: Vec<TokenLoss>,
    pub cross_entropy: f64,
    pub information_loss: f64,
}

/// Unigram log-frequencies (add-one) over the encoded training targets, EOS
/// included. Stands in for a trained model's logits at every position.
fn unigram_logits(corpus: &CaptionCorpus, vocab: &Vocabulary) -> Vec<f64> {
    let mut counts = vec![1.0; vocab.len()];
    for c in corpus.captions() {
        for &y in &encode_caption(c, vocab)[1..] {
            counts[y] += 1.0;
        }
    }
    counts.iter().map(|c: &f64| c.ln()).collect()
}

/// Per-token loss of `caption` for `video` under a unigram baseline model.
pub fn loss_json(corpus_tsv: &str, video: &str, caption: &str, gamma: f64, lambda: f64) -> Result<String> {
    let (corpus, vocab) = load(corpus_tsv, 1)?;
    let table = build_importance_table(&corpus, &vocab, gamma).map_err(|e| e.to_string())?;
    if !table.has_video(video) {
        return Err(format!("unknown video '{video}'"));
    }
    let targets = encode_caption(&TokenizedCaption::parse(caption), &vocab)[1..].to_vec();
    let row = unigram_logits(&corpus, &vocab);
    let logits = Tensor::new(&[targets.len(), vocab.len()], row.repeat(targets.len())).map_err(|e| e.to_string())?;
    let report = loss_report(&logits, &targets, video, &table, lambda).map_err(|e| e.to_string())?;
    let tokens: Vec<TokenLoss> = report
        .iter()
        .map(|p| TokenLoss {
            token: if p.token == EOS { "<eos>".into() } else { vocab.token(p.token).unwrap_or_default().to_string() },
            nll: p.nll,
            importance: p.importance,
            weight: p.weight,
            weighted: p.weighted,
        })
        .collect();
    to_json(&LossBreakdown {
        cross_entropy: tokens.iter().map(|t| t.nll).sum(),
        information_loss: tokens.iter().map(|t| t.weighted).sum(),
        tokens,
    })
}

#[derive(Debug, Serialize)]
pub struct CaptionScore {
    pub bleu4: f64,
    pub cider: f64,
}

/// BLEU-4 against the video's references and CIDEr with document
/// frequencies over the whole corpus.
pub fn score_json(corpus_tsv: &str, video: &str, candidate: &str) -> Result<String> {
    let corpus = parse_corpus(corpus_tsv, CorpusFormat::Tsv).map_err(|e| e.to_string())?;
    let refs = &corpus.video(video).ok_or_else(|| format!("unknown video '{video}'"))?.captions;
    let cand = TokenizedCaption::parse(candidate);
    let references: BTreeMap<String, Vec<TokenizedCaption>> = corpus
        .videos()
        .iter()
        .map(|v| (v.video_id.clone(), v.captions.clone()))
        .collect();
    let scores = cider(&BTreeMap::from([(video.to_string(), cand.clone())]), &references).map_err(|e| e.to_string())?;
    to_json(&CaptionScore {
        bleu4: bleu4(&cand, refs),
        cider: scores.corpus,
    })
}

#[wasm_bindgen]
pub fn importance(corpus_tsv: &str, gamma: f64, min_count: usize) -> std::result::Result<String, JsError> {
    importance_json(corpus_tsv, gamma, min_count).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn token_losses(
    corpus_tsv: &str,
    video: &str,
    caption: &str,
    gamma: f64,
    lambda: f64,
) -> std::result::Result<String, JsError> {
    loss_json(corpus_tsv, video, caption, gamma, lambda).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn score_caption(corpus_tsv: &str, video: &str, candidate: &str) -> std::result::Result<String, JsError> {
    score_json(corpus_tsv, video, candidate).map_err(|e| JsError::new(&e))
}
