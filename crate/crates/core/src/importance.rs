//! Per-word importance statistics.
//!
//! For a word `y` and a video `V`:
//!
//! * relevance `R(y|V)` is the fraction of `V`'s captions that contain `y`
//!   (presence, not multiplicity);
//! * information content `I(y) = ln(|videos| / |videos containing y|)`;
//! * importance `f(y, V) = R(y|V)^γ · I(y)`, with `0^0 = 1`.
//!
//! All counts are taken over vocabulary-encoded captions, so out-of-vocabulary
//! words are counted as `UNK`. BOS, EOS and PAD are never counted and always
//! have importance 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{encode_caption, CaptionCorpus, VideoEntry, Vocabulary, BOS, EOS, PAD};

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("undefined information content: word {0:?} appears in no video")]
    Undefined(String),
    #[error("gamma must be a non-negative finite number, got {0}")]
    InvalidGamma(f64),
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn counted(word: usize) -> bool {
    word != BOS && word != EOS && word != PAD
}

fn encoded_words(caption: &crate::corpus::TokenizedCaption, vocab: &Vocabulary) -> BTreeSet<usize> {
    encode_caption(caption, vocab)
        .into_iter()
        .filter(|&w| counted(w))
        .collect()
}

/// `R(y|V)`: share of the video's captions containing `word` at least once.
pub fn relevance(word: usize, video: &VideoEntry, vocab: &Vocabulary) -> f64 {
    if video.captions.is_empty() {
        return 0.0;
    }
    let containing = video
        .captions
        .iter()
        .filter(|c| encoded_words(c, vocab).contains(&word))
        .count();
    containing as f64 / video.captions.len() as f64
}

/// `I(y)` over the videos of `corpus`.
pub fn information_content(
    word: usize,
    corpus: &CaptionCorpus,
    vocab: &Vocabulary,
) -> Result<f64, ImportanceError> {
    let present = corpus
        .videos()
        .iter()
        .filter(|v| v.captions.iter().any(|c| encoded_words(c, vocab).contains(&word)))
        .count();
    if present == 0 || !counted(word) {
        return Err(ImportanceError::Undefined(
            vocab.token(word).unwrap_or("?").to_string(),
        ));
    }
    Ok(info_from_counts(corpus.len(), present))
}

fn info_from_counts(videos: usize, present: usize) -> f64 {
    (videos as f64 / present as f64).ln()
}

/// `R^γ · I` with the `0^0 = 1` convention.
pub fn combine(relevance: f64, info: f64, gamma: f64) -> f64 {
    let weight = if gamma == 0.0 { 1.0 } else { relevance.powf(gamma) };
    weight * info
}

/// Corpus statistics backing the importance weights. Integer counts are
/// stored; real values are derived on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceTable {
    gamma: f64,
    vocab_hash: String,
    tokens: Vec<String>,
    video_count: usize,
    /// `|{V_y}|` per vocabulary index.
    video_presence: Vec<usize>,
    /// `N_V` per video.
    caption_counts: BTreeMap<String, usize>,
    /// `N_{y,V}` for pairs with a nonzero count.
    containing: BTreeMap<(String, usize), usize>,
}

pub fn build_importance_table(
    corpus: &CaptionCorpus,
    vocab: &Vocabulary,
    gamma: f64,
) -> Result<ImportanceTable, ImportanceError> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(ImportanceError::InvalidGamma(gamma));
    }
    let mut video_presence = vec![0usize; vocab.len()];
    let mut caption_counts = BTreeMap::new();
    let mut containing = BTreeMap::new();
    for video in corpus.videos() {
        let mut per_word: BTreeMap<usize, usize> = BTreeMap::new();
        for caption in &video.captions {
            for w in encoded_words(caption, vocab) {
                *per_word.entry(w).or_insert(0) += 1;
            }
        }
        for (&w, &n) in &per_word {
            video_presence[w] += 1;
            containing.insert((video.video_id.clone(), w), n);
        }
        caption_counts.insert(video.video_id.clone(), video.captions.len());
    }
    Ok(ImportanceTable {
        gamma,
        vocab_hash: vocab.hash(),
        tokens: vocab.tokens().to_vec(),
        video_count: corpus.len(),
        video_presence,
        caption_counts,
        containing,
    })
}

impl ImportanceTable {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn video_count(&self) -> usize {
        self.video_count
    }

    pub fn has_video(&self, video_id: &str) -> bool {
        self.caption_counts.contains_key(video_id)
    }

    pub fn videos_containing(&self, word: usize) -> usize {
        self.video_presence.get(word).copied().unwrap_or(0)
    }

    pub fn caption_count(&self, video_id: &str) -> Option<usize> {
        self.caption_counts.get(video_id).copied()
    }

    pub fn captions_containing(&self, video_id: &str, word: usize) -> usize {
        self.containing
            .get(&(video_id.to_string(), word))
            .copied()
            .unwrap_or(0)
    }

    /// `I(y)`, or `None` for specials and words absent from every video.
    pub fn info_content(&self, word: usize) -> Option<f64> {
        let present = self.videos_containing(word);
        (counted(word) && present > 0).then(|| info_from_counts(self.video_count, present))
    }

    /// `R(y|V)`; absent entries and unknown videos give 0.
    pub fn relevance(&self, video_id: &str, word: usize) -> f64 {
        match self.caption_count(video_id) {
            Some(n) if n > 0 => self.captions_containing(video_id, word) as f64 / n as f64,
            _ => 0.0,
        }
    }

    /// `f(y, V)` using the table's γ.
    pub fn importance(&self, word: usize, video_id: &str) -> f64 {
        self.importance_with_gamma(word, video_id, self.gamma)
    }

    /// `f(y, V)` for an arbitrary γ. Specials and words with undefined `I`
    /// get 0.
    pub fn importance_with_gamma(&self, word: usize, video_id: &str, gamma: f64) -> f64 {
        match self.info_content(word) {
            Some(info) => combine(self.relevance(video_id, word), info, gamma),
            None => 0.0,
        }
    }

    /// Sparse relevance entries `(video, word, R)` in deterministic order.
    pub fn relevance_entries(&self) -> impl Iterator<Item = (&str, usize, f64)> + '_ {
        self.containing
            .keys()
            .map(move |(v, w)| (v.as_str(), *w, self.relevance(v, *w)))
    }

    pub fn export(&self) -> TableExport {
        TableExport {
            gamma: self.gamma,
            vocab_hash: self.vocab_hash.clone(),
            video_count: self.video_count,
            info_content: self
                .tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), self.info_content(i)))
                .collect(),
            relevance: self
                .containing
                .iter()
                .map(|((v, w), &n)| RelevanceExport {
                    video_id: v.clone(),
                    token: self.tokens[*w].clone(),
                    captions_containing: n,
                    captions: self.caption_counts[v],
                    relevance: self.relevance(v, *w),
                    importance: self.importance(*w, v),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ImportanceError> {
        let text = serde_json::to_string_pretty(&self.export()).expect("table serializes");
        fs::write(path, text).map_err(|source| ImportanceError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Inspection form of an [`ImportanceTable`].
#[derive(Debug, Serialize)]
pub struct TableExport {
    pub gamma: f64,
    pub vocab_hash: String,
    pub video_count: usize,
    /// Token → `I(y)`; `null` where undefined.
    pub info_content: BTreeMap<String, Option<f64>>,
    pub relevance: Vec<RelevanceExport>,
}

#[derive(Debug, Serialize)]
pub struct RelevanceExport {
    pub video_id: String,
    pub token: String,
    pub captions_containing: usize,
    pub captions: usize,
    pub relevance: f64,
    pub importance: f64,
}
