//! BLEU-4 and CIDEr.
//!
//! BLEU uses clipped n-gram precision for n = 1..4 with uniform weights and
//! the closest-reference brevity penalty (ties go to the shorter reference).
//! An order with matches = 0 but some candidate n-grams gets precision
//! `1 / (2·candidate_ngrams)`. Orders for which the candidate has no n-grams
//! at all (candidates shorter than n) are left out of the geometric mean.
//!
//! CIDEr is the base variant without the length penalty: per order, TF-IDF
//! vectors with `idf = ln(|videos| / df)` where `df` counts the videos whose
//! references contain the n-gram; the order score is the mean over references
//! of `10·cos`; the final score is the mean over the four orders.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenizedCaption;

pub const MAX_ORDER: usize = 4;
pub const CIDER_VARIANT: &str = "CIDEr (no length penalty), 10 x cosine, idf = ln(videos/df)";
pub const BLEU_VARIANT: &str = "BLEU-4, closest-ref brevity penalty, zero-match precision 1/(2*ngrams)";

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("candidate for unknown video {0:?}")]
    UnknownVideo(String),
    #[error("video {0:?} has no references")]
    NoReferences(String),
}

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Ngram<'_>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Sufficient statistics for BLEU; sums over sentences give corpus BLEU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn sentence(candidate: &TokenizedCaption, references: &[TokenizedCaption]) -> Self {
        let cand = candidate.tokens();
        let mut stats = Self {
            candidate_len: cand.len(),
            reference_len: closest_reference_len(cand.len(), references),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<Ngram<'_>, usize> = HashMap::new();
            for r in references {
                for (g, c) in ngram_counts(r.tokens(), n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            stats.totals[n - 1] = counts.values().sum();
            stats.matches[n - 1] = counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn accumulate(&mut self, other: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..MAX_ORDER {
            let total = self.totals[n];
            if total == 0 {
                continue;
            }
            let p = if self.matches[n] == 0 {
                1.0 / (2.0 * total as f64)
            } else {
                self.matches[n] as f64 / total as f64
            };
            log_sum += p.ln();
            orders += 1;
        }
        let c = self.candidate_len as f64;
        let r = self.reference_len as f64;
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * (log_sum / orders as f64).exp()
    }
}

fn closest_reference_len(candidate_len: usize, references: &[TokenizedCaption]) -> usize {
    references
        .iter()
        .map(TokenizedCaption::len)
        .min_by_key(|&r| (r.abs_diff(candidate_len), r))
        .unwrap_or(0)
}

/// Sentence-level BLEU-4. An empty candidate scores 0.
pub fn bleu4(candidate: &TokenizedCaption, references: &[TokenizedCaption]) -> f64 {
    BleuStats::sentence(candidate, references).score()
}

/// Corpus BLEU-4 from pooled statistics.
pub fn corpus_bleu4<'a>(
    pairs: impl IntoIterator<Item = (&'a TokenizedCaption, &'a [TokenizedCaption])>,
) -> f64 {
    let mut total = BleuStats::default();
    for (c, refs) in pairs {
        total.accumulate(&BleuStats::sentence(c, refs));
    }
    total.score()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    pub corpus: f64,
    pub per_video: BTreeMap<String, f64>,
}

type SparseVec<'a> = HashMap<Ngram<'a>, f64>;

/// Corpus and per-video CIDEr. Document frequencies are taken over the full
/// reference map.
pub fn cider(
    candidates: &BTreeMap<String, TokenizedCaption>,
    references: &BTreeMap<String, Vec<TokenizedCaption>>,
) -> Result<CiderScores, MetricError> {
    for id in candidates.keys() {
        match references.get(id) {
            None => return Err(MetricError::UnknownVideo(id.clone())),
            Some(r) if r.is_empty() => return Err(MetricError::NoReferences(id.clone())),
            _ => {}
        }
    }
    let videos = references.len() as f64;
    let mut df: Vec<HashMap<Ngram<'_>, usize>> = vec![HashMap::new(); MAX_ORDER];
    for refs in references.values() {
        for n in 1..=MAX_ORDER {
            let seen: HashSet<Ngram<'_>> = refs
                .iter()
                .flat_map(|r| ngram_counts(r.tokens(), n).into_keys())
                .collect();
            for g in seen {
                *df[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }
    let idf = |n: usize, g: Ngram<'_>| -> f64 {
        let d = df[n - 1].get(g).copied().unwrap_or(0).max(1);
        (videos / d as f64).ln()
    };
    let mut per_video = BTreeMap::new();
    for (id, cand) in candidates {
        let refs = &references[id];
        let mut score = 0.0;
        for n in 1..=MAX_ORDER {
            let cv = tfidf(cand.tokens(), n, &idf);
            let order: f64 = refs
                .iter()
                .map(|r| 10.0 * cosine(&cv, &tfidf(r.tokens(), n, &idf)))
                .sum::<f64>()
                / refs.len() as f64;
            score += order;
        }
        per_video.insert(id.clone(), score / MAX_ORDER as f64);
    }
    let corpus = if per_video.is_empty() {
        0.0
    } else {
        per_video.values().sum::<f64>() / per_video.len() as f64
    };
    Ok(CiderScores { corpus, per_video })
}

fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &dyn Fn(usize, Ngram<'_>) -> f64) -> SparseVec<'a> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| (g, c as f64 / total as f64 * idf(n, g)))
        .collect()
}

fn cosine(a: &SparseVec<'_>, b: &SparseVec<'_>) -> f64 {
    let norm = |v: &SparseVec<'_>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // Sum in a fixed order so results do not depend on hash iteration order.
    let mut terms: Vec<(Ngram<'_>, f64)> = a
        .iter()
        .filter_map(|(g, x)| b.get(g).map(|y| (*g, x * y)))
        .collect();
    terms.sort_by(|p, q| p.0.cmp(q.0));
    terms.iter().map(|t| t.1).sum::<f64>() / (na * nb)
}
