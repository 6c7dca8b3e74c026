//! Synthetic caption corpora.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionCorpus, CorpusError, SplitTag, TokenizedCaption, VideoEntry};
use crate::hashing::derive_seed;

const SUBJECTS: [&str; 8] = ["man", "woman", "dog", "cat", "child", "bird", "chef", "horse"];
const VERBS: [&str; 6] = ["riding", "eating", "holding", "chasing", "washing", "painting"];
const OBJECTS: [&str; 7] = ["ball", "car", "bike", "apple", "fence", "boat", "guitar"];
const ADVERBS: [&str; 4] = ["slowly", "outside", "happily", "again"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    pub videos: usize,
    pub captions: usize,
    /// Probability that a caption deviates from the video's base sentence.
    pub variation: f64,
    pub seed: u64,
}

fn video_id(i: usize) -> String {
    format!("vid{i:04}")
}

/// Each video gets a distinct (subject, verb, object) triple and captions of
/// the form `a <subject> is <verb> a <object>`. With probability `variation`
/// a caption drops the article before the object or appends an adverb.
pub fn templated_corpus(config: &TemplateConfig) -> Result<CaptionCorpus, CorpusError> {
    let combos = SUBJECTS.len() * VERBS.len() * OBJECTS.len();
    if config.videos == 0 || config.captions == 0 || config.videos > combos {
        return Err(CorpusError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["templated"]));
    let mut triples: Vec<usize> = (0..combos).collect();
    triples.shuffle(&mut rng);
    let videos = triples[..config.videos]
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            let s = SUBJECTS[code % SUBJECTS.len()];
            let v = VERBS[(code / SUBJECTS.len()) % VERBS.len()];
            let o = OBJECTS[code / (SUBJECTS.len() * VERBS.len())];
            let captions = (0..config.captions)
                .map(|_| {
                    let mut words = vec!["a", s, "is", v, "a", o];
                    if rng.random::<f64>() < config.variation {
                        if rng.random::<bool>() {
                            words.remove(4);
                        } else {
                            words.push(ADVERBS[rng.random_range(0..ADVERBS.len())]);
                        }
                    }
                    TokenizedCaption::new(words)
                })
                .collect();
            VideoEntry {
                video_id: video_id(i),
                captions,
            }
        })
        .collect();
    CaptionCorpus::new(videos, SplitTag::Train)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub videos: usize,
    pub captions: usize,
    /// Fraction of a video's captions that mention its rare token.
    pub rare_rate: f64,
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            videos: 20,
            captions: 20,
            rare_rate: 0.45,
            seed: 0,
        }
    }
}

const FILLER_SUBJECTS: [&str; 3] = ["person", "man", "woman"];

/// Token that marks video `i` in [`biased_corpus`].
pub fn rare_token(i: usize) -> String {
    format!("rare{i:03}")
}

/// Captions `a <subject> is doing something` where, in `rare_rate` of a
/// video's captions, `doing` is replaced by that video's own rare token.
/// About nine in ten tokens are shared filler.
pub fn biased_corpus(config: &BiasConfig) -> Result<CaptionCorpus, CorpusError> {
    if config.videos == 0 || config.captions == 0 || !(0.0..=1.0).contains(&config.rare_rate) {
        return Err(CorpusError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["biased"]));
    let with_rare = (config.rare_rate * config.captions as f64).round() as usize;
    let videos = (0..config.videos)
        .map(|i| {
            let subject = FILLER_SUBJECTS[rng.random_range(0..FILLER_SUBJECTS.len())];
            let rare = rare_token(i);
            let mut flags: Vec<bool> = (0..config.captions).map(|c| c < with_rare).collect();
            flags.shuffle(&mut rng);
            let captions = flags
                .into_iter()
                .map(|r| {
                    let verb = if r { rare.as_str() } else { "doing" };
                    TokenizedCaption::new(["a", subject, "is", verb, "something"])
                })
                .collect();
            VideoEntry {
                video_id: video_id(i),
                captions,
            }
        })
        .collect();
    CaptionCorpus::new(videos, SplitTag::Train)
}
