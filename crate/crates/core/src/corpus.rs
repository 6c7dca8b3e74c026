//! Caption corpora, tokenization and vocabulary construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::hex_digest;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate video id {0:?}")]
    DuplicateVideo(String),
    #[error("video {0:?} has no captions")]
    NoCaptions(String),
    #[error("video {video:?}: caption {index} has no tokens")]
    EmptyCaption { video: String, index: usize },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// `video_id<TAB>caption text`, one caption per line.
    #[default]
    Tsv,
    /// A JSON array of `{"id": ..., "captions": [...]}` records.
    Json,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedCaption(Vec<String>);

impl TokenizedCaption {
    /// Wraps pre-tokenized words. Empty tokens are dropped.
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn parse(raw: &str) -> Self {
        Self(tokenize(raw))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TokenizedCaption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoEntry {
    pub video_id: String,
    pub captions: Vec<TokenizedCaption>,
}

impl VideoEntry {
    pub fn caption_count(&self) -> usize {
        self.captions.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionCorpus {
    videos: Vec<VideoEntry>,
    split: SplitTag,
}

impl CaptionCorpus {
    /// Validates unique ids and non-empty captions.
    pub fn new(videos: Vec<VideoEntry>, split: SplitTag) -> Result<Self, CorpusError> {
        if videos.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashSet::new();
        for v in &videos {
            if !seen.insert(v.video_id.as_str()) {
                return Err(CorpusError::DuplicateVideo(v.video_id.clone()));
            }
            if v.captions.is_empty() {
                return Err(CorpusError::NoCaptions(v.video_id.clone()));
            }
            if let Some(index) = v.captions.iter().position(|c| c.is_empty()) {
                return Err(CorpusError::EmptyCaption {
                    video: v.video_id.clone(),
                    index,
                });
            }
        }
        Ok(Self { videos, split })
    }

    pub fn videos(&self) -> &[VideoEntry] {
        &self.videos
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub fn video(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.captions().map(TokenizedCaption::len).sum()
    }

    pub fn captions(&self) -> impl Iterator<Item = &TokenizedCaption> {
        self.videos.iter().flat_map(|v| v.captions.iter())
    }

    /// Token frequencies over every caption.
    pub fn token_counts(&self) -> HashMap<&str, usize> {
        let mut counts = HashMap::new();
        for tok in self.captions().flat_map(|c| c.tokens()) {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Content fingerprint used to tie vocabularies to the corpus they came from.
    pub fn fingerprint(&self) -> String {
        let mut text = String::new();
        for v in &self.videos {
            for c in &v.captions {
                text.push_str(&v.video_id);
                text.push('\t');
                text.push_str(&c.to_string());
                text.push('\n');
            }
        }
        hex_digest(text.as_bytes())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for v in &self.videos {
            for c in &v.captions {
                out.push_str(&format!("{}\t{}\n", v.video_id, c));
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: String,
    captions: Vec<String>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<CaptionCorpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, format)
}

/// Parses corpus text; video order follows first appearance in the input.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<CaptionCorpus, CorpusError> {
    let videos = match format {
        CorpusFormat::Tsv => parse_tsv(text)?,
        CorpusFormat::Json => parse_json(text)?,
    };
    CaptionCorpus::new(videos, SplitTag::Train)
}

fn parse_tsv(text: &str) -> Result<Vec<VideoEntry>, CorpusError> {
    let mut videos: Vec<VideoEntry> = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, caption) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line: line_no,
            message: "expected `video_id<TAB>caption`".into(),
        })?;
        let id = id.trim();
        if id.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty video id".into(),
            });
        }
        let caption = TokenizedCaption::parse(caption);
        if caption.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("caption for {id:?} has no tokens"),
            });
        }
        let slot = *position.entry(id.to_string()).or_insert_with(|| {
            videos.push(VideoEntry {
                video_id: id.to_string(),
                captions: Vec::new(),
            });
            videos.len() - 1
        });
        videos[slot].captions.push(caption);
    }
    Ok(videos)
}

fn parse_json(text: &str) -> Result<Vec<VideoEntry>, CorpusError> {
    let records: Vec<JsonRecord> = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(records
        .into_iter()
        .map(|r| VideoEntry {
            video_id: r.id,
            captions: r.captions.iter().map(|c| TokenizedCaption::parse(c)).collect(),
        })
        .collect())
}

/// Lowercases, turns ASCII punctuation into separators and splits on whitespace.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
    corpus_hash: String,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    min_count: usize,
    corpus_hash: String,
    hash: String,
    tokens: Vec<String>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = CorpusError;

    fn try_from(file: VocabularyFile) -> Result<Self, CorpusError> {
        let vocab = Vocabulary::from_tokens(file.tokens, file.min_count, file.corpus_hash)?;
        if vocab.hash() != file.hash {
            return Err(CorpusError::Vocabulary(format!(
                "stored hash {} does not match token list ({})",
                file.hash,
                vocab.hash()
            )));
        }
        Ok(vocab)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        let hash = v.hash();
        VocabularyFile {
            min_count: v.min_count,
            corpus_hash: v.corpus_hash,
            hash,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// `tokens` must start with the four special tokens.
    pub fn from_tokens(
        tokens: Vec<String>,
        min_count: usize,
        corpus_hash: String,
    ) -> Result<Self, CorpusError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS.map(String::from)
        {
            return Err(CorpusError::Vocabulary(
                "token list must begin with the special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            min_count,
            corpus_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    pub fn is_special(index: usize) -> bool {
        index < SPECIAL_TOKENS.len()
    }

    /// Digest of the ordered token list.
    pub fn hash(&self) -> String {
        hex_digest(self.tokens.join("\n").as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let text = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        fs::write(path, text).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Maps indices back to words, dropping BOS/EOS/PAD.
    pub fn decode(&self, indices: &[usize]) -> TokenizedCaption {
        TokenizedCaption::new(
            indices
                .iter()
                .filter(|&&i| i != BOS && i != EOS && i != PAD)
                .filter_map(|&i| self.token(i)),
        )
    }
}

/// Keeps tokens seen at least `min_count` times, ordered by descending
/// frequency then lexicographically, after the four specials.
pub fn build_vocabulary(corpus: &CaptionCorpus, min_count: usize) -> Vocabulary {
    let counts = corpus.token_counts();
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && !SPECIAL_TOKENS.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens, min_count, corpus.fingerprint())
        .expect("specials never collide with tokenized words")
}

/// `[BOS] + words (unknown → UNK) + [EOS]`.
pub fn encode_caption(caption: &TokenizedCaption, vocab: &Vocabulary) -> Vec<usize> {
    let mut out = Vec::with_capacity(caption.len() + 2);
    out.push(BOS);
    out.extend(caption.tokens().iter().map(|t| vocab.index_of(t).unwrap_or(UNK)));
    out.push(EOS);
    out
}

/// Token share held by the most frequent words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub top_fraction: f64,
    pub distinct_words: usize,
    pub top_words: usize,
    pub total_tokens: usize,
    pub top_tokens: usize,
    pub share: f64,
    /// `(word, token count, number of videos containing it)`, most frequent first.
    pub words: Vec<(String, usize, usize)>,
}

/// Counts over UNK-substituted tokens, so every token is attributed to some
/// vocabulary entry and `top_fraction = 1` gives a share of exactly 1.
pub fn corpus_bias_report(corpus: &CaptionCorpus, vocab: &Vocabulary, top_fraction: f64) -> BiasReport {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut videos: BTreeMap<usize, usize> = BTreeMap::new();
    for v in corpus.videos() {
        let mut present = HashSet::new();
        for c in &v.captions {
            for tok in c.tokens() {
                let idx = vocab.index_of(tok).unwrap_or(UNK);
                *counts.entry(idx).or_insert(0) += 1;
                present.insert(idx);
            }
        }
        for idx in present {
            *videos.entry(idx).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| vocab.tokens()[a.0].cmp(&vocab.tokens()[b.0]))
    });
    let total: usize = ranked.iter().map(|r| r.1).sum();
    let distinct = ranked.len();
    let top_words = ((top_fraction * distinct as f64).ceil() as usize).clamp(1, distinct.max(1));
    let top_tokens: usize = ranked.iter().take(top_words).map(|r| r.1).sum();
    BiasReport {
        top_fraction,
        distinct_words: distinct,
        top_words,
        total_tokens: total,
        top_tokens,
        share: if total == 0 {
            0.0
        } else {
            top_tokens as f64 / total as f64
        },
        words: ranked
            .into_iter()
            .map(|(idx, c)| (vocab.tokens()[idx].clone(), c, videos[&idx]))
            .collect(),
    }
}
