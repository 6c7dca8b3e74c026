//! Three-stream video features: object regions (`VR`, `n×k×D1`), frame
//! vectors (`VF`, `n×D2`) and clip vectors (`VC`, `n×D3`).
//!
//! Features come either from files in the [`crate::ndcore::io`] archive
//! format (one file per video, entries `VR`, `VF`, `VC`) or from
//! [`synthesize_features`], which plants word-specific directions so that
//! captions are recoverable from the features.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CaptionCorpus;
use crate::hashing::derive_seed;
use crate::ndcore::{io, Tensor, TensorError};

pub const FEATURE_EXTENSION: &str = "ndt";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{video}: stream {stream} has shape {actual:?}, expected {expected}")]
    Shape {
        video: String,
        stream: &'static str,
        actual: Vec<usize>,
        expected: String,
    },
    #[error("{video}: missing stream {stream}")]
    MissingStream { video: String, stream: &'static str },
    #[error("{video}: stream {stream} contains non-finite values")]
    NonFinite { video: String, stream: &'static str },
    #[error("{video}: streams disagree on frame count")]
    FrameCount { video: String },
    #[error("no features for video {0:?}")]
    MissingVideo(String),
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: TensorError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_frames: usize,
    pub k_objects: usize,
    pub d_object: usize,
    pub d_frame: usize,
    pub d_clip: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl FeatureConfig {
    pub fn desk() -> Self {
        Self {
            n_frames: 8,
            k_objects: 4,
            d_object: 32,
            d_frame: 32,
            d_clip: 32,
        }
    }

    /// 40 sampled frames, 16 objects, ResNet/Faster R-CNN 2048-d and C3D 4096-d.
    pub fn paper() -> Self {
        Self {
            n_frames: 40,
            k_objects: 16,
            d_object: 2048,
            d_frame: 2048,
            d_clip: 4096,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let dims = [
            ("n_frames", self.n_frames),
            ("k_objects", self.k_objects),
            ("d_object", self.d_object),
            ("d_frame", self.d_frame),
            ("d_clip", self.d_clip),
        ];
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(FeatureError::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub video_id: String,
    /// `n×k×D1`
    pub object_feats: Tensor,
    /// `n×D2`
    pub frame_feats: Tensor,
    /// `n×D3`
    pub clip_feats: Tensor,
}

impl VideoFeatures {
    pub fn new(
        video_id: impl Into<String>,
        object_feats: Tensor,
        frame_feats: Tensor,
        clip_feats: Tensor,
    ) -> Result<Self, FeatureError> {
        let video = video_id.into();
        for (stream, t, rank) in [
            ("VR", &object_feats, 3),
            ("VF", &frame_feats, 2),
            ("VC", &clip_feats, 2),
        ] {
            if t.rank() != rank {
                return Err(FeatureError::Shape {
                    video,
                    stream,
                    actual: t.shape().to_vec(),
                    expected: format!("rank {rank}"),
                });
            }
            if !t.is_finite() {
                return Err(FeatureError::NonFinite { video, stream });
            }
        }
        let n = object_feats.shape()[0];
        if frame_feats.shape()[0] != n || clip_feats.shape()[0] != n {
            return Err(FeatureError::FrameCount { video });
        }
        Ok(Self {
            video_id: video,
            object_feats,
            frame_feats,
            clip_feats,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.object_feats.shape()[0]
    }

    pub fn k_objects(&self) -> usize {
        self.object_feats.shape()[1]
    }

    /// Regions of frame `i` as a `k×D1` matrix.
    pub fn regions(&self, i: usize) -> Tensor {
        self.object_feats.slab(i)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        io::save_archive(
            path,
            &[
                ("VR", &self.object_feats),
                ("VF", &self.frame_feats),
                ("VC", &self.clip_feats),
            ],
        )
        .map_err(|source| FeatureError::File {
            path: path.display().to_string(),
            source,
        })
    }

    /// Appends all-zero frames up to `n` frames.
    pub fn pad_to(self, n: usize) -> Self {
        let current = self.n_frames();
        if current >= n {
            return self;
        }
        Self {
            object_feats: pad_leading(self.object_feats, n),
            frame_feats: pad_leading(self.frame_feats, n),
            clip_feats: pad_leading(self.clip_feats, n),
            video_id: self.video_id,
        }
    }
}

fn pad_leading(t: Tensor, n: usize) -> Tensor {
    let mut shape = t.shape().to_vec();
    let inner: usize = shape[1..].iter().product();
    shape[0] = n;
    let mut data = t.into_data();
    data.resize(n * inner, 0.0);
    Tensor::new(&shape, data).expect("padded shape is consistent")
}

pub fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.{FEATURE_EXTENSION}"))
}

/// Loads one feature file. The video id is the file stem. Videos shorter
/// than `config.n_frames` are zero-padded on the frame axis.
pub fn load_features(path: &Path, config: &FeatureConfig) -> Result<VideoFeatures, FeatureError> {
    let video = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let entries = io::load_archive(path).map_err(|source| FeatureError::File {
        path: path.display().to_string(),
        source,
    })?;
    let take = |stream: &'static str| {
        entries
            .iter()
            .find(|(name, _)| name == stream)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| FeatureError::MissingStream {
                video: video.clone(),
                stream,
            })
    };
    let (vr, vf, vc) = (take("VR")?, take("VF")?, take("VC")?);

    for (stream, t) in [("VR", &vr), ("VF", &vf), ("VC", &vc)] {
        if !t.is_finite() {
            return Err(FeatureError::NonFinite { video, stream });
        }
    }
    let n = vr.shape()[0];
    let checks: [(&'static str, &Tensor, Vec<usize>); 3] = [
        ("VR", &vr, vec![n, config.k_objects, config.d_object]),
        ("VF", &vf, vec![n, config.d_frame]),
        ("VC", &vc, vec![n, config.d_clip]),
    ];
    for (stream, t, expected) in checks {
        if t.shape() != expected.as_slice() || n > config.n_frames {
            return Err(FeatureError::Shape {
                video,
                stream,
                actual: t.shape().to_vec(),
                expected: format!("{expected:?} with at most {} frames", config.n_frames),
            });
        }
    }
    Ok(VideoFeatures::new(video, vr, vf, vc)?.pad_to(config.n_frames))
}

/// Loads `<dir>/<video_id>.ndt` for every requested video.
pub fn load_feature_dir<'a>(
    dir: &Path,
    config: &FeatureConfig,
    video_ids: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeMap<String, VideoFeatures>, FeatureError> {
    let mut out = BTreeMap::new();
    for id in video_ids {
        let path = feature_path(dir, id);
        if !path.exists() {
            return Err(FeatureError::MissingVideo(id.to_string()));
        }
        out.insert(id.to_string(), load_features(&path, config)?);
    }
    Ok(out)
}

pub fn save_feature_dir<'a>(
    dir: &Path,
    features: impl IntoIterator<Item = &'a VideoFeatures>,
) -> Result<(), FeatureError> {
    for f in features {
        f.save(&feature_path(dir, &f.video_id))?;
    }
    Ok(())
}

const NOISE: f64 = 0.1;

fn word_direction(seed: u64, stream: &str, word: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["direction", stream, word]));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Synthetic features with planted word directions.
///
/// Every distinct word of a video's captions owns a fixed random direction per
/// stream (a function of the word and `seed` only). Object regions each carry
/// one of the video's words, frame and clip vectors carry a randomly gained
/// mix of all of them; every direction is scaled by the word's relevance in
/// the video and Gaussian noise is added on top.
pub fn synthesize_features(
    corpus: &CaptionCorpus,
    config: &FeatureConfig,
    seed: u64,
) -> Result<BTreeMap<String, VideoFeatures>, FeatureError> {
    config.validate()?;
    let FeatureConfig {
        n_frames: n,
        k_objects: k,
        d_object,
        d_frame,
        d_clip,
    } = *config;
    let mut out = BTreeMap::new();
    for video in corpus.videos() {
        let words: BTreeSet<&str> = video
            .captions
            .iter()
            .flat_map(|c| c.tokens().iter().map(String::as_str))
            .collect();
        let words: Vec<(&str, f64)> = words
            .into_iter()
            .map(|w| {
                let hits = video
                    .captions
                    .iter()
                    .filter(|c| c.tokens().iter().any(|t| t == w))
                    .count();
                (w, hits as f64 / video.captions.len() as f64)
            })
            .collect();
        let dirs: Vec<[Vec<f64>; 3]> = words
            .iter()
            .map(|(w, _)| {
                [
                    word_direction(seed, "VR", w, d_object),
                    word_direction(seed, "VF", w, d_frame),
                    word_direction(seed, "VC", w, d_clip),
                ]
            })
            .collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &["video", video.video_id.as_str()]));
        let mut noise = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    NOISE * x
                })
                .collect()
        };
        let m = words.len();
        let mix_scale = 1.0 / (m as f64).sqrt();

        let mut vr = noise(n * k * d_object);
        for i in 0..n {
            for j in 0..k {
                let w = (i * k + j) % m;
                let base = (i * k + j) * d_object;
                for (x, d) in vr[base..base + d_object].iter_mut().zip(&dirs[w][0]) {
                    *x += words[w].1 * d;
                }
            }
        }
        let stream_mix = |stream: usize, dim: usize, rng_noise: Vec<f64>| -> Vec<f64> {
            let mut data = rng_noise;
            for i in 0..n {
                for (w, (_, rel)) in words.iter().enumerate() {
                    let gain = 0.5 + ((i + w + stream) % 3) as f64 * 0.25;
                    for (x, d) in data[i * dim..(i + 1) * dim].iter_mut().zip(&dirs[w][stream]) {
                        *x += gain * rel * mix_scale * d;
                    }
                }
            }
            data
        };
        let vf_noise = noise(n * d_frame);
        let vc_noise = noise(n * d_clip);
        let vf = stream_mix(1, d_frame, vf_noise);
        let vc = stream_mix(2, d_clip, vc_noise);

        let features = VideoFeatures::new(
            video.video_id.clone(),
            Tensor::new(&[n, k, d_object], vr).expect("shape"),
            Tensor::new(&[n, d_frame], vf).expect("shape"),
            Tensor::new(&[n, d_clip], vc).expect("shape"),
        )?;
        out.insert(video.video_id.clone(), features);
    }
    Ok(out)
}
