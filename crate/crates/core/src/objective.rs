//! Caption-level training objectives.
//!
//! Both losses sum negative log-likelihoods over the predicted positions of
//! one caption. The information loss scales position `t` by
//! `1 + λ·f(y_t, V)`; the weights are constants, so no gradient reaches the
//! importance table. With `λ = 0` every weight is exactly `1.0` and the two
//! losses coincide bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::importance::ImportanceTable;
use crate::ndcore::{log_sum_exp, Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown video {0:?} in importance table")]
    UnknownVideo(String),
    #[error("information loss needs an importance table")]
    MissingTable,
    #[error("invalid loss config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    #[default]
    InformationLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::InformationLoss,
            lambda: 0.5,
            gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn cross_entropy() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ObjectiveError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `1 + λ·f(y_t, V)` for every target.
pub fn importance_weights(
    targets: &[usize],
    video_id: &str,
    table: &ImportanceTable,
    lambda: f64,
) -> Result<Vec<f64>, ObjectiveError> {
    if !table.has_video(video_id) {
        return Err(ObjectiveError::UnknownVideo(video_id.to_string()));
    }
    Ok(targets
        .iter()
        .map(|&y| 1.0 + lambda * table.importance(y, video_id))
        .collect())
}

/// `−Σ_t log softmax(logits_t)[y_t]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var, ObjectiveError> {
    let ones = vec![1.0; targets.len()];
    Ok(g.weighted_nll(logits, targets, &ones)?)
}

/// `−Σ_t (1 + λ f(y_t, V)) log softmax(logits_t)[y_t]`.
pub fn information_loss(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    video_id: &str,
    table: &ImportanceTable,
    lambda: f64,
) -> Result<Var, ObjectiveError> {
    let weights = importance_weights(targets, video_id, table, lambda)?;
    Ok(g.weighted_nll(logits, targets, &weights)?)
}

/// Dispatches on `config.kind`.
pub fn caption_loss(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    video_id: &str,
    config: &LossConfig,
    table: Option<&ImportanceTable>,
) -> Result<Var, ObjectiveError> {
    match config.kind {
        LossKind::CrossEntropy => cross_entropy(g, logits, targets),
        LossKind::InformationLoss => {
            let table = table.ok_or(ObjectiveError::MissingTable)?;
            information_loss(g, logits, targets, video_id, table, config.lambda)
        }
    }
}

/// Per-position breakdown of the information loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionLoss {
    pub token: usize,
    pub nll: f64,
    pub importance: f64,
    pub weight: f64,
    pub weighted: f64,
}

pub fn loss_report(
    logits: &Tensor,
    targets: &[usize],
    video_id: &str,
    table: &ImportanceTable,
    lambda: f64,
) -> Result<Vec<PositionLoss>, ObjectiveError> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let (rows, vocab) = logits.dims2()?;
    if rows != targets.len() {
        return Err(TensorError::InvalidArgument(format!(
            "{rows} logit rows for {} targets",
            targets.len()
        ))
        .into());
    }
    if let Some(&bad) = targets.iter().find(|&&y| y >= vocab) {
        return Err(TensorError::OutOfRange { index: bad, bound: vocab }.into());
    }
    let weights = importance_weights(targets, video_id, table, lambda)?;
    Ok(targets
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(t, (&y, weight))| {
            let row = logits.row(t);
            let nll = log_sum_exp(row) - row[y];
            PositionLoss {
                token: y,
                nll,
                importance: table.importance(y, video_id),
                weight,
                weighted: weight * nll,
            }
        })
        .collect())
}
