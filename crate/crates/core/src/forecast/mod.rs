//! Stream forecasters, the confidence-weighted loss, the entangled ablation
//! and the end-to-end pipeline.

mod data;
mod entangled;
mod global;
mod local;
mod pipeline;
mod train;

pub use data::{PreparedRecord, PreparedSet};
pub use entangled::{train_entangled, EntangledConfig, EntangledForecaster, EntangledNet, ENTANGLED_PREFIX};
pub use global::{
    frame_features, train_global, FrameEncoder, GlobalConfig, GlobalForecaster, GlobalNet, PoolingMode, ResidualMode,
    FRAME_FEATURES, GLOBAL_PREFIX,
};
pub use local::{train_local, LocalCodec, LocalConfig, LocalForecaster, LocalNet, CODEC_PREFIX, LOCAL_PREFIX};
pub use pipeline::{forecast_locomotion, GlobalPredictor, LocalPredictor, Pipeline};
pub use train::{fit, Schedule};

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::completion::CompletionError;
use crate::numerics::{Graph, NodeId, NumericsError, Tensor};
use crate::pose::{Pose, PoseError};
use crate::qrnn::QrnnError;
use crate::streams::StreamError;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("history has {got} frames, model expects {expected}")]
    HistoryLength { expected: usize, got: usize },
    #[error("record {index}: first transform is not the identity")]
    NonIdentityStart { index: usize },
    #[error("negative confidence {0}")]
    NegativeConfidence(f64),
    #[error("length mismatch: {0}")]
    Mismatch(String),
    #[error("no usable training records: {0}")]
    EmptyTrainingSet(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ForecastError>,
    },
    #[error(transparent)]
    Qrnn(#[from] QrnnError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Completion(#[from] CompletionError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl ForecastError {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(ForecastError) -> ForecastError {
        move |e| ForecastError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

/// Mean over points and coordinates of `c · |pred − target|`.
pub fn weighted_l1_points(pred: &[[f64; 2]], target: &[[f64; 2]], conf: &[f64]) -> Result<f64, ForecastError> {
    if pred.len() != target.len() || pred.len() != conf.len() {
        return Err(ForecastError::Mismatch(format!(
            "{} predictions, {} targets, {} confidences",
            pred.len(),
            target.len(),
            conf.len()
        )));
    }
    if let Some(&c) = conf.iter().find(|c| !(**c >= 0.0)) {
        return Err(ForecastError::NegativeConfidence(c));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .zip(conf)
        .map(|((p, t), c)| c * ((p[0] - t[0]).abs() + (p[1] - t[1]).abs()))
        .sum();
    Ok(s / (2 * pred.len()) as f64)
}

/// [`weighted_l1_points`] over poses, using the target poses' own
/// confidences (the original detections).
pub fn weighted_l1_loss(pred: &[Pose], target: &[Pose]) -> Result<f64, ForecastError> {
    if pred.len() != target.len() {
        return Err(ForecastError::Mismatch(format!("{} vs {} frames", pred.len(), target.len())));
    }
    let p: Vec<[f64; 2]> = pred.iter().flat_map(|p| p.joints.map(|k| k.xy())).collect();
    let t: Vec<[f64; 2]> = target.iter().flat_map(|p| p.joints.map(|k| k.xy())).collect();
    let c: Vec<f64> = target.iter().flat_map(|p| p.joints.map(|k| k.c)).collect();
    weighted_l1_points(&p, &t, &c)
}

/// Graph form: `scale · mean(w ⊙ |pred − target|)` with constant target and
/// weights of the same shape as `pred`.
pub(crate) fn weighted_l1_node(
    g: &mut Graph<'_>,
    pred: NodeId,
    target: Tensor,
    weights: Tensor,
    scale: f64,
) -> Result<NodeId, NumericsError> {
    let t = g.constant(target);
    let w = g.constant(weights);
    let d = g.sub(pred, t)?;
    let a = g.abs(d)?;
    let wa = g.hadamard(a, w)?;
    let m = g.mean(wa)?;
    g.scale(m, scale)
}
