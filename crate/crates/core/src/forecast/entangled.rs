//! Ablation without stream decomposition: one QRNN encoder-decoder over whole
//! normalized poses.

use serde::{Deserialize, Serialize};

use crate::completion::{TrainLog, POSE_DIM};
use crate::numerics::layers::init_rng;
use crate::numerics::{Graph, NodeId, ParamStore, Tensor};
use crate::pose::{FrameSize, Keypoint, Pose, NUM_JOINTS};
use crate::qrnn::{QrnnConfig, QrnnEncoderDecoder};

use super::data::{PreparedRecord, PreparedSet};
use super::train::{fit, Schedule};
use super::{weighted_l1_node, ForecastError};

pub const ENTANGLED_PREFIX: &str = "entangled";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntangledConfig {
    pub layers: usize,
    pub qrnn: QrnnConfig,
    pub schedule: Schedule,
    pub skip: bool,
    /// Feed completed poses (completion without decomposition) instead of
    /// raw detections.
    pub use_completion: bool,
}

impl Default for EntangledConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            qrnn: QrnnConfig::default(),
            schedule: Schedule::with_lr(1e-3),
            skip: true,
            use_completion: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntangledNet {
    pub qrnn: QrnnEncoderDecoder,
    pub config: EntangledConfig,
    pub t_p: usize,
    pub frame_size: FrameSize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntangledForecaster {
    pub params: ParamStore,
    pub net: EntangledNet,
}

impl EntangledNet {
    fn normalize(&self, p: &Pose) -> [f64; POSE_DIM] {
        let (w, h) = (self.frame_size.width, self.frame_size.height);
        let mut out = [0.0; POSE_DIM];
        for (j, k) in p.joints.iter().enumerate() {
            out[2 * j] = k.u / w;
            out[2 * j + 1] = k.v / h;
        }
        out
    }

    fn pack(&self, hists: &[&[Pose]], range: std::ops::Range<usize>) -> Tensor {
        let b = hists.len();
        let mut data = Vec::with_capacity(range.len() * b * POSE_DIM);
        for t in range.clone() {
            for h in hists {
                data.extend_from_slice(&self.normalize(&h[t]));
            }
        }
        Tensor::matrix(range.len() * b, POSE_DIM, data)
    }

    fn check(&self, hists: &[&[Pose]]) -> Result<(), ForecastError> {
        match hists.iter().find(|h| h.len() < self.t_p) {
            Some(h) => Err(ForecastError::HistoryLength {
                expected: self.t_p,
                got: h.len(),
            }),
            None => Ok(()),
        }
    }

    pub fn loss_node(&self, g: &mut Graph<'_>, batch: &[&PreparedRecord], t_f: usize) -> Result<NodeId, ForecastError> {
        let b = batch.len();
        let tp = self.t_p;
        let inputs: Vec<&[Pose]> = batch.iter().map(|r| r.input.frames.as_slice()).collect();
        self.check(&inputs)?;
        let x = g.constant(self.pack(&inputs, 0..tp));
        let seed = g.constant(self.pack(&inputs, tp - 1..tp));
        let teacher = g.constant(self.pack(&inputs, tp..tp + t_f));
        let states = self.qrnn.encode_states(g, x, b)?;
        let y = self
            .qrnn
            .decode_teacher(g, &states, seed, Some(teacher), t_f)?
            .ok_or_else(|| ForecastError::Mismatch("t_f must be positive for training".into()))?;
        let raws: Vec<&[Pose]> = batch.iter().map(|r| r.raw.frames.as_slice()).collect();
        let target = self.pack(&raws, tp..tp + t_f);
        let mut weight = Vec::with_capacity(t_f * b * POSE_DIM);
        for t in tp..tp + t_f {
            for r in &raws {
                weight.extend(r[t].joints.iter().flat_map(|k| [k.c, k.c]));
            }
        }
        Ok(weighted_l1_node(g, y, target, Tensor::matrix(t_f * b, POSE_DIM, weight), 1.0)?)
    }

    pub fn forecast(&self, params: &ParamStore, hists: &[&[Pose]], t_f: usize) -> Result<Vec<Vec<Pose>>, ForecastError> {
        self.check(hists)?;
        if hists.is_empty() || t_f == 0 {
            return Ok(vec![Vec::new(); hists.len()]);
        }
        let tp = self.t_p;
        let tail: Vec<&[Pose]> = hists.iter().map(|h| &h[h.len() - tp..]).collect();
        let mut g = Graph::new(params);
        let x = g.constant(self.pack(&tail, 0..tp));
        let seed = g.constant(self.pack(&tail, tp - 1..tp));
        let states = self.qrnn.encode_states(&mut g, x, hists.len())?;
        let ys = self.qrnn.decode_autoregressive(&mut g, &states, seed, t_f)?;
        let (w, h) = (self.frame_size.width, self.frame_size.height);
        let mut out: Vec<Vec<Pose>> = vec![Vec::with_capacity(t_f); hists.len()];
        for y in ys {
            let y = g.value(y);
            for (i, o) in out.iter_mut().enumerate() {
                let r = y.row_slice(i);
                let mut joints = [Keypoint::MISSING; NUM_JOINTS];
                for (j, k) in joints.iter_mut().enumerate() {
                    *k = Keypoint::new(r[2 * j] * w, r[2 * j + 1] * h, 1.0);
                }
                o.push(Pose::new(joints));
            }
        }
        Ok(out)
    }
}

impl EntangledForecaster {
    pub fn new(config: &EntangledConfig, t_p: usize, frame_size: FrameSize, seed: u64) -> Self {
        let mut rng = init_rng(seed);
        let mut params = ParamStore::new();
        let qrnn = QrnnEncoderDecoder::new(
            &mut params,
            ENTANGLED_PREFIX,
            POSE_DIM,
            POSE_DIM,
            config.layers,
            &config.qrnn,
            config.skip,
            &mut rng,
        );
        Self {
            params,
            net: EntangledNet {
                qrnn,
                config: config.clone(),
                t_p,
                frame_size,
            },
        }
    }

    pub fn from_params(params: ParamStore, config: &EntangledConfig, t_p: usize, frame_size: FrameSize) -> Result<Self, ForecastError> {
        let qrnn = QrnnEncoderDecoder::lookup(&params, ENTANGLED_PREFIX, POSE_DIM, POSE_DIM, config.layers, &config.qrnn, config.skip)?;
        Ok(Self {
            params,
            net: EntangledNet {
                qrnn,
                config: config.clone(),
                t_p,
                frame_size,
            },
        })
    }

    pub fn t_p(&self) -> usize {
        self.net.t_p
    }

    /// Forecasts from the last `t_p` poses of each history. Outputs carry
    /// confidence 1.
    pub fn forecast(&self, hists: &[&[Pose]], t_f: usize) -> Result<Vec<Vec<Pose>>, ForecastError> {
        self.net.forecast(&self.params, hists, t_f)
    }
}

/// Trains the entangled model. Whether the inputs were completed is decided
/// when `set` is built.
pub fn train_entangled(set: &PreparedSet, config: &EntangledConfig, seed: u64) -> Result<(EntangledForecaster, TrainLog), ForecastError> {
    if set.is_empty() || set.t_f == 0 || set.t_p == 0 {
        return Err(ForecastError::EmptyTrainingSet("entangled forecaster needs records with t_p, t_f > 0".into()));
    }
    let EntangledForecaster { mut params, net } = EntangledForecaster::new(config, set.t_p, set.frame_size, seed);
    let mut rng = init_rng(seed.wrapping_add(1));
    let log = fit(&mut params, &config.schedule, set.len(), &mut rng, |g, idx| {
        let batch: Vec<&PreparedRecord> = idx.iter().map(|&i| &set.records[i]).collect();
        net.loss_node(g, &batch, set.t_f)
    })?;
    Ok((EntangledForecaster { params, net }, log))
}
