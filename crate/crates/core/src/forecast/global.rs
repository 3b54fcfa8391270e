//! Egomotion-aware anchor forecaster: a per-frame encoder shared across
//! timesteps feeds a QRNN encoder-decoder that predicts anchor residuals.

use serde::{Deserialize, Serialize};

use crate::completion::TrainLog;
use crate::numerics::layers::init_rng;
use crate::numerics::{Activation, Axis, Graph, Mlp, NodeId, NumericsError, ParamStore, Tensor};
use crate::pose::FrameSize;
use crate::qrnn::{pack_time_major, QrnnConfig, QrnnEncoderDecoder};
use crate::streams::GlobalStream;
use crate::synth::TransformSE3;

use super::data::{PreparedRecord, PreparedSet};
use super::train::{fit, Schedule};
use super::{weighted_l1_node, ForecastError};

/// Per-frame encoder input: anchor `(u, v)`, its step from the previous
/// frame, depth, confidence, and the 12 transform values.
pub const FRAME_FEATURES: usize = 18;
pub const GLOBAL_PREFIX: &str = "global";

/// What the decoder's 2-vectors mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// Frame-to-frame displacement, summed from the last observed anchor.
    #[default]
    Consecutive,
    /// Displacement from the first observed anchor.
    FromFirst,
}

/// How frame codes reach the QRNN encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingMode {
    /// The sequence of frame codes is the encoder input.
    #[default]
    Sequence,
    /// Frame codes are averaged over time into a single encoder step.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub layers: usize,
    pub qrnn: QrnnConfig,
    pub frame_hidden: usize,
    pub frame_activation: Activation,
    pub schedule: Schedule,
    pub residual_mode: ResidualMode,
    pub pooling_mode: PoolingMode,
    /// When false the encoder sees identity transforms (egomotion-blind).
    pub use_transforms: bool,
    /// Decoder output added to its input. Off by default for the same
    /// exposure-bias reason as the local stream: the fed-back velocity is
    /// noisy in training and smooth at inference.
    pub skip: bool,
    /// Pixels per unit of decoder output.
    pub residual_scale: f64,
    /// Meters per unit of depth input.
    pub depth_scale: f64,
    /// Meters per unit of transform translation input.
    pub translation_scale: f64,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            qrnn: QrnnConfig::default(),
            frame_hidden: 32,
            frame_activation: Activation::Tanh,
            schedule: Schedule::with_lr(1e-3),
            residual_mode: ResidualMode::Consecutive,
            pooling_mode: PoolingMode::Sequence,
            use_transforms: true,
            skip: false,
            residual_scale: 10.0,
            depth_scale: 10.0,
            translation_scale: 10.0,
        }
    }
}

/// Frame encoder input vector for frame `t` of a global stream.
pub fn frame_features(s: &GlobalStream, t: usize, fs: FrameSize, cfg: &GlobalConfig) -> [f64; FRAME_FEATURES] {
    let tr = if cfg.use_transforms {
        s.transforms[t]
    } else {
        TransformSE3::IDENTITY
    };
    let mut m = tr.flatten();
    for i in [3, 7, 11] {
        m[i] /= cfg.translation_scale;
    }
    // Steps are a few pixels against a frame width in the thousands; fed
    // only as absolute positions they would vanish under the scaling.
    let prev = s.anchor[t.saturating_sub(1)];
    let mut f = [0.0; FRAME_FEATURES];
    f[0] = s.anchor[t][0] / fs.width;
    f[1] = s.anchor[t][1] / fs.height;
    f[2] = (s.anchor[t][0] - prev[0]) / cfg.residual_scale;
    f[3] = (s.anchor[t][1] - prev[1]) / cfg.residual_scale;
    f[4] = s.depth[t] / cfg.depth_scale;
    f[5] = s.confidence[t];
    f[6..].copy_from_slice(&m);
    f
}

/// Feed-forward map from frame features to a 2-vector, applied with the
/// same weights at every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEncoder {
    pub mlp: Mlp,
}

impl FrameEncoder {
    pub fn forward(&self, g: &mut Graph<'_>, features: NodeId) -> Result<NodeId, NumericsError> {
        self.mlp.forward(g, features, None)
    }
}

/// Layer handles and settings; the weights live in a separate store.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalNet {
    pub frame: FrameEncoder,
    pub qrnn: QrnnEncoderDecoder,
    pub config: GlobalConfig,
    pub t_p: usize,
    pub frame_size: FrameSize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalForecaster {
    pub params: ParamStore,
    pub net: GlobalNet,
}

fn as_anchor(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

impl GlobalForecaster {
    pub fn new(config: &GlobalConfig, t_p: usize, frame_size: FrameSize, seed: u64) -> Self {
        let mut rng = init_rng(seed);
        let mut params = ParamStore::new();
        let mlp = Mlp::new(
            &mut params,
            &format!("{GLOBAL_PREFIX}.frame"),
            &[FRAME_FEATURES, config.frame_hidden, 2],
            config.frame_activation,
            true,
            &mut rng,
        );
        let qrnn = QrnnEncoderDecoder::new(&mut params, GLOBAL_PREFIX, 2, 2, config.layers, &config.qrnn, config.skip, &mut rng);
        Self {
            params,
            net: GlobalNet {
                frame: FrameEncoder { mlp },
                qrnn,
                config: config.clone(),
                t_p,
                frame_size,
            },
        }
    }

    pub fn from_params(params: ParamStore, config: &GlobalConfig, t_p: usize, frame_size: FrameSize) -> Result<Self, ForecastError> {
        let mlp = Mlp::lookup(&params, &format!("{GLOBAL_PREFIX}.frame"), config.frame_activation, true)
            .filter(|m| m.input_dim() == FRAME_FEATURES && m.output_dim() == 2)
            .ok_or_else(|| ForecastError::Mismatch("global checkpoint lacks an 18→2 frame encoder".into()))?;
        let qrnn = QrnnEncoderDecoder::lookup(&params, GLOBAL_PREFIX, 2, 2, config.layers, &config.qrnn, config.skip)?;
        Ok(Self {
            params,
            net: GlobalNet {
                frame: FrameEncoder { mlp },
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

    pub fn config(&self) -> &GlobalConfig {
        &self.net.config
    }

    pub fn frame_codes(&self, hist: &GlobalStream) -> Vec<[f64; 2]> {
        self.net.frame_codes(&self.params, hist)
    }

    pub fn loss_node(&self, g: &mut Graph<'_>, batch: &[&PreparedRecord], t_f: usize) -> Result<NodeId, ForecastError> {
        self.net.loss_node(g, batch, t_f)
    }

    pub fn forecast(&self, hists: &[GlobalStream], t_f: usize) -> Result<Vec<Vec<[f64; 2]>>, ForecastError> {
        self.net.forecast(&self.params, hists, t_f)
    }
}

impl GlobalNet {
    fn check_history(&self, hists: &[&GlobalStream]) -> Result<(), ForecastError> {
        for (i, h) in hists.iter().enumerate() {
            if h.len() < self.t_p {
                return Err(ForecastError::HistoryLength {
                    expected: self.t_p,
                    got: h.len(),
                });
            }
            if !h.transforms[0].is_identity(1e-9) {
                return Err(ForecastError::NonIdentityStart { index: i });
            }
        }
        Ok(())
    }

    /// `[t_p·B, FRAME_FEATURES]` time-major feature tensor.
    pub fn history_features(&self, hists: &[&GlobalStream]) -> Tensor {
        let seqs: Vec<Vec<Vec<f64>>> = hists
            .iter()
            .map(|h| {
                (0..self.t_p)
                    .map(|t| frame_features(h, t, self.frame_size, &self.config).to_vec())
                    .collect()
            })
            .collect();
        pack_time_major(&seqs)
    }

    /// Frame codes `x_α` of one history.
    pub fn frame_codes(&self, params: &ParamStore, hist: &GlobalStream) -> Vec<[f64; 2]> {
        let f = self.history_features(&[hist]);
        let x = self.frame.mlp.apply(params, &f);
        (0..x.rows()).map(|r| as_anchor(x.row_slice(r))).collect()
    }

    fn encoder_input(&self, g: &mut Graph<'_>, features: Tensor, batch: usize) -> Result<NodeId, ForecastError> {
        let f = g.constant(features);
        let x = self.frame.forward(g, f)?;
        Ok(match self.config.pooling_mode {
            PoolingMode::Sequence => x,
            PoolingMode::Mean => {
                let rows = self.t_p * batch;
                let mut avg = Tensor::zeros(batch, rows);
                for t in 0..self.t_p {
                    for b in 0..batch {
                        avg.set(b, t * batch + b, 1.0 / self.t_p as f64);
                    }
                }
                let a = g.constant(avg);
                g.matmul(a, x)?
            }
        })
    }

    fn reference(&self, anchor: &[[f64; 2]]) -> [f64; 2] {
        match self.config.residual_mode {
            ResidualMode::Consecutive => anchor[self.t_p - 1],
            ResidualMode::FromFirst => anchor[0],
        }
    }

    /// Decoder input encoding of the anchor at frame `t`.
    fn code(&self, anchor: &[[f64; 2]], t: usize) -> [f64; 2] {
        let rs = self.config.residual_scale;
        let base = match self.config.residual_mode {
            ResidualMode::Consecutive if t == 0 => anchor[0],
            ResidualMode::Consecutive => anchor[t - 1],
            ResidualMode::FromFirst => anchor[0],
        };
        [(anchor[t][0] - base[0]) / rs, (anchor[t][1] - base[1]) / rs]
    }

    /// Teacher-forced training loss on a batch of records.
    pub fn loss_node(&self, g: &mut Graph<'_>, batch: &[&PreparedRecord], t_f: usize) -> Result<NodeId, ForecastError> {
        let b = batch.len();
        let hists: Vec<&GlobalStream> = batch.iter().map(|r| &r.streams.global).collect();
        self.check_history(&hists)?;
        let x = self.encoder_input(g, self.history_features(&hists), b)?;
        let states = self.qrnn.encode_states(g, x, b)?;

        let tp = self.t_p;
        let rs = self.config.residual_scale;
        let mut seed = Vec::with_capacity(2 * b);
        let mut teacher = vec![0.0; 2 * b * t_f];
        let mut target = vec![0.0; 2 * b * t_f];
        let mut weight = vec![0.0; 2 * b * t_f];
        let mut base = vec![0.0; 2 * b * t_f];
        for (i, r) in batch.iter().enumerate() {
            let a = &r.streams.global.anchor;
            seed.extend(self.code(a, tp - 1));
            let reference = self.reference(a);
            for t in 0..t_f {
                let row = 2 * (t * b + i);
                teacher[row..row + 2].copy_from_slice(&self.code(a, tp + t));
                let k = r.raw.frames[tp + t].anchor();
                target[row..row + 2].copy_from_slice(&[k.u, k.v]);
                weight[row..row + 2].copy_from_slice(&[k.c, k.c]);
                base[row..row + 2].copy_from_slice(&reference);
            }
        }
        let seed = g.constant(Tensor::matrix(b, 2, seed));
        let teacher = g.constant(Tensor::matrix(t_f * b, 2, teacher));
        let y = self
            .qrnn
            .decode_teacher(g, &states, seed, Some(teacher), t_f)?
            .ok_or_else(|| ForecastError::Mismatch("t_f must be positive for training".into()))?;
        let offsets = match self.config.residual_mode {
            ResidualMode::Consecutive => {
                let mut cum = Vec::with_capacity(t_f);
                for t in 0..t_f {
                    let yt = g.slice_rows(y, t * b..(t + 1) * b)?;
                    cum.push(match cum.last() {
                        Some(&prev) => g.add(prev, yt)?,
                        None => yt,
                    });
                }
                if cum.len() == 1 {
                    cum[0]
                } else {
                    g.concat(&cum, Axis::Rows)?
                }
            }
            ResidualMode::FromFirst => y,
        };
        let px = g.scale(offsets, rs)?;
        let basec = g.constant(Tensor::matrix(t_f * b, 2, base));
        let pos = g.add(px, basec)?;
        Ok(weighted_l1_node(
            g,
            pos,
            Tensor::matrix(t_f * b, 2, target),
            Tensor::matrix(t_f * b, 2, weight),
            1.0 / rs,
        )?)
    }

    /// Autoregressive anchor forecasts for `t_f` frames after each history.
    pub fn forecast(&self, params: &ParamStore, hists: &[GlobalStream], t_f: usize) -> Result<Vec<Vec<[f64; 2]>>, ForecastError> {
        if hists.is_empty() || t_f == 0 {
            return Ok(vec![Vec::new(); hists.len()]);
        }
        let refs: Vec<&GlobalStream> = hists.iter().collect();
        self.check_history(&refs)?;
        let b = hists.len();
        let mut g = Graph::new(params);
        let x = self.encoder_input(&mut g, self.history_features(&refs), b)?;
        let states = self.qrnn.encode_states(&mut g, x, b)?;
        let seed: Vec<f64> = hists.iter().flat_map(|h| self.code(&h.anchor, self.t_p - 1)).collect();
        let seed = g.constant(Tensor::matrix(b, 2, seed));
        let ys = self.qrnn.decode_autoregressive(&mut g, &states, seed, t_f)?;
        let rs = self.config.residual_scale;
        let mut out: Vec<Vec<[f64; 2]>> = hists.iter().map(|_| Vec::with_capacity(t_f)).collect();
        let mut pos: Vec<[f64; 2]> = hists.iter().map(|h| self.reference(&h.anchor)).collect();
        for y in ys {
            let y = g.value(y);
            for (i, o) in out.iter_mut().enumerate() {
                let d = [y.get(i, 0) * rs, y.get(i, 1) * rs];
                let p = match self.config.residual_mode {
                    ResidualMode::Consecutive => {
                        pos[i] = [pos[i][0] + d[0], pos[i][1] + d[1]];
                        pos[i]
                    }
                    ResidualMode::FromFirst => [pos[i][0] + d[0], pos[i][1] + d[1]],
                };
                o.push(p);
            }
        }
        Ok(out)
    }
}

/// Trains a global forecaster on prepared records.
pub fn train_global(set: &PreparedSet, config: &GlobalConfig, seed: u64) -> Result<(GlobalForecaster, TrainLog), ForecastError> {
    if set.is_empty() || set.t_f == 0 || set.t_p == 0 {
        return Err(ForecastError::EmptyTrainingSet("global forecaster needs records with t_p, t_f > 0".into()));
    }
    let GlobalForecaster { mut params, net } = GlobalForecaster::new(config, set.t_p, set.frame_size, seed);
    let mut rng = init_rng(seed.wrapping_add(1));
    let log = fit(&mut params, &config.schedule, set.len(), &mut rng, |g, idx| {
        let batch: Vec<&PreparedRecord> = idx.iter().map(|&i| &set.records[i]).collect();
        net.loss_node(g, &batch, set.t_f)
    })?;
    Ok((GlobalForecaster { params, net }, log))
}
