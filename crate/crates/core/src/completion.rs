//! Dropout-trained autoencoder that fills missing and low-confidence joints.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::layers::{init_rng, ModelRng};
use crate::numerics::{decayed_lr, Activation, Adam, AdamConfig, Graph, Mlp, NodeId, NumericsError, ParamStore, Tensor};
use crate::pose::{FrameSize, Keypoint, LocomotionSequence, Pose, DEFAULT_ALPHA_C, NUM_JOINTS};

/// Flattened pose width.
pub const POSE_DIM: usize = 2 * NUM_JOINTS;

#[derive(Debug, Error)]
pub enum CompletionError {
    #[error("no training examples: {0}")]
    EmptyTrainingSet(String),
    #[error("model layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Hidden widths stepping linearly from `input` down to `latent`, excluding
/// both ends (50 → 37, 23 → 10).
pub fn interpolated_widths(input: usize, latent: usize, layers: usize) -> Vec<usize> {
    (1..layers)
        .map(|i| {
            let w = input as f64 + (latent as f64 - input as f64) * i as f64 / layers as f64;
            w.round() as usize
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Encoder hidden widths; the decoder mirrors them. Empty means
    /// [`interpolated_widths`] with three encoder layers.
    pub hidden: Vec<usize>,
    pub d_ae: usize,
    pub activation: Activation,
    /// Per-joint input dropout probability during training.
    pub dropout: f64,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr`.
    pub lr_final_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Random image-plane shift and scale of training poses.
    pub augment: bool,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            d_ae: 10,
            activation: Activation::Tanh,
            dropout: 0.5,
            lr: 1e-3,
            lr_final_fraction: 0.1,
            steps: 40000,
            batch_size: 64,
            augment: true,
        }
    }
}

impl AutoencoderConfig {
    pub fn hidden_for(&self, input: usize) -> Vec<usize> {
        if self.hidden.is_empty() {
            interpolated_widths(input, self.d_ae, 3)
        } else {
            self.hidden.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CompletionError> {
        let ok = self.d_ae > 0
            && (0.0..1.0).contains(&self.dropout)
            && self.lr > 0.0
            && self.lr_final_fraction > 0.0
            && self.batch_size > 0
            && self.hidden.iter().all(|&w| w > 0);
        if ok {
            Ok(())
        } else {
            Err(CompletionError::Layout(format!("invalid autoencoder config {self:?}")))
        }
    }
}

/// Symmetric autoencoder: every encoder layer is nonlinear (latent
/// included); the decoder's last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub params: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Coordinates per dropout group (2 for `(u, v)` pairs).
    pub group: usize,
}

impl Autoencoder {
    pub fn new(prefix: &str, input: usize, cfg: &AutoencoderConfig, rng: &mut ModelRng) -> Self {
        let hidden = cfg.hidden_for(input);
        let mut enc_w = vec![input];
        enc_w.extend(&hidden);
        enc_w.push(cfg.d_ae);
        let dec_w: Vec<usize> = enc_w.iter().rev().copied().collect();
        let mut params = ParamStore::new();
        let encoder = Mlp::new(&mut params, &format!("{prefix}.enc"), &enc_w, cfg.activation, false, rng);
        let decoder = Mlp::new(&mut params, &format!("{prefix}.dec"), &dec_w, cfg.activation, true, rng);
        Self {
            params,
            encoder,
            decoder,
            group: 2,
        }
    }

    /// Rebuilds the layer handles over loaded parameters.
    pub fn from_params(params: ParamStore, prefix: &str, activation: Activation) -> Result<Self, CompletionError> {
        let missing = || CompletionError::Layout(format!("no {prefix} layers in checkpoint"));
        let encoder = Mlp::lookup(&params, &format!("{prefix}.enc"), activation, false).ok_or_else(missing)?;
        let decoder = Mlp::lookup(&params, &format!("{prefix}.dec"), activation, true).ok_or_else(missing)?;
        if encoder.output_dim() != decoder.input_dim() || encoder.input_dim() != decoder.output_dim() {
            return Err(CompletionError::Layout(format!("{prefix} encoder and decoder do not mirror")));
        }
        Ok(Self {
            params,
            encoder,
            decoder,
            group: 2,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.encoder.layers.iter().map(|l| l.fan_out));
        w.extend(self.decoder.layers.iter().map(|l| l.fan_out));
        w
    }

    pub fn encode_node(&self, g: &mut Graph<'_>, x: NodeId, frozen: bool) -> Result<NodeId, NumericsError> {
        self.encoder.forward(g, x, frozen.then_some(&self.params))
    }

    pub fn decode_node(&self, g: &mut Graph<'_>, z: NodeId, frozen: bool) -> Result<NodeId, NumericsError> {
        self.decoder.forward(g, z, frozen.then_some(&self.params))
    }

    /// Training loss on a batch: mean `|decode(encode(x ⊙ mask)) − x|`.
    pub fn loss_node(&self, g: &mut Graph<'_>, x: &Tensor, mask: &Tensor) -> Result<NodeId, NumericsError> {
        let xi = g.input("x", x.clone())?;
        let mi = g.input("mask", mask.clone())?;
        let masked = g.hadamard(xi, mi)?;
        let z = self.encode_node(g, masked, false)?;
        let y = self.decode_node(g, z, false)?;
        let d = g.sub(y, xi)?;
        let a = g.abs(d)?;
        g.mean(a)
    }

    pub fn encode(&self, x: &Tensor) -> Tensor {
        self.encoder.apply(&self.params, x)
    }

    pub fn decode(&self, z: &Tensor) -> Tensor {
        self.decoder.apply(&self.params, z)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Tensor {
        self.decode(&self.encode(x))
    }

    /// Per-group keep mask: each group survives with probability
    /// `1 − dropout`; kept values are not rescaled.
    pub fn dropout_mask(&self, rows: usize, dropout: f64, rng: &mut impl Rng) -> Tensor {
        let d = self.input_dim();
        let mut m = Tensor::filled(rows, d, 1.0);
        if dropout > 0.0 {
            for r in 0..rows {
                for g0 in (0..d).step_by(self.group) {
                    if rng.random::<f64>() < dropout {
                        for c in g0..(g0 + self.group).min(d) {
                            m.set(r, c, 0.0);
                        }
                    }
                }
            }
        }
        m
    }
}

/// Loss trace of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss over consecutive windows of steps.
    pub losses: Vec<f64>,
    pub steps: usize,
}

impl TrainLog {
    pub const WINDOW: usize = 50;

    pub(crate) fn record(&mut self, acc: &mut (f64, usize), loss: f64) {
        self.steps += 1;
        acc.0 += loss;
        acc.1 += 1;
        if acc.1 == Self::WINDOW {
            self.losses.push(acc.0 / acc.1 as f64);
            *acc = (0.0, 0);
        }
    }

    pub(crate) fn finish(&mut self, acc: (f64, usize)) {
        if acc.1 > 0 {
            self.losses.push(acc.0 / acc.1 as f64);
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Trains `ae` on the rows of `data` (already normalized). `augment` is
/// applied to each sampled row before masking.
pub fn train_autoencoder(
    ae: &mut Autoencoder,
    data: &[Vec<f64>],
    cfg: &AutoencoderConfig,
    rng: &mut ModelRng,
    augment: impl Fn(&mut Vec<f64>, &mut ModelRng),
) -> Result<TrainLog, CompletionError> {
    if data.is_empty() {
        return Err(CompletionError::EmptyTrainingSet("autoencoder".into()));
    }
    let d = ae.input_dim();
    if let Some(bad) = data.iter().position(|r| r.len() != d) {
        return Err(CompletionError::Layout(format!("row {bad} has width {}, expected {d}", data[bad].len())));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &ae.params);
    let mut log = TrainLog::default();
    let mut acc = (0.0, 0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for step in 0..cfg.steps {
        adam.config.lr = decayed_lr(cfg.lr, cfg.lr_final_fraction, step, cfg.steps);
        let rows: Vec<Vec<f64>> = (0..cfg.batch_size)
            .map(|_| {
                let mut r = data[*idx.choose(rng).expect("non-empty")].clone();
                augment(&mut r, rng);
                r
            })
            .collect();
        let x = Tensor::from_rows(&rows);
        let mask = ae.dropout_mask(rows.len(), cfg.dropout, rng);
        let grads = {
            let mut g = Graph::new(&ae.params);
            let loss = ae.loss_node(&mut g, &x, &mask)?;
            log.record(&mut acc, g.value(loss).data()[0]);
            g.backward(loss)?
        };
        adam.step(&mut ae.params, &grads)?;
    }
    log.finish(acc);
    Ok(log)
}

/// The pose-completion model over normalized `(u/W, v/H)` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionModel {
    pub ae: Autoencoder,
    pub frame_size: FrameSize,
    pub alpha_c: f64,
}

pub const COMPLETION_PREFIX: &str = "completion";

fn normalize(p: &Pose, fs: FrameSize) -> Vec<f64> {
    p.joints.iter().flat_map(|k| [k.u / fs.width, k.v / fs.height]).collect()
}

// Random shift and scale (about the pose centroid) in normalized units.
fn augment_pose(row: &mut Vec<f64>, rng: &mut ModelRng) {
    let s: f64 = rng.random_range(0.8..1.25);
    let du: f64 = rng.random_range(-0.15..0.15);
    let dv: f64 = rng.random_range(-0.08..0.08);
    let n = row.len() as f64 / 2.0;
    let cu = row.iter().step_by(2).sum::<f64>() / n;
    let cv = row.iter().skip(1).step_by(2).sum::<f64>() / n;
    for (i, x) in row.iter_mut().enumerate() {
        *x = if i % 2 == 0 {
            cu + du + s * (*x - cu)
        } else {
            cv + dv + s * (*x - cv)
        };
    }
}

/// Trains the completion autoencoder on confident poses.
pub fn train_completion(
    poses: &[Pose],
    frame_size: FrameSize,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(CompletionModel, TrainLog), CompletionError> {
    cfg.validate()?;
    if poses.is_empty() {
        return Err(CompletionError::EmptyTrainingSet(
            "no pose passes the confidence filter; lower the dropout or add sequences".into(),
        ));
    }
    let mut rng = init_rng(seed);
    let mut ae = Autoencoder::new(COMPLETION_PREFIX, POSE_DIM, cfg, &mut rng);
    let data: Vec<Vec<f64>> = poses.iter().map(|p| normalize(p, frame_size)).collect();
    let log = if cfg.augment {
        train_autoencoder(&mut ae, &data, cfg, &mut rng, augment_pose)?
    } else {
        train_autoencoder(&mut ae, &data, cfg, &mut rng, |_, _| {})?
    };
    Ok((
        CompletionModel {
            ae,
            frame_size,
            alpha_c: DEFAULT_ALPHA_C,
        },
        log,
    ))
}

impl CompletionModel {
    pub fn from_params(params: ParamStore, activation: Activation, frame_size: FrameSize, alpha_c: f64) -> Result<Self, CompletionError> {
        let ae = Autoencoder::from_params(params, COMPLETION_PREFIX, activation)?;
        if ae.input_dim() != POSE_DIM {
            return Err(CompletionError::Layout(format!("completion input width {}", ae.input_dim())));
        }
        Ok(Self { ae, frame_size, alpha_c })
    }

    /// Autoencoder estimate for every joint, low-confidence joints fed as
    /// zeros.
    pub fn estimate(&self, poses: &[Pose]) -> Vec<Pose> {
        if poses.is_empty() {
            return Vec::new();
        }
        let fs = self.frame_size;
        let rows: Vec<Vec<f64>> = poses
            .iter()
            .map(|p| {
                let mut r = normalize(p, fs);
                for (j, k) in p.joints.iter().enumerate() {
                    if k.c <= self.alpha_c {
                        r[2 * j] = 0.0;
                        r[2 * j + 1] = 0.0;
                    }
                }
                r
            })
            .collect();
        let y = self.ae.reconstruct(&Tensor::from_rows(&rows));
        (0..poses.len())
            .map(|i| {
                let r = y.row_slice(i);
                Pose::new(std::array::from_fn(|j| Keypoint::new(r[2 * j] * fs.width, r[2 * j + 1] * fs.height, 1.0)))
            })
            .collect()
    }

    /// Replaces joints with `c ≤ alpha_c` by the autoencoder estimate and
    /// gives them confidence `alpha_c`; confident joints pass through.
    pub fn complete_many(&self, poses: &[Pose]) -> Vec<Pose> {
        let need: Vec<usize> = (0..poses.len())
            .filter(|&i| poses[i].joints.iter().any(|k| k.c <= self.alpha_c))
            .collect();
        let subset: Vec<Pose> = need.iter().map(|&i| poses[i]).collect();
        let est = self.estimate(&subset);
        let mut out = poses.to_vec();
        for (&i, e) in need.iter().zip(&est) {
            for (k, ek) in out[i].joints.iter_mut().zip(&e.joints) {
                if k.c <= self.alpha_c {
                    *k = Keypoint::new(ek.u, ek.v, self.alpha_c);
                }
            }
        }
        out
    }

    pub fn complete(&self, pose: &Pose) -> Pose {
        self.complete_many(std::slice::from_ref(pose))[0]
    }

    pub fn complete_sequence(&self, seq: &LocomotionSequence) -> LocomotionSequence {
        LocomotionSequence {
            frames: self.complete_many(&seq.frames),
            ..seq.clone()
        }
    }
}

/// Fills every low-confidence joint with the mean of the training poses.
pub fn mean_pose_fill(train: &[Pose], pose: &Pose, alpha_c: f64) -> Pose {
    let n = train.len() as f64;
    let mut out = *pose;
    for (j, k) in out.joints.iter_mut().enumerate() {
        if k.c <= alpha_c {
            let u = train.iter().map(|p| p.joints[j].u).sum::<f64>() / n;
            let v = train.iter().map(|p| p.joints[j].v).sum::<f64>() / n;
            *k = Keypoint::new(u, v, alpha_c);
        }
    }
    out
}
