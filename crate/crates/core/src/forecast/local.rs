//! Limb forecaster: anchor-relative offsets are mapped to a low-dimensional
//! latent by a separately trained, frozen codec and forecast there.

use serde::{Deserialize, Serialize};

use crate::completion::{train_autoencoder, Autoencoder, AutoencoderConfig, TrainLog};
use crate::numerics::layers::init_rng;
use crate::numerics::{Activation, Graph, NodeId, ParamStore, Tensor};
use crate::qrnn::{QrnnConfig, QrnnEncoderDecoder};
use crate::streams::{joint_of_local, LocalStream, LOCAL_DIM, LOCAL_JOINTS};

use super::data::{PreparedRecord, PreparedSet};
use super::train::{fit, Schedule};
use super::{weighted_l1_node, ForecastError};

pub const LOCAL_PREFIX: &str = "local";
pub const CODEC_PREFIX: &str = "codec";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalConfig {
    pub layers: usize,
    pub qrnn: QrnnConfig,
    pub schedule: Schedule,
    pub codec: AutoencoderConfig,
    /// Pixels per codec input unit.
    pub offset_scale: f64,
    /// Residual decoder output, so an untrained decoder holds the last code.
    pub skip: bool,
    /// Adds the codec's reconstruction error on the last observed frame to
    /// every decoded forecast, so repeating the last latent code repeats the
    /// last offsets exactly instead of their lossy reconstruction.
    pub last_frame_correction: bool,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            qrnn: QrnnConfig::default(),
            schedule: Schedule::with_lr(1e-4),
            codec: AutoencoderConfig {
                augment: false,
                steps: 20000,
                ..AutoencoderConfig::default()
            },
            offset_scale: 100.0,
            skip: true,
            last_frame_correction: true,
        }
    }
}

/// Frozen spatial encoder/decoder between 48 offsets and `d_ae` latents.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalCodec {
    pub ae: Autoencoder,
    pub scale: f64,
}

impl LocalCodec {
    pub fn latent_dim(&self) -> usize {
        self.ae.latent_dim()
    }

    /// Latents of every frame, `[T, d_ae]`.
    pub fn encode_stream(&self, s: &LocalStream) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..s.len())
            .map(|t| s.flat(t).iter().map(|x| x / self.scale).collect())
            .collect();
        self.ae.encode(&Tensor::from_rows(&rows))
    }

    /// Offsets (pixels) decoded from `[T, d_ae]` latents.
    pub fn decode_offsets(&self, z: &Tensor) -> Vec<Vec<f64>> {
        let y = self.ae.decode(z);
        (0..y.rows()).map(|r| y.row_slice(r).iter().map(|x| x * self.scale).collect()).collect()
    }

    pub fn train(set: &PreparedSet, cfg: &AutoencoderConfig, scale: f64, seed: u64) -> Result<(Self, TrainLog), ForecastError> {
        let data: Vec<Vec<f64>> = set
            .records
            .iter()
            .flat_map(|r| {
                let l = &r.streams.local;
                (0..l.len()).map(move |t| l.flat(t).iter().map(|x| x / scale).collect())
            })
            .collect();
        let mut rng = init_rng(seed);
        let mut ae = Autoencoder::new(CODEC_PREFIX, LOCAL_DIM, cfg, &mut rng);
        let log = train_autoencoder(&mut ae, &data, cfg, &mut rng, |_, _| {})?;
        Ok((Self { ae, scale }, log))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalNet {
    pub qrnn: QrnnEncoderDecoder,
    pub config: LocalConfig,
    pub t_p: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalForecaster {
    pub codec: LocalCodec,
    pub params: ParamStore,
    pub net: LocalNet,
}

/// Raw-detection targets for the local stream: joint minus the decomposed
/// anchor, weighted by the joint's confidence. Zero weight when the anchor
/// was not detected, since a completed anchor is only a guess.
fn local_targets(r: &PreparedRecord, t: usize) -> ([f64; LOCAL_DIM], [f64; LOCAL_DIM]) {
    let a = r.streams.global.anchor[t];
    let avail = if r.raw.frames[t].anchor().c > 0.0 { 1.0 } else { 0.0 };
    let mut target = [0.0; LOCAL_DIM];
    let mut weight = [0.0; LOCAL_DIM];
    for i in 0..LOCAL_JOINTS {
        let k = r.raw.frames[t].joints[joint_of_local(i)];
        target[2 * i] = k.u - a[0];
        target[2 * i + 1] = k.v - a[1];
        weight[2 * i] = k.c * avail;
        weight[2 * i + 1] = k.c * avail;
    }
    (target, weight)
}

/// Last observed offsets minus their codec reconstruction from `z_last`, in
/// codec units.
fn correction(codec: &LocalCodec, last: &[f64; LOCAL_DIM], z_last: &[f64]) -> Vec<f64> {
    let rec = codec.ae.decode(&Tensor::matrix(1, z_last.len(), z_last.to_vec()));
    last.iter().zip(rec.row_slice(0)).map(|(x, r)| x / codec.scale - r).collect()
}

/// `[t_f·B, n]` with row `t·B + i` equal to `rows[i]`.
fn repeat_rows(rows: &[Vec<f64>], t_f: usize) -> Tensor {
    let n = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(t_f * rows.len() * n);
    for _ in 0..t_f {
        for r in rows {
            data.extend_from_slice(r);
        }
    }
    Tensor::matrix(t_f * rows.len(), n, data)
}

impl LocalNet {
    fn check(&self, hists: &[&LocalStream]) -> Result<(), ForecastError> {
        match hists.iter().find(|h| h.len() < self.t_p) {
            Some(h) => Err(ForecastError::HistoryLength {
                expected: self.t_p,
                got: h.len(),
            }),
            None => Ok(()),
        }
    }

    /// Teacher-forced loss. `latents[i]` holds the codec latents of every
    /// frame of `batch[i]` (history and future).
    pub fn loss_node(
        &self,
        g: &mut Graph<'_>,
        codec: &LocalCodec,
        batch: &[&PreparedRecord],
        latents: &[&Tensor],
        t_f: usize,
    ) -> Result<NodeId, ForecastError> {
        let b = batch.len();
        let d = codec.latent_dim();
        let tp = self.t_p;
        let hists: Vec<&LocalStream> = batch.iter().map(|r| &r.streams.local).collect();
        self.check(&hists)?;
        let pack = |range: std::ops::Range<usize>| {
            let mut data = Vec::with_capacity(range.len() * b * d);
            for t in range.clone() {
                for z in latents {
                    data.extend_from_slice(z.row_slice(t));
                }
            }
            Tensor::matrix(range.len() * b, d, data)
        };
        let x = g.constant(pack(0..tp));
        let seed = g.constant(pack(tp - 1..tp));
        let teacher = g.constant(pack(tp..tp + t_f));
        let states = self.qrnn.encode_states(g, x, b)?;
        let y = self
            .qrnn
            .decode_teacher(g, &states, seed, Some(teacher), t_f)?
            .ok_or_else(|| ForecastError::Mismatch("t_f must be positive for training".into()))?;
        let mut offsets = codec.ae.decode_node(g, y, true)?;
        if self.config.last_frame_correction {
            let mut rows = Vec::with_capacity(b);
            for (r, z) in batch.iter().zip(latents) {
                rows.push(correction(codec, &r.streams.local.flat(tp - 1), z.row_slice(tp - 1)));
            }
            let c = g.constant(repeat_rows(&rows, t_f));
            offsets = g.add(offsets, c)?;
        }
        let mut target = Vec::with_capacity(t_f * b * LOCAL_DIM);
        let mut weight = Vec::with_capacity(t_f * b * LOCAL_DIM);
        for t in 0..t_f {
            for r in batch {
                let (tg, w) = local_targets(r, tp + t);
                target.extend(tg.iter().map(|x| x / codec.scale));
                weight.extend_from_slice(&w);
            }
        }
        Ok(weighted_l1_node(
            g,
            offsets,
            Tensor::matrix(t_f * b, LOCAL_DIM, target),
            Tensor::matrix(t_f * b, LOCAL_DIM, weight),
            1.0,
        )?)
    }

    pub fn forecast(
        &self,
        params: &ParamStore,
        codec: &LocalCodec,
        hists: &[LocalStream],
        t_f: usize,
    ) -> Result<Vec<LocalStream>, ForecastError> {
        let refs: Vec<&LocalStream> = hists.iter().collect();
        self.check(&refs)?;
        if hists.is_empty() || t_f == 0 {
            return Ok(vec![LocalStream::from_offsets(Vec::new()); hists.len()]);
        }
        let b = hists.len();
        let d = codec.latent_dim();
        let tp = self.t_p;
        let lat: Vec<Tensor> = hists.iter().map(|h| codec.encode_stream(&h.slice(0..tp))).collect();
        let mut xs = Vec::with_capacity(tp * b * d);
        for t in 0..tp {
            for z in &lat {
                xs.extend_from_slice(z.row_slice(t));
            }
        }
        let mut g = Graph::new(params);
        let x = g.constant(Tensor::matrix(tp * b, d, xs));
        let seed = g.slice_rows(x, (tp - 1) * b..tp * b)?;
        let states = self.qrnn.encode_states(&mut g, x, b)?;
        let ys = self.qrnn.decode_autoregressive(&mut g, &states, seed, t_f)?;
        let fix: Vec<Vec<f64>> = hists
            .iter()
            .zip(&lat)
            .map(|(h, z)| {
                if self.config.last_frame_correction {
                    correction(codec, &h.flat(tp - 1), z.row_slice(tp - 1))
                } else {
                    vec![0.0; LOCAL_DIM]
                }
            })
            .collect();
        let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(t_f); b];
        for y in ys {
            let dec = codec.decode_offsets(g.value(y));
            for (i, r) in dec.into_iter().enumerate() {
                rows[i].push(r.iter().zip(&fix[i]).map(|(x, c)| x + c * codec.scale).collect());
            }
        }
        Ok(rows.iter().map(|r| LocalStream::from_flat(r)).collect())
    }
}

impl LocalForecaster {
    pub fn new(codec: LocalCodec, config: &LocalConfig, t_p: usize, seed: u64) -> Self {
        let mut rng = init_rng(seed);
        let mut params = ParamStore::new();
        let d = codec.latent_dim();
        let qrnn = QrnnEncoderDecoder::new(&mut params, LOCAL_PREFIX, d, d, config.layers, &config.qrnn, config.skip, &mut rng);
        Self {
            codec,
            params,
            net: LocalNet {
                qrnn,
                config: config.clone(),
                t_p,
            },
        }
    }

    /// Rebuilds from a checkpoint holding both the codec and QRNN weights.
    pub fn from_params(all: &ParamStore, config: &LocalConfig, activation: Activation, t_p: usize) -> Result<Self, ForecastError> {
        let mut codec_ps = ParamStore::new();
        let mut qrnn_ps = ParamStore::new();
        for (name, value) in all.iter() {
            if name.starts_with(&format!("{CODEC_PREFIX}.")) {
                codec_ps.add(name, value.clone());
            } else {
                qrnn_ps.add(name, value.clone());
            }
        }
        let ae = Autoencoder::from_params(codec_ps, CODEC_PREFIX, activation)?;
        let d = ae.latent_dim();
        let qrnn = QrnnEncoderDecoder::lookup(&qrnn_ps, LOCAL_PREFIX, d, d, config.layers, &config.qrnn, config.skip)?;
        Ok(Self {
            codec: LocalCodec {
                ae,
                scale: config.offset_scale,
            },
            params: qrnn_ps,
            net: LocalNet {
                qrnn,
                config: config.clone(),
                t_p,
            },
        })
    }

    /// Codec and QRNN weights in one store, for checkpointing.
    pub fn all_params(&self) -> ParamStore {
        let mut out = self.codec.ae.params.clone();
        for (name, value) in self.params.iter() {
            out.add(name, value.clone());
        }
        out
    }

    pub fn t_p(&self) -> usize {
        self.net.t_p
    }

    pub fn forecast(&self, hists: &[LocalStream], t_f: usize) -> Result<Vec<LocalStream>, ForecastError> {
        self.net.forecast(&self.params, &self.codec, hists, t_f)
    }
}

/// Trains the codec on the input local streams, then the latent QRNN with the
/// codec frozen.
pub fn train_local(
    set: &PreparedSet,
    config: &LocalConfig,
    seed: u64,
) -> Result<(LocalForecaster, TrainLog, TrainLog), ForecastError> {
    if set.is_empty() || set.t_f == 0 || set.t_p == 0 {
        return Err(ForecastError::EmptyTrainingSet("local forecaster needs records with t_p, t_f > 0".into()));
    }
    let (codec, codec_log) = LocalCodec::train(set, &config.codec, config.offset_scale, seed)?;
    let latents: Vec<Tensor> = set.records.iter().map(|r| codec.encode_stream(&r.streams.local)).collect();
    let LocalForecaster { codec, mut params, net } = LocalForecaster::new(codec, config, set.t_p, seed.wrapping_add(1));
    let mut rng = init_rng(seed.wrapping_add(2));
    let log = fit(&mut params, &config.schedule, set.len(), &mut rng, |g, idx| {
        let batch: Vec<&PreparedRecord> = idx.iter().map(|&i| &set.records[i]).collect();
        let lat: Vec<&Tensor> = idx.iter().map(|&i| &latents[i]).collect();
        net.loss_node(g, &codec, &batch, &lat, set.t_f)
    })?;
    Ok((LocalForecaster { codec, params, net }, codec_log, log))
}
