//! End-to-end forecasting: complete, decompose, forecast both streams,
//! recombine.

use crate::baselines::Baseline;
use crate::completion::CompletionModel;
use crate::pose::{LocomotionSequence, Pose};
use crate::streams::{decompose, decompose_raw, recombine, GlobalStream, LocalStream};

use super::global::GlobalForecaster;
use super::local::LocalForecaster;
use super::ForecastError;

/// Anchor-track forecaster over global streams.
pub trait GlobalPredictor: Sync {
    fn predict_global(&self, hists: &[GlobalStream], t_f: usize) -> Result<Vec<Vec<[f64; 2]>>, ForecastError>;
}

/// Limb forecaster over local streams.
pub trait LocalPredictor: Sync {
    fn predict_local(&self, hists: &[LocalStream], t_f: usize) -> Result<Vec<LocalStream>, ForecastError>;
}

impl GlobalPredictor for GlobalForecaster {
    fn predict_global(&self, hists: &[GlobalStream], t_f: usize) -> Result<Vec<Vec<[f64; 2]>>, ForecastError> {
        self.forecast(hists, t_f)
    }
}

impl LocalPredictor for LocalForecaster {
    fn predict_local(&self, hists: &[LocalStream], t_f: usize) -> Result<Vec<LocalStream>, ForecastError> {
        self.forecast(hists, t_f)
    }
}

impl GlobalPredictor for Baseline {
    fn predict_global(&self, hists: &[GlobalStream], t_f: usize) -> Result<Vec<Vec<[f64; 2]>>, ForecastError> {
        hists
            .iter()
            .map(|h| self.forecast_points(&h.anchor, t_f).map_err(ForecastError::from))
            .collect()
    }
}

impl LocalPredictor for Baseline {
    fn predict_local(&self, hists: &[LocalStream], t_f: usize) -> Result<Vec<LocalStream>, ForecastError> {
        hists
            .iter()
            .map(|h| {
                let rows: Vec<Vec<f64>> = (0..h.len()).map(|t| h.flat(t).to_vec()).collect();
                let mut out = LocalStream::from_flat(&self.extrapolate(&rows, t_f)?);
                // Zero velocity reproduces the last frame bit-exactly, rounding included.
                if *self == Baseline::ZeroVelocity {
                    let last = h.len() - 1;
                    out.rounding = vec![h.rounding[last]; t_f];
                    out.confidence = vec![h.confidence[last]; t_f];
                }
                Ok(out)
            })
            .collect()
    }
}

/// A trained (or substituted) set of stage models. Immutable, so one
/// pipeline can serve forecasts from several threads.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    /// `None` feeds raw detections straight to decomposition.
    pub completion: Option<&'a CompletionModel>,
    pub local: &'a dyn LocalPredictor,
    pub global: &'a dyn GlobalPredictor,
    pub t_p: usize,
}

impl Pipeline<'_> {
    /// Forecasts `t_f` poses after the first `t_p` frames of each sequence.
    pub fn forecast(&self, seqs: &[LocomotionSequence], t_f: usize) -> Result<Vec<Vec<Pose>>, ForecastError> {
        let mut globals = Vec::with_capacity(seqs.len());
        let mut locals = Vec::with_capacity(seqs.len());
        for s in seqs {
            if s.len() < self.t_p {
                return Err(ForecastError::at("input")(ForecastError::HistoryLength {
                    expected: self.t_p,
                    got: s.len(),
                }));
            }
            let hist = s.prefix(self.t_p);
            let streams = match self.completion {
                Some(m) => decompose(&m.complete_sequence(&hist)).map_err(|e| ForecastError::at("decompose")(e.into()))?,
                None => decompose_raw(&hist),
            };
            globals.push(streams.global);
            locals.push(streams.local);
        }
        let anchors = self.global.predict_global(&globals, t_f).map_err(ForecastError::at("global"))?;
        let limbs = self.local.predict_local(&locals, t_f).map_err(ForecastError::at("local"))?;
        anchors
            .into_iter()
            .zip(limbs)
            .map(|(a, l)| {
                recombine(&GlobalStream::from_track(a), &l).map_err(|e| ForecastError::at("recombine")(e.into()))
            })
            .collect()
    }
}

/// Single-sequence form of [`Pipeline::forecast`].
pub fn forecast_locomotion(
    seq: &LocomotionSequence,
    completion: Option<&CompletionModel>,
    local: &dyn LocalPredictor,
    global: &dyn GlobalPredictor,
    t_p: usize,
    t_f: usize,
) -> Result<Vec<Pose>, ForecastError> {
    let p = Pipeline {
        completion,
        local,
        global,
        t_p,
    };
    Ok(p.forecast(std::slice::from_ref(seq), t_f)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::zero_velocity;
    use crate::completion::{train_completion, AutoencoderConfig};
    use crate::synth::{generate_dataset, DatasetSpec};

    #[test]
    fn zero_velocity_streams_equal_zero_velocity_on_completed_poses() {
        let data = generate_dataset(&DatasetSpec::new(4, 6, 3, 11)).unwrap();
        let poses: Vec<Pose> = data.iter().flat_map(|s| s.noisy.frames.clone()).collect();
        let cfg = AutoencoderConfig {
            steps: 20,
            ..AutoencoderConfig::default()
        };
        let (cm, _) = train_completion(&poses, data[0].noisy.frame_size, &cfg, 0).unwrap();
        let z = Baseline::ZeroVelocity;
        for s in &data {
            let out = forecast_locomotion(&s.noisy, Some(&cm), &z, &z, 6, 3).unwrap();
            let completed = cm.complete_sequence(&s.noisy.prefix(6));
            let expect = zero_velocity(&completed.frames, 3).unwrap();
            for (a, b) in out.iter().zip(&expect) {
                for (p, q) in a.joints.iter().zip(b.joints) {
                    assert_eq!((p.u, p.v), (q.u, q.v));
                }
            }
        }
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let data = generate_dataset(&DatasetSpec::new(1, 1, 3, 2)).unwrap();
        let c = Baseline::ConstantVelocity;
        let err = forecast_locomotion(&data[0].noisy, None, &c, &c, 1, 3).unwrap_err();
        assert!(matches!(err, ForecastError::Stage { stage: "global", .. }), "{err}");
        let short = data[0].noisy.prefix(1);
        let err = forecast_locomotion(&short, None, &c, &c, 3, 3).unwrap_err();
        assert!(matches!(err, ForecastError::Stage { stage: "input", .. }), "{err}");
    }
}
