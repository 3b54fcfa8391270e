//! Training/evaluation records: raw detections paired with the model input
//! (completed poses, or the raw poses for the no-completion ablation).

use crate::completion::CompletionModel;
use crate::pose::{FrameSize, LocomotionSequence};
use crate::streams::{decompose, decompose_raw, StreamPair};

use super::ForecastError;

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRecord {
    /// Original detections; targets and loss weights come from here.
    pub raw: LocomotionSequence,
    /// Model input: completed poses, or `raw` when no completion is used.
    pub input: LocomotionSequence,
    pub streams: StreamPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    pub records: Vec<PreparedRecord>,
    pub t_p: usize,
    pub t_f: usize,
    pub frame_size: FrameSize,
}

impl PreparedSet {
    /// Truncates each sequence to `t_p + t_f` frames, completes it when a
    /// model is given, and splits it into streams.
    pub fn new(
        sequences: &[LocomotionSequence],
        completion: Option<&CompletionModel>,
        t_p: usize,
        t_f: usize,
    ) -> Result<Self, ForecastError> {
        let first = sequences
            .first()
            .ok_or_else(|| ForecastError::EmptyTrainingSet("no sequences".into()))?;
        let frames = t_p + t_f;
        let mut records = Vec::with_capacity(sequences.len());
        for (i, s) in sequences.iter().enumerate() {
            if s.len() < frames {
                return Err(ForecastError::HistoryLength {
                    expected: frames,
                    got: s.len(),
                });
            }
            if !s.transforms[0].is_identity(1e-9) {
                return Err(ForecastError::NonIdentityStart { index: i });
            }
            let mut raw = s.prefix(frames);
            raw.t_p = t_p;
            raw.t_f = t_f;
            let (input, streams) = match completion {
                Some(m) => {
                    let c = m.complete_sequence(&raw);
                    let st = decompose(&c).map_err(|e| ForecastError::at("decompose")(e.into()))?;
                    (c, st)
                }
                None => {
                    let st = decompose_raw(&raw);
                    (raw.clone(), st)
                }
            };
            records.push(PreparedRecord { raw, input, streams });
        }
        Ok(Self {
            records,
            t_p,
            t_f,
            frame_size: first.frame_size,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
