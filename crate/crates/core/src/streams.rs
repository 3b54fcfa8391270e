//! Global/local stream decomposition and its exact inverse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{Keypoint, LocomotionSequence, Pose, ANCHOR, NUM_JOINTS};
use crate::synth::TransformSE3;

/// Joints in the local stream (all but the anchor).
pub const LOCAL_JOINTS: usize = NUM_JOINTS - 1;
/// Width of one flattened local frame.
pub const LOCAL_DIM: usize = 2 * LOCAL_JOINTS;

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("joint {joint} missing at frame {frame}; complete the sequence first")]
    MissingJoint { frame: usize, joint: usize },
    #[error("frame count mismatch: global {global}, local {local}")]
    LengthMismatch { global: usize, local: usize },
}

/// Anchor track plus the per-frame context the global forecaster consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStream {
    pub anchor: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
    pub transforms: Vec<TransformSE3>,
    pub confidence: Vec<f64>,
}

impl GlobalStream {
    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    /// A track with no depth or camera context (unit depth, identity
    /// transforms, full confidence).
    pub fn from_track(anchor: Vec<[f64; 2]>) -> Self {
        let n = anchor.len();
        Self {
            anchor,
            depth: vec![1.0; n],
            transforms: vec![TransformSE3::IDENTITY; n],
            confidence: vec![1.0; n],
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            anchor: self.anchor[range.clone()].to_vec(),
            depth: self.depth[range.clone()].to_vec(),
            transforms: self.transforms[range.clone()].to_vec(),
            confidence: self.confidence[range].to_vec(),
        }
    }
}

/// Anchor-relative offsets of the 24 non-anchor joints, in pixels.
///
/// `rounding` holds the exact rounding error of each subtraction, so that
/// recombination reproduces the source coordinates bit-for-bit. Forecast
/// streams leave it at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalStream {
    pub offsets: Vec<[[f64; 2]; LOCAL_JOINTS]>,
    pub rounding: Vec<[[f64; 2]; LOCAL_JOINTS]>,
    pub confidence: Vec<[f64; LOCAL_JOINTS]>,
}

impl LocalStream {
    pub fn from_offsets(offsets: Vec<[[f64; 2]; LOCAL_JOINTS]>) -> Self {
        let n = offsets.len();
        Self {
            offsets,
            rounding: vec![[[0.0; 2]; LOCAL_JOINTS]; n],
            confidence: vec![[1.0; LOCAL_JOINTS]; n],
        }
    }

    /// Builds a stream from flattened `[LOCAL_DIM]` rows.
    pub fn from_flat(rows: &[Vec<f64>]) -> Self {
        Self::from_offsets(
            rows.iter()
                .map(|r| {
                    let mut o = [[0.0; 2]; LOCAL_JOINTS];
                    for (i, p) in o.iter_mut().enumerate() {
                        *p = [r[2 * i], r[2 * i + 1]];
                    }
                    o
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Frame `t` as `[u₀, v₀, u₂, v₂, …]` (anchor skipped).
    pub fn flat(&self, t: usize) -> [f64; LOCAL_DIM] {
        let mut out = [0.0; LOCAL_DIM];
        for (i, p) in self.offsets[t].iter().enumerate() {
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        out
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            offsets: self.offsets[range.clone()].to_vec(),
            rounding: self.rounding[range.clone()].to_vec(),
            confidence: self.confidence[range].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamPair {
    pub global: GlobalStream,
    pub local: LocalStream,
}

/// Index of pose joint `j` in the local stream; `None` for the anchor.
pub fn local_index(j: usize) -> Option<usize> {
    match j {
        ANCHOR => None,
        j if j < ANCHOR => Some(j),
        j => Some(j - 1),
    }
}

/// Pose joint held at local index `i`.
pub fn joint_of_local(i: usize) -> usize {
    if i < ANCHOR {
        i
    } else {
        i + 1
    }
}

// Error-free transformation: a + b == s + e exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Splits a completed sequence into its global and local streams.
pub fn decompose(seq: &LocomotionSequence) -> Result<StreamPair, StreamError> {
    for (t, p) in seq.frames.iter().enumerate() {
        if let Some(j) = p.joints.iter().position(Keypoint::is_missing) {
            return Err(StreamError::MissingJoint { frame: t, joint: j });
        }
    }
    Ok(decompose_unchecked(seq))
}

/// [`decompose`] without the completeness check: missing joints enter the
/// local stream as offsets of the point (0, 0).
pub fn decompose_unchecked(seq: &LocomotionSequence) -> StreamPair {
    let n = seq.len();
    let mut global = GlobalStream {
        anchor: Vec::with_capacity(n),
        depth: seq.anchor_depth.clone(),
        transforms: seq.transforms.clone(),
        confidence: Vec::with_capacity(n),
    };
    let mut local = LocalStream {
        offsets: Vec::with_capacity(n),
        rounding: Vec::with_capacity(n),
        confidence: Vec::with_capacity(n),
    };
    for p in &seq.frames {
        let a = p.anchor();
        global.anchor.push([a.u, a.v]);
        global.confidence.push(a.c);
        let mut off = [[0.0; 2]; LOCAL_JOINTS];
        let mut err = [[0.0; 2]; LOCAL_JOINTS];
        let mut conf = [0.0; LOCAL_JOINTS];
        for (i, ((o, e), c)) in off.iter_mut().zip(err.iter_mut()).zip(conf.iter_mut()).enumerate() {
            let k = p.joints[joint_of_local(i)];
            let (du, eu) = two_sum(k.u, -a.u);
            let (dv, ev) = two_sum(k.v, -a.v);
            *o = [du, dv];
            *e = [eu, ev];
            *c = k.c;
        }
        local.offsets.push(off);
        local.rounding.push(err);
        local.confidence.push(conf);
    }
    StreamPair { global, local }
}

/// Decomposition of raw detections, for running without completion.
///
/// A missing anchor is held at its last detected position (the first
/// detected one before any detection), keeping confidence 0. A missing joint
/// gets offset (0, 0) with confidence 0. Detected joints recombine exactly.
pub fn decompose_raw(seq: &LocomotionSequence) -> StreamPair {
    let first = seq.frames.iter().map(Pose::anchor).find(|a| !a.is_missing());
    let mut held = first.map_or([0.0, 0.0], |a| a.xy());
    let mut out = decompose_unchecked(seq);
    for (t, p) in seq.frames.iter().enumerate() {
        let a = p.anchor();
        if !a.is_missing() {
            held = a.xy();
            continue;
        }
        out.global.anchor[t] = held;
        let local = &mut out.local;
        for (i, k) in local_joints(p).enumerate() {
            let (du, eu) = two_sum(k.u, -held[0]);
            let (dv, ev) = two_sum(k.v, -held[1]);
            local.offsets[t][i] = [du, dv];
            local.rounding[t][i] = [eu, ev];
        }
    }
    for (t, p) in seq.frames.iter().enumerate() {
        for (i, k) in local_joints(p).enumerate() {
            if k.is_missing() {
                out.local.offsets[t][i] = [0.0, 0.0];
                out.local.rounding[t][i] = [0.0, 0.0];
            }
        }
    }
    out
}

fn local_joints(p: &Pose) -> impl Iterator<Item = Keypoint> + '_ {
    (0..LOCAL_JOINTS).map(|i| p.joints[joint_of_local(i)])
}

fn add_exact(anchor: f64, offset: f64, rounding: f64) -> f64 {
    if rounding == 0.0 {
        return anchor + offset;
    }
    let (s, t) = two_sum(anchor, offset);
    s + (t + rounding)
}

/// Inverse of [`decompose`]: the anchor comes from the global stream and
/// every other joint is the anchor plus its offset. Confidences are taken
/// from the streams.
pub fn recombine(global: &GlobalStream, local: &LocalStream) -> Result<Vec<Pose>, StreamError> {
    if global.len() != local.len() {
        return Err(StreamError::LengthMismatch {
            global: global.len(),
            local: local.len(),
        });
    }
    let poses = (0..global.len())
        .map(|t| {
            let [au, av] = global.anchor[t];
            let mut pose = Pose::default();
            pose.joints[ANCHOR] = Keypoint::new(au, av, global.confidence.get(t).copied().unwrap_or(1.0));
            for i in 0..LOCAL_JOINTS {
                let [du, dv] = local.offsets[t][i];
                let [eu, ev] = local.rounding.get(t).map_or([0.0; 2], |r| r[i]);
                let c = local.confidence.get(t).map_or(1.0, |c| c[i]);
                pose.joints[joint_of_local(i)] = Keypoint::new(add_exact(au, du, eu), add_exact(av, dv, ev), c);
            }
            pose
        })
        .collect();
    Ok(poses)
}
