//! Keypoints, poses, pose sequences and the displacement-error metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::TransformSE3;

/// Joints per pose (BODY-25 ordering).
pub const NUM_JOINTS: usize = 25;
/// The neck joint, used as the anchor of the global stream.
pub const ANCHOR: usize = 1;
/// Default confidence threshold.
pub const DEFAULT_ALPHA_C: f64 = 0.25;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow", "LWrist", "MidHip", "RHip",
    "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "REye", "LEye", "REar", "LEar", "LBigToe", "LSmallToe",
    "LHeel", "RBigToe", "RSmallToe", "RHeel",
];

/// BODY-25 skeleton edges.
pub const SKELETON_EDGES: [(usize, usize); 24] = [
    (1, 8),
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (8, 9),
    (9, 10),
    (10, 11),
    (8, 12),
    (12, 13),
    (13, 14),
    (1, 0),
    (0, 15),
    (15, 17),
    (0, 16),
    (16, 18),
    (14, 19),
    (19, 20),
    (14, 21),
    (11, 22),
    (22, 23),
    (11, 24),
];

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("sequence length mismatch: {pred} predicted vs {truth} true frames")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("joint count mismatch in frame {frame}: {pred} vs {truth}")]
    JointMismatch { frame: usize, pred: usize, truth: usize },
    #[error("empty sequence")]
    Empty,
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub c: f64,
}

impl Keypoint {
    pub const MISSING: Keypoint = Keypoint { u: 0.0, v: 0.0, c: 0.0 };

    pub fn new(u: f64, v: f64, c: f64) -> Self {
        Self { u, v, c }
    }

    pub fn is_missing(&self) -> bool {
        self.c == 0.0
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.u, self.v]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: [Keypoint; NUM_JOINTS],
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            joints: [Keypoint::MISSING; NUM_JOINTS],
        }
    }
}

impl Pose {
    pub fn new(joints: [Keypoint; NUM_JOINTS]) -> Self {
        Self { joints }
    }

    pub fn from_xy(points: &[[f64; 2]], confidence: f64) -> Self {
        assert_eq!(points.len(), NUM_JOINTS);
        let mut p = Pose::default();
        for (k, xy) in p.joints.iter_mut().zip(points) {
            *k = Keypoint::new(xy[0], xy[1], confidence);
        }
        p
    }

    pub fn anchor(&self) -> Keypoint {
        self.joints[ANCHOR]
    }

    /// All joints strictly above `alpha_c`.
    pub fn is_confident(&self, alpha_c: f64) -> bool {
        self.joints.iter().all(|k| k.c > alpha_c)
    }

    pub fn has_missing(&self) -> bool {
        self.joints.iter().any(Keypoint::is_missing)
    }

    pub fn translated(&self, du: f64, dv: f64) -> Self {
        let mut p = *self;
        for k in &mut p.joints {
            k.u += du;
            k.v += dv;
        }
        p
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut p = *self;
        for k in &mut p.joints {
            k.u *= s;
            k.v *= s;
        }
        p
    }

    /// `[u0, v0, u1, v1, ...]`.
    pub fn coords(&self) -> [f64; 2 * NUM_JOINTS] {
        let mut out = [0.0; 2 * NUM_JOINTS];
        for (i, k) in self.joints.iter().enumerate() {
            out[2 * i] = k.u;
            out[2 * i + 1] = k.v;
        }
        out
    }

    pub fn confidences(&self) -> [f64; NUM_JOINTS] {
        let mut out = [0.0; NUM_JOINTS];
        for (o, k) in out.iter_mut().zip(&self.joints) {
            *o = k.c;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: f64,
    pub height: f64,
}

impl Default for FrameSize {
    fn default() -> Self {
        Self {
            width: 1280.0,
            height: 720.0,
        }
    }
}

/// One pedestrian's poses with per-frame anchor depth and the chained camera
/// transform from the first frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocomotionSequence {
    pub frames: Vec<Pose>,
    pub anchor_depth: Vec<f64>,
    pub transforms: Vec<TransformSE3>,
    pub t_p: usize,
    pub t_f: usize,
    pub frame_size: FrameSize,
}

impl LocomotionSequence {
    /// Validates lengths, depths, and that `transforms[0]` is the identity.
    pub fn new(
        frames: Vec<Pose>,
        anchor_depth: Vec<f64>,
        transforms: Vec<TransformSE3>,
        t_p: usize,
        t_f: usize,
        frame_size: FrameSize,
    ) -> Result<Self, PoseError> {
        let seq = Self {
            frames,
            anchor_depth,
            transforms,
            t_p,
            t_f,
            frame_size,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let n = self.frames.len();
        if n == 0 {
            return Err(PoseError::Empty);
        }
        if self.anchor_depth.len() != n || self.transforms.len() != n {
            return Err(PoseError::InvalidSequence(format!(
                "{n} frames but {} depths and {} transforms",
                self.anchor_depth.len(),
                self.transforms.len()
            )));
        }
        if let Some(i) = self.anchor_depth.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(PoseError::InvalidSequence(format!("non-positive depth at frame {i}")));
        }
        if !self.transforms[0].is_identity(1e-9) {
            return Err(PoseError::InvalidSequence("first transform is not the identity".into()));
        }
        for (i, p) in self.frames.iter().enumerate() {
            if p.joints.iter().any(|k| !(0.0..=1.0).contains(&k.c) || !k.u.is_finite() || !k.v.is_finite()) {
                return Err(PoseError::InvalidSequence(format!("bad keypoint in frame {i}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// True when the frame count equals `t_p + t_f`.
    pub fn is_training_record(&self) -> bool {
        self.frames.len() == self.t_p + self.t_f
    }

    pub fn history(&self) -> &[Pose] {
        &self.frames[..self.t_p.min(self.frames.len())]
    }

    pub fn future(&self) -> &[Pose] {
        let start = self.t_p.min(self.frames.len());
        let end = (self.t_p + self.t_f).min(self.frames.len());
        &self.frames[start..end]
    }

    /// The first `len` frames (with depths and transforms) as a new sequence.
    pub fn prefix(&self, len: usize) -> Self {
        Self {
            frames: self.frames[..len].to_vec(),
            anchor_depth: self.anchor_depth[..len].to_vec(),
            transforms: self.transforms[..len].to_vec(),
            t_p: self.t_p.min(len),
            t_f: len.saturating_sub(self.t_p),
            frame_size: self.frame_size,
        }
    }
}

/// Keeps the poses whose 25 confidences are all strictly above `alpha_c`.
pub fn confidence_filter(poses: &[Pose], alpha_c: f64) -> Vec<Pose> {
    poses.iter().filter(|p| p.is_confident(alpha_c)).copied().collect()
}

/// Per-keypoint distance used by the displacement metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdeNorm {
    /// Euclidean distance per keypoint.
    #[default]
    L2,
    /// Manhattan distance per keypoint.
    L1,
}

impl KdeNorm {
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let du = a[0] - b[0];
        let dv = a[1] - b[1];
        match self {
            KdeNorm::L2 => du.hypot(dv),
            KdeNorm::L1 => du.abs() + dv.abs(),
        }
    }
}

/// Keypoint displacement error over point tracks: per frame, the summed
/// distance over points; averaged over frames.
pub fn kde_tracks<P: AsRef<[[f64; 2]]>>(pred: &[P], truth: &[P], norm: KdeNorm) -> Result<f64, PoseError> {
    if pred.len() != truth.len() {
        return Err(PoseError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(PoseError::Empty);
    }
    let mut total = 0.0;
    for (frame, (p, t)) in pred.iter().zip(truth).enumerate() {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != t.len() {
            return Err(PoseError::JointMismatch {
                frame,
                pred: p.len(),
                truth: t.len(),
            });
        }
        total += p.iter().zip(t).map(|(a, b)| norm.distance(*a, *b)).sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

fn pose_points(poses: &[Pose]) -> Vec<[[f64; 2]; NUM_JOINTS]> {
    poses.iter().map(|p| p.joints.map(|k| k.xy())).collect()
}

/// KDE over full poses, summed over the 25 joints and averaged over frames.
pub fn kde(pred: &[Pose], truth: &[Pose], norm: KdeNorm) -> Result<f64, PoseError> {
    kde_tracks(&pose_points(pred), &pose_points(truth), norm)
}

/// KDE divided by the joint count.
pub fn mean_kde(pred: &[Pose], truth: &[Pose], norm: KdeNorm) -> Result<f64, PoseError> {
    Ok(kde(pred, truth, norm)? / NUM_JOINTS as f64)
}

/// Global-stream KDE (a single point per frame, so KDE equals Mean KDE).
pub fn kde_anchor(pred: &[[f64; 2]], truth: &[[f64; 2]], norm: KdeNorm) -> Result<f64, PoseError> {
    let p: Vec<[[f64; 2]; 1]> = pred.iter().map(|x| [*x]).collect();
    let t: Vec<[[f64; 2]; 1]> = truth.iter().map(|x| [*x]).collect();
    kde_tracks(&p, &t, norm)
}
