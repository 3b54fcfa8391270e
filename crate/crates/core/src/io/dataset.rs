//! Line-delimited JSON datasets: one pedestrian per line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pose::{FrameSize, Keypoint, LocomotionSequence, Pose, NUM_JOINTS};
use crate::synth::TransformSE3;

use super::IoError;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub index: usize,
    /// 25 × `[u, v, c]` in BODY-25 order.
    pub keypoints: Vec<[f64; 3]>,
    pub depth: f64,
    /// Row-major `[R | t]` mapping this frame's camera into the first one.
    pub transform: [f64; 12],
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub id: String,
    pub t_p: usize,
    pub t_f: usize,
    pub frames: Vec<FrameRecord>,
}

impl DatasetRecord {
    pub fn from_sequence(id: impl Into<String>, seq: &LocomotionSequence) -> Self {
        let frames = seq
            .frames
            .iter()
            .enumerate()
            .map(|(i, p)| FrameRecord {
                index: i,
                keypoints: p.joints.iter().map(|k| [k.u, k.v, k.c]).collect(),
                depth: seq.anchor_depth[i],
                transform: seq.transforms[i].flatten(),
                width: seq.frame_size.width,
                height: seq.frame_size.height,
            })
            .collect();
        Self {
            schema_version: DATASET_SCHEMA_VERSION,
            id: id.into(),
            t_p: seq.t_p,
            t_f: seq.t_f,
            frames,
        }
    }

    /// Structural checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(format!("schema_version {} (expected {DATASET_SCHEMA_VERSION})", self.schema_version));
        }
        if self.frames.is_empty() {
            return Err("no frames".into());
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.keypoints.len() != NUM_JOINTS {
                return Err(format!("frame {i} has {} keypoints, expected {NUM_JOINTS}", f.keypoints.len()));
            }
            if i > 0 && f.index <= self.frames[i - 1].index {
                return Err(format!("frame indices not strictly increasing at frame {i}"));
            }
            if f.width != self.frames[0].width || f.height != self.frames[0].height {
                return Err(format!("frame {i} changes the frame size"));
            }
        }
        self.to_sequence_unvalidated().validate().map_err(|e| e.to_string())
    }

    fn to_sequence_unvalidated(&self) -> LocomotionSequence {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let mut joints = [Keypoint::MISSING; NUM_JOINTS];
                for (k, p) in joints.iter_mut().zip(&f.keypoints) {
                    *k = Keypoint::new(p[0], p[1], p[2]);
                }
                Pose::new(joints)
            })
            .collect();
        LocomotionSequence {
            frames,
            anchor_depth: self.frames.iter().map(|f| f.depth).collect(),
            transforms: self.frames.iter().map(|f| TransformSE3::from_flat(f.transform)).collect(),
            t_p: self.t_p,
            t_f: self.t_f,
            frame_size: FrameSize {
                width: self.frames[0].width,
                height: self.frames[0].height,
            },
        }
    }

    pub fn to_sequence(&self) -> Result<LocomotionSequence, IoError> {
        self.validate().map_err(IoError::Schema)?;
        Ok(self.to_sequence_unvalidated())
    }
}

/// Forecast for one record, as written by the `forecast` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub schema_version: u32,
    pub id: String,
    pub method: String,
    pub t_p: usize,
    /// `t_f` poses of 25 × `[u, v, c]`.
    pub poses: Vec<Vec<[f64; 3]>>,
}

impl PredictionRecord {
    pub fn new(id: &str, method: &str, t_p: usize, poses: &[Pose]) -> Self {
        Self {
            schema_version: DATASET_SCHEMA_VERSION,
            id: id.to_string(),
            method: method.to_string(),
            t_p,
            poses: poses.iter().map(|p| p.joints.iter().map(|k| [k.u, k.v, k.c]).collect()).collect(),
        }
    }
}

/// Parses dataset text. `origin` names the source in error messages.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Vec<DatasetRecord>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| IoError::Line {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        rec.validate().map_err(bad)?;
        out.push(rec);
    }
    Ok(out)
}

/// Canonical text: one compact JSON object per line, `\n` terminated.
pub fn format_dataset(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("dataset records always serialize"));
        out.push('\n');
    }
    out
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, IoError> {
    let text = fs::read_to_string(path).map_err(IoError::io(path))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), IoError> {
    fs::write(path, format_dataset(records)).map_err(IoError::io(path))
}

/// Loads and converts every record.
pub fn load_sequences(path: &Path) -> Result<(Vec<String>, Vec<LocomotionSequence>), IoError> {
    let recs = load_dataset(path)?;
    let seqs = recs.iter().map(DatasetRecord::to_sequence).collect::<Result<Vec<_>, _>>()?;
    Ok((recs.into_iter().map(|r| r.id).collect(), seqs))
}
