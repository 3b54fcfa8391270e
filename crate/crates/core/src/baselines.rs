//! Velocity baselines. Each one extrapolates every coordinate of the last
//! observed frame; confidences are copied from that frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{Keypoint, Pose, NUM_JOINTS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaselineError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("{baseline:?} needs at least {needed} history frames, got {got}")]
    TooShort { baseline: Baseline, needed: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Last observed frame repeated.
    ZeroVelocity,
    /// Mean velocity over the whole history.
    ConstantVelocity,
    /// Velocity of the last observed step.
    LastObservedVelocity,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::ZeroVelocity, Baseline::ConstantVelocity, Baseline::LastObservedVelocity];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::ZeroVelocity => "zero-velocity",
            Baseline::ConstantVelocity => "constant-velocity",
            Baseline::LastObservedVelocity => "last-observed-velocity",
        }
    }

    pub fn min_history(self) -> usize {
        match self {
            Baseline::ZeroVelocity => 1,
            _ => 2,
        }
    }

    /// Per-coordinate velocity from a history of equal-width frames.
    fn velocity<F: AsRef<[f64]>>(self, hist: &[F]) -> Result<Vec<f64>, BaselineError> {
        let n = hist.len();
        if n == 0 {
            return Err(BaselineError::EmptyHistory);
        }
        if n < self.min_history() {
            return Err(BaselineError::TooShort {
                baseline: self,
                needed: self.min_history(),
                got: n,
            });
        }
        let last = hist[n - 1].as_ref();
        Ok(match self {
            Baseline::ZeroVelocity => vec![0.0; last.len()],
            Baseline::ConstantVelocity => {
                let first = hist[0].as_ref();
                last.iter().zip(first).map(|(l, f)| (l - f) / (n - 1) as f64).collect()
            }
            Baseline::LastObservedVelocity => {
                let prev = hist[n - 2].as_ref();
                last.iter().zip(prev).map(|(l, p)| l - p).collect()
            }
        })
    }

    /// Rolls coordinate vectors forward: frame `k` (1-based) is
    /// `last + k · velocity`.
    pub fn extrapolate<F: AsRef<[f64]>>(self, hist: &[F], t_f: usize) -> Result<Vec<Vec<f64>>, BaselineError> {
        let vel = self.velocity(hist)?;
        let last = hist[hist.len() - 1].as_ref();
        Ok((1..=t_f)
            .map(|k| last.iter().zip(&vel).map(|(x, v)| x + k as f64 * v).collect())
            .collect())
    }

    pub fn forecast_points(self, hist: &[[f64; 2]], t_f: usize) -> Result<Vec<[f64; 2]>, BaselineError> {
        Ok(self.extrapolate(hist, t_f)?.into_iter().map(|r| [r[0], r[1]]).collect())
    }

    pub fn forecast_poses(self, hist: &[Pose], t_f: usize) -> Result<Vec<Pose>, BaselineError> {
        let coords: Vec<Vec<f64>> = hist.iter().map(|p| p.coords().to_vec()).collect();
        let rows = self.extrapolate(&coords, t_f)?;
        let conf = hist[hist.len() - 1].confidences();
        Ok(rows
            .into_iter()
            .map(|r| {
                let mut joints = [Keypoint::MISSING; NUM_JOINTS];
                for (j, k) in joints.iter_mut().enumerate() {
                    *k = Keypoint::new(r[2 * j], r[2 * j + 1], conf[j]);
                }
                Pose::new(joints)
            })
            .collect())
    }
}

pub fn zero_velocity(hist: &[Pose], t_f: usize) -> Result<Vec<Pose>, BaselineError> {
    Baseline::ZeroVelocity.forecast_poses(hist, t_f)
}

pub fn constant_velocity(hist: &[Pose], t_f: usize) -> Result<Vec<Pose>, BaselineError> {
    Baseline::ConstantVelocity.forecast_poses(hist, t_f)
}

pub fn last_observed_velocity(hist: &[Pose], t_f: usize) -> Result<Vec<Pose>, BaselineError> {
    Baseline::LastObservedVelocity.forecast_poses(hist, t_f)
}
