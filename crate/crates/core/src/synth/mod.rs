//! Synthetic egocentric scenes and the detector-noise annotator.

mod dataset;
mod noise;
mod scene;
mod transform;

pub use dataset::{generate_dataset, generate_sample, DatasetSpec, SceneManifest, SceneManifestEntry, SceneSample, Split};
pub use noise::{annotate_noisy, per_step_transforms, perturb_chain, NoiseConfig};
pub use scene::{generate_scene, CameraPath, Intrinsics, Scene, SceneSpec, Segments, WalkerConfig};
pub use transform::{chain_prefixes, chain_transforms, TransformSE3, ORTHONORMAL_TOL};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot chain an empty transform list")]
    EmptyChain,
    #[error("transform {index} is not a rotation (error {error:e})")]
    NotOrthonormal { index: usize, error: f64 },
    #[error("non-finite transform value")]
    NonFinite,
    #[error("joint {joint} behind the camera at frame {frame}")]
    BehindCamera { frame: usize, joint: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place a visible pedestrian after {0} attempts")]
    Placement(usize),
}
