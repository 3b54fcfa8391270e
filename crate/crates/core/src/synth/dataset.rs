//! Seeded dataset generation: random walkers and camera paths, each scene
//! with its own random stream so generation order does not matter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{annotate_noisy, NoiseConfig};
use super::scene::{generate_scene, CameraPath, Intrinsics, SceneSpec, WalkerConfig};
use super::SynthError;
use crate::pose::LocomotionSequence;

const MAX_ATTEMPTS: usize = 200;

/// Scene distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// Mixed pedestrians, slow-to-moderate vehicle motion.
    #[default]
    Default,
    /// Fast forward driving towards the pedestrian with yaw, so image motion
    /// is dominated by egomotion and perspective growth.
    CameraMotion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    pub t_p: usize,
    pub t_f: usize,
    pub seed: u64,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub intrinsics: Intrinsics,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn default_fps() -> f64 {
    30.0
}

impl DatasetSpec {
    pub fn new(count: usize, t_p: usize, t_f: usize, seed: u64) -> Self {
        Self {
            count,
            t_p,
            t_f,
            seed,
            split: Split::Default,
            noise: NoiseConfig::default(),
            intrinsics: Intrinsics::default(),
            fps: default_fps(),
        }
    }
}

/// One generated pedestrian: clean ground truth and its noisy annotation,
/// plus everything needed to regenerate both.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub truth: LocomotionSequence,
    pub noisy: LocomotionSequence,
    pub scene: SceneSpec,
    pub scene_seed: u64,
    pub noise_seed: u64,
}

fn sample_spec(split: Split, frames: usize, spec: &DatasetSpec, rng: &mut impl Rng) -> SceneSpec {
    let mut walker = WalkerConfig {
        speed: rng.random_range(0.6..1.8),
        heading: rng.random_range(0.0..2.0 * PI),
        start: [rng.random_range(-4.0..4.0), rng.random_range(6.0..18.0)],
        stride_hz: rng.random_range(0.75..1.1),
        arm_swing: rng.random_range(0.15..0.5),
        leg_swing: rng.random_range(0.25..0.5),
        knee_flex: rng.random_range(0.3..0.8),
        ..WalkerConfig::default()
    };
    walker.segments = walker.segments.scaled(rng.random_range(0.88..1.12));
    let camera = match split {
        Split::Default => CameraPath {
            forward_speed: rng.random_range(0.0..5.0),
            acceleration: rng.random_range(-0.5..0.5),
            lateral_speed: rng.random_range(-0.2..0.2),
            yaw_rate: rng.random_range(-0.08..0.08),
            ..CameraPath::default()
        },
        Split::CameraMotion => {
            walker.start = [rng.random_range(-3.0..3.0), rng.random_range(22.0..32.0)];
            CameraPath {
                forward_speed: rng.random_range(7.0..11.0),
                acceleration: rng.random_range(0.0..2.0),
                lateral_speed: rng.random_range(-0.3..0.3),
                yaw_rate: rng.random_range(-0.12..0.12),
                ..CameraPath::default()
            }
        }
    };
    SceneSpec {
        walker,
        camera,
        intrinsics: spec.intrinsics,
        frames,
        fps: spec.fps,
    }
}

fn fully_visible(seq: &LocomotionSequence) -> bool {
    let (w, h) = (seq.frame_size.width, seq.frame_size.height);
    seq.frames
        .iter()
        .flat_map(|p| p.joints.iter())
        .all(|k| k.u >= 0.0 && k.u < w && k.v >= 0.0 && k.v < h)
}

/// Draws scene `index` of the dataset from its private stream.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<SceneSample, SynthError> {
    let frames = spec.t_p + spec.t_f;
    if frames == 0 {
        return Err(SynthError::InvalidConfig("t_p + t_f must be positive".into()));
    }
    spec.noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    for _ in 0..MAX_ATTEMPTS {
        let scene_spec = sample_spec(spec.split, frames, spec, &mut rng);
        let scene_seed: u64 = rng.random();
        let noise_seed: u64 = rng.random();
        let scene = match generate_scene(&scene_spec, spec.t_p, scene_seed) {
            Ok(s) => s,
            Err(SynthError::BehindCamera { .. }) => continue,
            Err(e) => return Err(e),
        };
        if !fully_visible(&scene.sequence) {
            continue;
        }
        let noisy = annotate_noisy(&scene.sequence, &spec.noise, noise_seed)?;
        return Ok(SceneSample {
            id: format!("ped-{:016x}-{index:05}", spec.seed),
            truth: scene.sequence,
            noisy,
            scene: scene_spec,
            scene_seed,
            noise_seed,
        });
    }
    Err(SynthError::Placement(MAX_ATTEMPTS))
}

/// Generates `spec.count` scenes; output order and content are independent of
/// thread count.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SceneSample>, SynthError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..spec.count).into_par_iter().map(|i| generate_sample(spec, i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..spec.count).map(|i| generate_sample(spec, i)).collect()
    }
}

/// Sidecar describing how a dataset was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub schema_version: u32,
    pub spec: DatasetSpec,
    pub scenes: Vec<SceneManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifestEntry {
    pub id: String,
    pub scene_seed: u64,
    pub noise_seed: u64,
    pub scene: SceneSpec,
}

impl SceneManifest {
    pub fn new(spec: &DatasetSpec, samples: &[SceneSample]) -> Self {
        Self {
            schema_version: 1,
            spec: spec.clone(),
            scenes: samples
                .iter()
                .map(|s| SceneManifestEntry {
                    id: s.id.clone(),
                    scene_seed: s.scene_seed,
                    noise_seed: s.noise_seed,
                    scene: s.scene,
                })
                .collect(),
        }
    }

    /// Rebuilds every sample from the recorded configs and seeds.
    pub fn regenerate(&self) -> Result<Vec<SceneSample>, SynthError> {
        self.scenes
            .iter()
            .map(|e| {
                let truth = generate_scene(&e.scene, self.spec.t_p, e.scene_seed)?.sequence;
                let noisy = annotate_noisy(&truth, &self.spec.noise, e.noise_seed)?;
                Ok(SceneSample {
                    id: e.id.clone(),
                    truth,
                    noisy,
                    scene: e.scene,
                    scene_seed: e.scene_seed,
                    noise_seed: e.noise_seed,
                })
            })
            .collect()
    }
}
