//! Detector-noise annotator: keypoint dropout and jitter with a
//! jitter-dependent confidence, relative depth noise, and per-step egomotion
//! noise accumulated by chaining.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::transform::{chain_prefixes, TransformSE3};
use super::SynthError;
use crate::pose::{Keypoint, LocomotionSequence, NUM_JOINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Probability that each joint is dropped (confidence 0, coordinates 0).
    pub dropout: Vec<f64>,
    /// Per-axis keypoint jitter, pixels.
    pub jitter_sigma_px: f64,
    /// Jitter magnitude at which confidence reaches 0.
    pub confidence_cap_px: f64,
    /// Per-axis rotation noise added to each per-step transform, radians.
    pub rotation_jitter: f64,
    /// RMS length of the translation noise added to each per-step transform,
    /// meters (isotropic).
    pub translation_jitter: f64,
    /// Relative depth noise σ; depth is multiplied by `1 + ε`.
    pub depth_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            dropout: vec![0.2; NUM_JOINTS],
            jitter_sigma_px: 3.0,
            confidence_cap_px: 12.0,
            rotation_jitter: 0.002,
            translation_jitter: 0.01,
            depth_sigma: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            dropout: vec![0.0; NUM_JOINTS],
            jitter_sigma_px: 0.0,
            confidence_cap_px: 0.0,
            rotation_jitter: 0.0,
            translation_jitter: 0.0,
            depth_sigma: 0.0,
        }
    }

    pub fn with_uniform_dropout(mut self, p: f64) -> Self {
        self.dropout = vec![p; NUM_JOINTS];
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.dropout.len() != NUM_JOINTS {
            return Err(SynthError::InvalidConfig(format!(
                "dropout needs {NUM_JOINTS} probabilities, got {}",
                self.dropout.len()
            )));
        }
        if self.dropout.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SynthError::InvalidConfig("dropout probabilities must lie in [0, 1]".into()));
        }
        let sigmas = [
            self.jitter_sigma_px,
            self.confidence_cap_px,
            self.rotation_jitter,
            self.translation_jitter,
            self.depth_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(SynthError::InvalidConfig("noise scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Confidence assigned to a detection displaced by `jitter` pixels.
    pub fn confidence_for(&self, jitter: f64) -> f64 {
        if jitter == 0.0 {
            1.0
        } else if self.confidence_cap_px == 0.0 {
            0.0
        } else {
            (1.0 - jitter / self.confidence_cap_px).clamp(0.0, 1.0)
        }
    }
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

/// Per-step transforms `T_α⁻¹ · T_{α+1}` recovered from chained ones.
pub fn per_step_transforms(chained: &[TransformSE3]) -> Vec<TransformSE3> {
    chained
        .windows(2)
        .map(|w| w[0].inverse().compose(&w[1]))
        .collect()
}

/// Perturbs each per-step transform and re-chains them, so drift grows with
/// the chain length.
pub fn perturb_chain(
    per_step: &[TransformSE3],
    rotation_jitter: f64,
    translation_jitter: f64,
    rng: &mut impl Rng,
) -> Result<Vec<TransformSE3>, SynthError> {
    let rot = normal(rotation_jitter);
    let trans = normal(translation_jitter / 3f64.sqrt());
    let noisy: Vec<TransformSE3> = per_step
        .iter()
        .map(|p| {
            let mut w = [0.0; 3];
            let mut dt = [0.0; 3];
            if let Some(d) = &rot {
                w = w.map(|_| d.sample(rng));
            }
            if let Some(d) = &trans {
                dt = dt.map(|_| d.sample(rng));
            }
            let t = p.translation();
            let rot_noise = TransformSE3::from_axis_angle(w, [0.0; 3]);
            let r = p.compose(&rot_noise).rotation();
            TransformSE3::from_rt(r, [t[0] + dt[0], t[1] + dt[1], t[2] + dt[2]])
        })
        .collect();
    chain_prefixes(&noisy)
}

/// Applies the detector-noise model to a ground-truth sequence. An all-zero
/// config returns the input unchanged.
pub fn annotate_noisy(gt: &LocomotionSequence, noise: &NoiseConfig, seed: u64) -> Result<LocomotionSequence, SynthError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = gt.clone();
    let jitter = normal(noise.jitter_sigma_px);
    for pose in &mut out.frames {
        for (j, k) in pose.joints.iter_mut().enumerate() {
            let drop = noise.dropout[j] > 0.0 && rng.random::<f64>() < noise.dropout[j];
            if drop {
                *k = Keypoint::MISSING;
                continue;
            }
            if let Some(d) = &jitter {
                let du = d.sample(&mut rng);
                let dv = d.sample(&mut rng);
                let c = noise.confidence_for(du.hypot(dv));
                *k = Keypoint::new(k.u + du, k.v + dv, (k.c * c).clamp(0.0, 1.0));
                if k.c == 0.0 {
                    *k = Keypoint::MISSING;
                }
            }
        }
    }
    if let Some(d) = normal(noise.depth_sigma) {
        for z in &mut out.anchor_depth {
            let eps: f64 = d.sample(&mut rng);
            *z *= (1.0 + eps).max(0.1);
        }
    }
    if noise.rotation_jitter > 0.0 || noise.translation_jitter > 0.0 {
        let steps = per_step_transforms(&gt.transforms);
        out.transforms = perturb_chain(&steps, noise.rotation_jitter, noise.translation_jitter, &mut rng)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::{generate_scene, CameraPath, Intrinsics, SceneSpec, WalkerConfig};

    fn scene() -> LocomotionSequence {
        let spec = SceneSpec {
            walker: WalkerConfig::default(),
            camera: CameraPath {
                forward_speed: 4.0,
                yaw_rate: 0.05,
                ..CameraPath::default()
            },
            intrinsics: Intrinsics::default(),
            frames: 30,
            fps: 30.0,
        };
        generate_scene(&spec, 15, 2).unwrap().sequence
    }

    #[test]
    fn zero_noise_is_identity() {
        let gt = scene();
        let out = annotate_noisy(&gt, &NoiseConfig::zero(), 77).unwrap();
        assert_eq!(out, gt);
    }

    #[test]
    fn dropout_rate_within_binomial_bounds() {
        let gt = scene();
        let noise = NoiseConfig {
            jitter_sigma_px: 0.0,
            ..NoiseConfig::zero().with_uniform_dropout(0.3)
        };
        let mut dropped = 0usize;
        let mut total = 0usize;
        let mut seed = 0;
        while total < 10_000 {
            let out = annotate_noisy(&gt, &noise, seed).unwrap();
            for p in &out.frames {
                for k in &p.joints {
                    total += 1;
                    if k.is_missing() {
                        assert_eq!((k.u, k.v), (0.0, 0.0));
                        dropped += 1;
                    }
                }
            }
            seed += 1;
        }
        let n = total as f64;
        let sd = (n * 0.3 * 0.7).sqrt();
        assert!((dropped as f64 - 0.3 * n).abs() <= 3.0 * sd, "{dropped}/{total}");
    }

    #[test]
    fn confidence_tracks_jitter() {
        let noise = NoiseConfig::default();
        assert_eq!(noise.confidence_for(0.0), 1.0);
        assert_eq!(noise.confidence_for(6.0), 0.5);
        assert_eq!(noise.confidence_for(100.0), 0.0);
    }

    #[test]
    fn seed_determinism() {
        let gt = scene();
        let a = annotate_noisy(&gt, &NoiseConfig::default(), 5).unwrap();
        let b = annotate_noisy(&gt, &NoiseConfig::default(), 5).unwrap();
        let c = annotate_noisy(&gt, &NoiseConfig::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn per_step_round_trip() {
        let gt = scene();
        let steps = per_step_transforms(&gt.transforms);
        let rechained = chain_prefixes(&steps).unwrap();
        for (a, b) in rechained.iter().zip(&gt.transforms) {
            assert!(a.max_abs_diff(b) < 1e-9);
        }
    }
}
