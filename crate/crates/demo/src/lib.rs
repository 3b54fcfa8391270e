//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; the page parses it and draws on canvases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use locoforecast::baselines::Baseline;
use locoforecast::pose::{mean_kde, KdeNorm, Pose, SKELETON_EDGES};
use locoforecast::streams::{decompose, decompose_raw, joint_of_local, recombine, LocalStream, LOCAL_JOINTS};
use locoforecast::synth::{chain_prefixes, generate_sample, perturb_chain, DatasetSpec, NoiseConfig, SceneSample, Split, TransformSE3};

pub const T_P: usize = 15;
pub const T_F: usize = 15;

/// Noise sliders of the page.
#[derive(Clone, Copy, Debug)]
pub struct Sliders {
    pub dropout: f64,
    pub jitter_px: f64,
    pub rotation_jitter: f64,
    pub translation_jitter: f64,
}

impl Sliders {
    fn noise(self) -> NoiseConfig {
        NoiseConfig {
            dropout: vec![self.dropout; locoforecast::pose::NUM_JOINTS],
            jitter_sigma_px: self.jitter_px,
            rotation_jitter: self.rotation_jitter,
            translation_jitter: self.translation_jitter,
            ..NoiseConfig::default()
        }
    }
}

fn sample(seed: u64, camera_motion: bool, sliders: Sliders) -> Result<SceneSample, String> {
    let mut spec = DatasetSpec::new(1, T_P, T_F, seed);
    spec.noise = sliders.noise();
    if camera_motion {
        spec.split = Split::CameraMotion;
    }
    generate_sample(&spec, 0).map_err(|e| e.to_string())
}

fn frames(poses: &[Pose]) -> Vec<Vec<[f64; 3]>> {
    poses.iter().map(|p| p.joints.iter().map(|k| [k.u, k.v, k.c]).collect()).collect()
}

#[derive(Serialize)]
struct SceneView {
    width: f64,
    height: f64,
    t_p: usize,
    edges: Vec<(usize, usize)>,
    truth: Vec<Vec<[f64; 3]>>,
    noisy: Vec<Vec<[f64; 3]>>,
    missing_fraction: f64,
}

/// Clean and noisy renderings of one synthetic pedestrian.
pub fn scene_json(seed: u64, camera_motion: bool, sliders: Sliders) -> Result<String, String> {
    let s = sample(seed, camera_motion, sliders)?;
    let joints = s.noisy.frames.iter().flat_map(|p| p.joints.iter());
    let (missing, total) = joints.fold((0usize, 0usize), |(m, n), k| (m + k.is_missing() as usize, n + 1));
    let view = SceneView {
        width: s.truth.frame_size.width,
        height: s.truth.frame_size.height,
        t_p: T_P,
        edges: SKELETON_EDGES.to_vec(),
        truth: frames(&s.truth.frames),
        noisy: frames(&s.noisy.frames),
        missing_fraction: missing as f64 / total as f64,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BaselineCurve {
    name: &'static str,
    /// Mean KDE of the first `h` forecast frames, for `h = 1..=T_F`.
    kde: Vec<f64>,
    forecast: Vec<Vec<[f64; 3]>>,
}

#[derive(Serialize)]
struct StreamsView {
    /// Recombining the decomposed clean sequence gives it back bit for bit.
    exact_roundtrip: bool,
    anchor: Vec<[f64; 2]>,
    /// Anchor-relative offsets of the last history frame.
    offsets: Vec<[f64; 2]>,
    curves: Vec<BaselineCurve>,
}

/// Stream decomposition of the clean sequence plus the three velocity
/// baselines run on either the clean or the noisy history.
pub fn streams_json(seed: u64, camera_motion: bool, sliders: Sliders, noisy_history: bool) -> Result<String, String> {
    let s = sample(seed, camera_motion, sliders)?;
    let pair = decompose(&s.truth).map_err(|e| e.to_string())?;
    let back = recombine(&pair.global, &pair.local).map_err(|e| e.to_string())?;
    let exact_roundtrip = back == s.truth.frames;

    let hist: Vec<Pose> = if noisy_history {
        // Undetected joints keep their anchor-relative offset from the last
        // detection, so baselines see a filled pose instead of (0, 0).
        let raw = decompose_raw(&s.noisy.prefix(T_P));
        let held = hold_missing(&raw.local, &s.noisy.frames[..T_P]);
        recombine(&raw.global, &held).map_err(|e| e.to_string())?
    } else {
        s.truth.frames[..T_P].to_vec()
    };
    let truth = &s.truth.frames[T_P..];
    let mut curves = Vec::new();
    for b in Baseline::ALL {
        let f = b.forecast_poses(&hist, T_F).map_err(|e| e.to_string())?;
        let kde = (1..=T_F)
            .map(|h| mean_kde(&f[..h], &truth[..h], KdeNorm::L2).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        curves.push(BaselineCurve {
            name: b.name(),
            kde,
            forecast: frames(&f),
        });
    }
    let view = StreamsView {
        exact_roundtrip,
        anchor: pair.global.anchor.clone(),
        offsets: pair.local.offsets[T_P - 1].to_vec(),
        curves,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn hold_missing(local: &LocalStream, raw: &[Pose]) -> LocalStream {
    let mut out = local.clone();
    for t in 1..out.len() {
        for i in 0..LOCAL_JOINTS {
            if raw[t].joints[joint_of_local(i)].is_missing() {
                out.offsets[t][i] = out.offsets[t - 1][i];
            }
        }
    }
    out
}

#[derive(Serialize)]
struct DriftView {
    k: Vec<usize>,
    rms_m: Vec<f64>,
    sigma_sqrt_k: Vec<f64>,
}

/// RMS translation drift of chained noisy per-step transforms against the
/// clean chain, over `trials` seeds.
pub fn drift_json(steps: usize, trials: usize, rotation_jitter: f64, translation_jitter: f64, seed: u64) -> Result<String, String> {
    if steps == 0 || trials == 0 {
        return Err("steps and trials must be positive".into());
    }
    let motion = vec![TransformSE3::yaw(0.01, [0.0, 0.0, 0.4]); steps];
    let clean = chain_prefixes(&motion).map_err(|e| e.to_string())?;
    let mut sq = vec![0.0; steps + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let noisy = perturb_chain(&motion, rotation_jitter, translation_jitter, &mut rng).map_err(|e| e.to_string())?;
        for k in 1..=steps {
            let (a, b) = (noisy[k].translation(), clean[k].translation());
            sq[k] += (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
        }
    }
    let view = DriftView {
        k: (1..=steps).collect(),
        rms_m: sq[1..].iter().map(|s| (s / trials as f64).sqrt()).collect(),
        sigma_sqrt_k: (1..=steps).map(|k| translation_jitter * (k as f64).sqrt()).collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scene(seed: u32, camera_motion: bool, dropout: f64, jitter_px: f64, rotation_jitter: f64, translation_jitter: f64) -> Result<String, JsError> {
    let sliders = Sliders {
        dropout,
        jitter_px,
        rotation_jitter,
        translation_jitter,
    };
    js(scene_json(seed as u64, camera_motion, sliders))
}

#[wasm_bindgen]
pub fn streams(
    seed: u32,
    camera_motion: bool,
    dropout: f64,
    jitter_px: f64,
    rotation_jitter: f64,
    translation_jitter: f64,
    noisy_history: bool,
) -> Result<String, JsError> {
    let sliders = Sliders {
        dropout,
        jitter_px,
        rotation_jitter,
        translation_jitter,
    };
    js(streams_json(seed as u64, camera_motion, sliders, noisy_history))
}

#[wasm_bindgen]
pub fn drift(steps: u32, trials: u32, rotation_jitter: f64, translation_jitter: f64, seed: u32) -> Result<String, JsError> {
    js(drift_json(steps as usize, trials as usize, rotation_jitter, translation_jitter, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULTS: Sliders = Sliders {
        dropout: 0.2,
        jitter_px: 3.0,
        rotation_jitter: 0.002,
        translation_jitter: 0.01,
    };

    #[test]
    fn scene_has_all_frames() {
        let v: serde_json::Value = serde_json::from_str(&scene_json(3, false, DEFAULTS).unwrap()).unwrap();
        assert_eq!(v["truth"].as_array().unwrap().len(), T_P + T_F);
        assert_eq!(v["noisy"].as_array().unwrap().len(), T_P + T_F);
        assert_eq!(v["edges"].as_array().unwrap().len(), SKELETON_EDGES.len());
    }

    #[test]
    fn clean_streams_round_trip_and_zero_velocity_starts_low() {
        let v: serde_json::Value = serde_json::from_str(&streams_json(5, true, DEFAULTS, false).unwrap()).unwrap();
        assert_eq!(v["exact_roundtrip"], true);
        let curves = v["curves"].as_array().unwrap();
        assert_eq!(curves.len(), 3);
        for c in curves {
            let kde: Vec<f64> = c["kde"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            assert_eq!(kde.len(), T_F);
            assert!(kde.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    #[test]
    fn noisy_history_is_filled() {
        let v: serde_json::Value = serde_json::from_str(&streams_json(5, false, DEFAULTS, true).unwrap()).unwrap();
        let f = &v["curves"][0]["forecast"][0];
        assert!(f.as_array().unwrap().iter().all(|k| k[0].as_f64().unwrap() != 0.0));
    }

    #[test]
    fn drift_grows_like_sqrt_k() {
        let v: serde_json::Value = serde_json::from_str(&drift_json(20, 400, 0.0, 0.01, 1).unwrap()).unwrap();
        let rms: Vec<f64> = v["rms_m"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let last = rms[19] / (0.01 * 20f64.sqrt());
        assert!((last - 1.0).abs() < 0.15, "{last}");
        assert!(drift_json(0, 10, 0.0, 0.01, 1).is_err());
    }
}
