//! Kinematic walker and pinhole camera.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transform::{chain_prefixes, TransformSE3};
use super::SynthError;
use crate::pose::{FrameSize, Keypoint, LocomotionSequence, Pose, ANCHOR, NUM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 800.0,
            fy: 800.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280.0,
            height: 720.0,
        }
    }
}

impl Intrinsics {
    /// Camera coordinates → (u, v, depth).
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy, p[2])
    }

    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth]
    }

    pub fn frame_size(&self) -> FrameSize {
        FrameSize {
            width: self.width,
            height: self.height,
        }
    }
}

/// Body segment lengths in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segments {
    pub torso: f64,
    pub neck: f64,
    pub shoulder_half_width: f64,
    pub hip_half_width: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub foot: f64,
}

impl Default for Segments {
    fn default() -> Self {
        Self {
            torso: 0.52,
            neck: 0.2,
            shoulder_half_width: 0.19,
            hip_half_width: 0.1,
            upper_arm: 0.3,
            forearm: 0.27,
            thigh: 0.44,
            shin: 0.43,
            foot: 0.2,
        }
    }
}

impl Segments {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            torso: self.torso * s,
            neck: self.neck * s,
            shoulder_half_width: self.shoulder_half_width * s,
            hip_half_width: self.hip_half_width * s,
            upper_arm: self.upper_arm * s,
            forearm: self.forearm * s,
            thigh: self.thigh * s,
            shin: self.shin * s,
            foot: self.foot * s,
        }
    }

    fn all_positive(&self) -> bool {
        [
            self.torso,
            self.neck,
            self.shoulder_half_width,
            self.hip_half_width,
            self.upper_arm,
            self.forearm,
            self.thigh,
            self.shin,
            self.foot,
        ]
        .iter()
        .all(|&x| x > 0.0)
    }
}

/// Pedestrian walking on the ground plane with sinusoidal limb swing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerConfig {
    /// Root speed along `heading`, m/s.
    pub speed: f64,
    /// Walking direction in the ground plane; 0 walks away from the first
    /// camera (+z), π/2 walks to its right (+x).
    pub heading: f64,
    /// Root start `[x, z]` on the ground plane, world meters.
    pub start: [f64; 2],
    /// Gait cycles per second.
    pub stride_hz: f64,
    /// Peak arm swing, radians.
    pub arm_swing: f64,
    /// Peak leg swing, radians.
    pub leg_swing: f64,
    /// Peak knee flexion, radians.
    pub knee_flex: f64,
    pub segments: Segments,
}

impl Default for WalkerConfig {
    fn default() -> Self {
        Self {
            speed: 1.3,
            heading: PI / 2.0,
            start: [-2.0, 12.0],
            stride_hz: 0.9,
            arm_swing: 0.35,
            leg_swing: 0.4,
            knee_flex: 0.6,
            segments: Segments::default(),
        }
    }
}

impl WalkerConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.segments.all_positive() {
            return Err(SynthError::InvalidConfig("segment lengths must be positive".into()));
        }
        if !(self.stride_hz > 0.0) {
            return Err(SynthError::InvalidConfig("stride frequency must be positive".into()));
        }
        if self.speed < 0.0 || !self.speed.is_finite() {
            return Err(SynthError::InvalidConfig("speed must be non-negative".into()));
        }
        Ok(())
    }

    fn hip_height(&self) -> f64 {
        self.segments.thigh + self.segments.shin + 0.08 * self.segments.thigh / 0.44
    }

    /// World positions of the 25 joints at time `t` (seconds). World axes
    /// match the first camera: x right, y down, z forward, with the ground
    /// plane at `y = camera_height`.
    pub fn joints_at(&self, t: f64, phase: f64, camera_height: f64) -> [[f64; 3]; NUM_JOINTS] {
        let s = &self.segments;
        let w = 2.0 * PI * self.stride_hz * t + phase;
        let leg_r = self.leg_swing * w.sin();
        let leg_l = -leg_r;
        let arm_r = -self.arm_swing * w.sin();
        let arm_l = -arm_r;
        // knee bends during the swing phase of each leg
        let flex_r = self.knee_flex * (0.5 + 0.5 * (w + PI / 2.0).sin()).powi(2);
        let flex_l = self.knee_flex * (0.5 + 0.5 * (w - PI / 2.0).sin()).powi(2);
        let bob = 0.05 * self.leg_swing * (2.0 * w).cos();

        // Body frame: x' right, y' down, z' along the heading; origin MidHip.
        let mut b = [[0.0f64; 3]; NUM_JOINTS];
        let down = |angle: f64, len: f64| [0.0, len * angle.cos(), len * angle.sin()];
        let add = |a: [f64; 3], d: [f64; 3]| [a[0] + d[0], a[1] + d[1], a[2] + d[2]];

        let neck = [0.0, -s.torso, 0.0];
        b[8] = [0.0, 0.0, 0.0];
        b[1] = neck;
        b[0] = add(neck, [0.0, -s.neck, 0.08]);
        b[15] = add(b[0], [s.neck * 0.18, -s.neck * 0.2, -0.01]);
        b[16] = add(b[0], [-s.neck * 0.18, -s.neck * 0.2, -0.01]);
        b[17] = add(b[0], [s.neck * 0.4, -s.neck * 0.1, -0.09]);
        b[18] = add(b[0], [-s.neck * 0.4, -s.neck * 0.1, -0.09]);

        for (sign, sh, el, wr, arm) in [(1.0, 2, 3, 4, arm_r), (-1.0, 5, 6, 7, arm_l)] {
            b[sh] = add(neck, [sign * s.shoulder_half_width, 0.02, 0.0]);
            b[el] = add(b[sh], down(arm, s.upper_arm));
            b[wr] = add(b[el], down(arm + 0.25 + 0.5 * arm.max(0.0), s.forearm));
        }
        for (sign, hip, knee, ankle, big, small, heel, leg, flex) in [
            (1.0, 9, 10, 11, 22, 23, 24, leg_r, flex_r),
            (-1.0, 12, 13, 14, 19, 20, 21, leg_l, flex_l),
        ] {
            b[hip] = [sign * s.hip_half_width, 0.0, 0.0];
            b[knee] = add(b[hip], down(leg, s.thigh));
            b[ankle] = add(b[knee], down(leg - flex, s.shin));
            b[big] = add(b[ankle], [sign * 0.02, 0.06, 0.75 * s.foot]);
            b[small] = add(b[ankle], [sign * 0.07, 0.06, 0.6 * s.foot]);
            b[heel] = add(b[ankle], [0.0, 0.07, -0.25 * s.foot]);
        }

        let (sh, ch) = self.heading.sin_cos();
        let root = [
            self.start[0] + self.speed * t * sh,
            camera_height - self.hip_height() + bob,
            self.start[1] + self.speed * t * ch,
        ];
        // Rotate body frame about y so that z' points along the heading.
        b.map(|p| [root[0] + ch * p[0] + sh * p[2], root[1] + p[1], root[2] - sh * p[0] + ch * p[2]])
    }
}

/// Vehicle-mounted camera moving in its own frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPath {
    /// Forward speed at t = 0, m/s.
    pub forward_speed: f64,
    /// Forward acceleration, m/s².
    pub acceleration: f64,
    /// Sideways speed, m/s.
    pub lateral_speed: f64,
    /// Yaw rate, rad/s.
    pub yaw_rate: f64,
    /// Camera height above the ground, meters.
    pub height: f64,
}

impl Default for CameraPath {
    fn default() -> Self {
        Self {
            forward_speed: 0.0,
            acceleration: 0.0,
            lateral_speed: 0.0,
            yaw_rate: 0.0,
            height: 1.4,
        }
    }
}

impl CameraPath {
    /// Per-step transforms mapping camera α+1 into camera α.
    pub fn steps(&self, frames: usize, fps: f64) -> Vec<TransformSE3> {
        let dt = 1.0 / fps;
        (0..frames.saturating_sub(1))
            .map(|k| {
                let t = k as f64 * dt;
                let dz = self.forward_speed * dt + self.acceleration * (t * dt + 0.5 * dt * dt);
                TransformSE3::yaw(self.yaw_rate * dt, [self.lateral_speed * dt, 0.0, dz])
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub walker: WalkerConfig,
    pub camera: CameraPath,
    pub intrinsics: Intrinsics,
    pub frames: usize,
    pub fps: f64,
}

/// Ground-truth scene plus the world joints it was projected from.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub sequence: LocomotionSequence,
    pub world_joints: Vec<[[f64; 3]; NUM_JOINTS]>,
}

/// Renders the walker through the moving camera. Every keypoint gets
/// confidence 1. `seed` draws the gait phase.
pub fn generate_scene(spec: &SceneSpec, t_p: usize, seed: u64) -> Result<Scene, SynthError> {
    spec.walker.validate()?;
    if spec.frames == 0 || !(spec.fps > 0.0) {
        return Err(SynthError::InvalidConfig("need at least one frame and positive fps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..2.0 * PI);
    let transforms = chain_prefixes(&spec.camera.steps(spec.frames, spec.fps))?;
    let k = &spec.intrinsics;

    let mut frames = Vec::with_capacity(spec.frames);
    let mut depth = Vec::with_capacity(spec.frames);
    let mut world_joints = Vec::with_capacity(spec.frames);
    for (a, cam_to_first) in transforms.iter().enumerate() {
        let world = spec.walker.joints_at(a as f64 / spec.fps, phase, spec.camera.height);
        let first_to_cam = cam_to_first.inverse();
        let mut pose = Pose::default();
        for (j, p) in world.iter().enumerate() {
            let pc = first_to_cam.apply(*p);
            if pc[2] <= 0.1 {
                return Err(SynthError::BehindCamera { frame: a, joint: j });
            }
            let (u, v, z) = k.project(pc);
            pose.joints[j] = Keypoint::new(u, v, 1.0);
            if j == ANCHOR {
                depth.push(z);
            }
        }
        frames.push(pose);
        world_joints.push(world);
    }
    let t_p = t_p.min(spec.frames);
    let sequence = LocomotionSequence::new(
        frames,
        depth,
        transforms,
        t_p,
        spec.frames - t_p,
        k.frame_size(),
    )
    .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    Ok(Scene {
        sequence,
        world_joints,
    })
}
