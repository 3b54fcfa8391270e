use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::SynthError;

/// Rigid transform stored as the top 3×4 block `[R | t]` of a homogeneous
/// matrix, translation in meters.
///
/// In a sequence, the transform at frame α maps points expressed in the
/// camera frame at α into the camera frame of the first frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 12]", try_from = "[f64; 12]")]
pub struct TransformSE3 {
    pub m: [[f64; 4]; 3],
}

impl Default for TransformSE3 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl From<TransformSE3> for [f64; 12] {
    fn from(t: TransformSE3) -> Self {
        t.flatten()
    }
}

impl TryFrom<[f64; 12]> for TransformSE3 {
    type Error = SynthError;

    fn try_from(v: [f64; 12]) -> Result<Self, Self::Error> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SynthError::NonFinite);
        }
        Ok(Self::from_flat(v))
    }
}

impl TransformSE3 {
    pub const IDENTITY: TransformSE3 = TransformSE3 {
        m: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
    };

    pub fn from_rt(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 3];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        Self { m }
    }

    pub fn translation_only(t: [f64; 3]) -> Self {
        let mut out = Self::IDENTITY;
        for i in 0..3 {
            out.m[i][3] = t[i];
        }
        out
    }

    /// Rotation given as an axis-angle vector (radians), plus translation.
    pub fn from_axis_angle(omega: [f64; 3], t: [f64; 3]) -> Self {
        let r = Rotation3::from_scaled_axis(Vector3::from(omega));
        Self::from_rt(mat_to_rows(r.matrix()), t)
    }

    /// Rotation about the camera's vertical (y) axis.
    pub fn yaw(angle: f64, t: [f64; 3]) -> Self {
        Self::from_axis_angle([0.0, angle, 0.0], t)
    }

    pub fn from_flat(v: [f64; 12]) -> Self {
        let mut m = [[0.0; 4]; 3];
        for i in 0..3 {
            m[i].copy_from_slice(&v[4 * i..4 * i + 4]);
        }
        Self { m }
    }

    /// Row-major 12 values.
    pub fn flatten(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            out[4 * i..4 * i + 4].copy_from_slice(&self.m[i]);
        }
        out
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            r[i].copy_from_slice(&self.m[i][..3]);
        }
        r
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    pub fn homogeneous(&self) -> [[f64; 4]; 4] {
        [self.m[0], self.m[1], self.m[2], [0.0, 0.0, 0.0, 1.0]]
    }

    /// `self · other` as homogeneous matrices.
    pub fn compose(&self, other: &TransformSE3) -> TransformSE3 {
        let a = self.homogeneous();
        let b = other.homogeneous();
        let mut m = [[0.0; 4]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                *out = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        TransformSE3 { m }
    }

    pub fn inverse(&self) -> TransformSE3 {
        let r = self.rotation();
        let t = self.translation();
        let mut rt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = r[j][i];
            }
        }
        let ti = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        TransformSE3::from_rt(rt, ti)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i][0] * p[0] + self.m[i][1] * p[1] + self.m[i][2] * p[2] + self.m[i][3];
        }
        out
    }

    /// Largest of `‖RᵀR − I‖_max` and `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = Matrix3::from(rows_to_mat(self.rotation()));
        let rtr = r.transpose() * r - Matrix3::identity();
        let e = rtr.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        e.max((r.determinant() - 1.0).abs())
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.flatten()
            .iter()
            .zip(TransformSE3::IDENTITY.flatten())
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Replaces R with the nearest rotation (SVD projection, det +1).
    pub fn reorthonormalized(&self) -> TransformSE3 {
        let r = Matrix3::from(rows_to_mat(self.rotation()));
        let svd = r.svd(true, true);
        let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
        let mut proj = u * v_t;
        if proj.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            proj = u2 * v_t;
        }
        TransformSE3::from_rt(mat_to_rows(&proj), self.translation())
    }

    pub fn max_abs_diff(&self, other: &TransformSE3) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// nalgebra's `From<[[T; 3]; 3]>` is column-major; transpose to keep rows.
fn rows_to_mat(r: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[j][i] = r[i][j];
        }
    }
    c
}

fn mat_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    r
}

/// Tolerance on orthonormality accepted by [`chain_transforms`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Left-to-right product `T₁ · T₂ · … · Tₙ`, with the rotation projected back
/// onto SO(3) afterwards.
///
/// With each `Tₖ` mapping camera-`k+1` coordinates into camera-`k`
/// coordinates, the result maps the last camera frame into the first.
pub fn chain_transforms(per_step: &[TransformSE3]) -> Result<TransformSE3, SynthError> {
    let (first, rest) = per_step.split_first().ok_or(SynthError::EmptyChain)?;
    for (i, t) in per_step.iter().enumerate() {
        let err = t.orthonormality_error();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(SynthError::NotOrthonormal { index: i, error: err });
        }
    }
    let acc = rest.iter().fold(*first, |acc, t| acc.compose(t));
    Ok(acc.reorthonormalized())
}

/// Running products: element α is `T₁ · … · T_α`, with the identity first.
pub fn chain_prefixes(per_step: &[TransformSE3]) -> Result<Vec<TransformSE3>, SynthError> {
    let mut out = Vec::with_capacity(per_step.len() + 1);
    out.push(TransformSE3::IDENTITY);
    let mut acc = TransformSE3::IDENTITY;
    for (i, t) in per_step.iter().enumerate() {
        let err = t.orthonormality_error();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(SynthError::NotOrthonormal { index: i, error: err });
        }
        acc = acc.compose(t).reorthonormalized();
        out.push(acc);
    }
    Ok(out)
}
