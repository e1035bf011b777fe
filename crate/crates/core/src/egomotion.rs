//! Rigid-body ego-motion and alignment of past BeV features to the present frame.
//!
//! An action `a_i` is the rigid transform taking points expressed in ego frame
//! `i` to ego frame `i + 1`, so the chain `a_{k-1} · … · a_i` maps frame `i`
//! into the present frame `k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::BevGridSpec;
use crate::fields::{bilinear_unchecked, Field3D, FieldSeq};
use crate::scalar::Scalar;
use crate::{Error, Result};

pub type Matrix3<S> = [[S; 3]; 3];
pub type Vector3<S> = [S; 3];

/// Rotation plus translation in 3D.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SE3Pose<S = f64> {
    rotation: Matrix3<S>,
    translation: Vector3<S>,
}

fn mat_mul<S: Scalar>(a: &Matrix3<S>, b: &Matrix3<S>) -> Matrix3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec<S: Scalar>(a: &Matrix3<S>, v: &Vector3<S>) -> Vector3<S> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

fn transpose<S: Scalar>(a: &Matrix3<S>) -> Matrix3<S> {
    let mut out = *a;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[j][i];
        }
    }
    out
}

fn det<S: Scalar>(a: &Matrix3<S>) -> S {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Largest entry of |RᵀR − I| together with |det R − 1|.
fn orthonormality_error<S: Scalar>(r: &Matrix3<S>) -> S {
    let rtr = mat_mul(&transpose(r), r);
    let mut err = (det(r) - S::one()).abs();
    for (i, row) in rtr.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { S::one() } else { S::zero() };
            err = err.max((*v - target).abs());
        }
    }
    err
}

/// Gram-Schmidt on the rows, third row rebuilt as the cross product.
fn orthonormalize<S: Scalar>(r: &Matrix3<S>) -> Matrix3<S> {
    let norm = |v: [S; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let dot = |a: &[S; 3], b: &[S; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let r0 = norm(r[0]);
    let d = dot(&r0, &r[1]);
    let r1 = norm([r[1][0] - d * r0[0], r[1][1] - d * r0[1], r[1][2] - d * r0[2]]);
    let r2 = [
        r0[1] * r1[2] - r0[2] * r1[1],
        r0[2] * r1[0] - r0[0] * r1[2],
        r0[0] * r1[1] - r0[1] * r1[0],
    ];
    [r0, r1, r2]
}

impl<S: Scalar> SE3Pose<S> {
    /// Validates the rotation. Deviations below the repair tolerance (1e-6 in
    /// f64) are re-orthonormalized; larger ones are rejected.
    pub fn new(rotation: Matrix3<S>, translation: Vector3<S>) -> Result<Self> {
        if rotation.iter().flatten().chain(&translation).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SE3Pose"));
        }
        let err = orthonormality_error(&rotation);
        let rotation = if err <= S::strict_tolerance() {
            rotation
        } else if err < S::repair_tolerance() {
            orthonormalize(&rotation)
        } else {
            return Err(Error::InvalidParameter(format!(
                "rotation is not orthonormal (error {err})"
            )));
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        let (o, z) = (S::one(), S::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z, z, z],
        }
    }

    pub fn from_translation(t: Vector3<S>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation about +z by `yaw` followed by translation `t`.
    pub fn from_yaw(yaw: S, t: Vector3<S>) -> Self {
        let (s, c) = yaw.sin_cos();
        let (o, z) = (S::one(), S::zero());
        Self {
            rotation: [[c, -s, z], [s, c, z], [z, z, o]],
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<S> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<S> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let rotation = mat_mul(&self.rotation, &other.rotation);
        let rt = mat_vec(&self.rotation, &other.translation);
        Self {
            rotation,
            translation: [
                rt[0] + self.translation[0],
                rt[1] + self.translation[1],
                rt[2] + self.translation[2],
            ],
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, &self.translation);
        Self {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn transform_point(&self, p: &Vector3<S>) -> Vector3<S> {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Planar part: yaw from the first rotation column, (tx, ty) from the translation.
    pub fn flatten_to_se2(&self) -> SE2Pose<S> {
        SE2Pose::new(
            self.rotation[1][0].atan2(self.rotation[0][0]),
            self.translation[0],
            self.translation[1],
        )
    }

    /// Largest elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.rotation
            .iter()
            .flatten()
            .zip(other.rotation.iter().flatten())
            .chain(self.translation.iter().zip(&other.translation))
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max)
    }
}

pub fn se3_compose<S: Scalar>(a: &SE3Pose<S>, b: &SE3Pose<S>) -> SE3Pose<S> {
    a.compose(b)
}

pub fn se3_inverse<S: Scalar>(a: &SE3Pose<S>) -> SE3Pose<S> {
    a.inverse()
}

pub fn flatten_to_se2<S: Scalar>(a: &SE3Pose<S>) -> SE2Pose<S> {
    a.flatten_to_se2()
}

/// Planar rigid transform; yaw is kept in (−π, π].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SE2Pose<S = f64> {
    yaw: S,
    tx: S,
    ty: S,
}

pub fn normalize_angle<S: Scalar>(angle: S) -> S {
    let two_pi = S::PI() + S::PI();
    let mut a = angle % two_pi;
    if a <= -S::PI() {
        a += two_pi;
    } else if a > S::PI() {
        a -= two_pi;
    }
    a
}

impl<S: Scalar> SE2Pose<S> {
    pub fn new(yaw: S, tx: S, ty: S) -> Self {
        Self {
            yaw: normalize_angle(yaw),
            tx,
            ty,
        }
    }

    pub fn identity() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    pub fn yaw(&self) -> S {
        self.yaw
    }

    pub fn tx(&self) -> S {
        self.tx
    }

    pub fn ty(&self) -> S {
        self.ty
    }

    pub fn apply(&self, x: S, y: S) -> (S, S) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self::new(
            -self.yaw,
            -(c * self.tx + s * self.ty),
            s * self.tx - c * self.ty,
        )
    }

    pub fn compose(&self, other: &Self) -> Self {
        let (tx, ty) = self.apply(other.tx, other.ty);
        Self::new(self.yaw + other.yaw, tx, ty)
    }
}

/// Inverse-warps every channel of a BeV field by a planar transform.
///
/// The output cell at ego location `p` reads the input at `transform⁻¹(p)`
/// with bilinear interpolation and zero padding.
pub fn warp_bev<S: Scalar>(
    feature: &Field3D<S>,
    transform: &SE2Pose<S>,
    grid: &BevGridSpec<S>,
) -> Result<Field3D<S>> {
    let (channels, h, w) = feature.shape();
    if (h, w) != (grid.height(), grid.width()) {
        return Err(Error::Shape(format!(
            "warp_bev: field is {h}x{w}, grid is {}x{}",
            grid.height(),
            grid.width()
        )));
    }
    // Work in cell units measured from the grid origin so identity and
    // whole-cell shifts stay exact.
    let res = grid.resolution();
    let inv = transform.inverse();
    let (s, c) = inv.yaw.sin_cos();
    let (itx, ity) = (inv.tx / res, inv.ty / res);
    let half_w = S::of_usize(w) / S::of(2.0);
    let half_h = S::of_usize(h) / S::of(2.0);
    let half = S::of(0.5);

    let mut sources = Vec::with_capacity(h * w);
    for row in 0..h {
        let py = S::of_usize(row) - half_h + half;
        for col in 0..w {
            let px = S::of_usize(col) - half_w + half;
            let qx = c * px - s * py + itx;
            let qy = s * px + c * py + ity;
            sources.push((qx + half_w - half, qy + half_h - half));
        }
    }

    let mut out = Field3D::zeros(channels, h, w);
    for ch in 0..channels {
        let src = feature.channel_slice(ch);
        let dst = out.channel_slice_mut(ch);
        for (value, (x, y)) in dst.iter_mut().zip(&sources) {
            *value = bilinear_unchecked(src, h, w, *x, *y);
        }
    }
    Ok(out)
}

/// Warps each past frame into the present (last) frame's reference.
pub fn align_history<S: Scalar>(
    features: &FieldSeq<S>,
    actions: &[SE3Pose<S>],
    grid: &BevGridSpec<S>,
) -> Result<FieldSeq<S>> {
    let k = features.len();
    if k == 0 {
        return Err(Error::Empty("feature history"));
    }
    if actions.len() + 1 != k {
        return Err(Error::Shape(format!(
            "align_history: {k} frames need {} actions, got {}",
            k - 1,
            actions.len()
        )));
    }
    // to_present[i] = a_{k-1} · … · a_i
    let mut to_present = vec![SE3Pose::identity(); k];
    for i in (0..k - 1).rev() {
        to_present[i] = to_present[i + 1].compose(&actions[i]);
    }
    let aligned = features
        .elements()
        .par_iter()
        .zip(to_present.par_iter())
        .enumerate()
        .map(|(i, (f, pose))| {
            if i + 1 == k {
                Ok(f.clone())
            } else {
                warp_bev(f, &pose.flatten_to_se2(), grid)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FieldSeq::new(aligned)
}

/// Serialized pose: nine row-major rotation values then the translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&SE3Pose<f64>> for PoseRecord {
    fn from(p: &SE3Pose<f64>) -> Self {
        let r = p.rotation();
        Self {
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            translation: *p.translation(),
        }
    }
}

impl TryFrom<&PoseRecord> for SE3Pose<f64> {
    type Error = Error;

    fn try_from(r: &PoseRecord) -> Result<Self> {
        let m = &r.rotation;
        SE3Pose::new(
            [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]],
            r.translation,
        )
    }
}
