//! Lifting per-camera features into 3D through depth distributions and
//! sum-pooling them into a bird's-eye-view grid.
//!
//! Camera frame: x right, y down, z forward (optical axis). Ego frame: x
//! forward, y left, z up. BeV grid columns follow ego x and rows follow ego y;
//! cell `(row i, col j)` covers `x ∈ [(j − W/2)·res, (j − W/2 + 1)·res)` and
//! `y ∈ [(i − H/2)·res, (i − H/2 + 1)·res)`, so the ego origin is the corner
//! shared by the four central cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::egomotion::{PoseRecord, SE3Pose, Vector3};
use crate::fields::{softmax_unchecked, Field3D};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Tolerance for "this ratio is an integer" checks on configuration values.
fn integral_ratio<S: Scalar>(numerator: S, denominator: S) -> Option<usize> {
    let ratio = numerator / denominator;
    let rounded = ratio.round();
    if rounded >= S::one() && (ratio - rounded).abs() <= S::of(1e-6) * rounded {
        rounded.to_usize()
    } else {
        None
    }
}

/// Pinhole intrinsics plus the backbone's output stride.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics<S = f64> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
    pub image_w: usize,
    pub image_h: usize,
    pub feature_stride: usize,
}

impl<S: Scalar> CameraIntrinsics<S> {
    pub fn new(
        fx: S,
        fy: S,
        cx: S,
        cy: S,
        image_w: usize,
        image_h: usize,
        feature_stride: usize,
    ) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            image_w,
            image_h,
            feature_stride,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > S::zero() && self.fy > S::zero()) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::NonFinite("principal point"));
        }
        if self.feature_stride == 0 {
            return Err(Error::InvalidParameter("feature stride must be >= 1".into()));
        }
        if self.image_w == 0
            || self.image_h == 0
            || !self.image_w.is_multiple_of(self.feature_stride)
            || !self.image_h.is_multiple_of(self.feature_stride)
        {
            return Err(Error::InvalidParameter(format!(
                "image {}x{} not divisible by stride {}",
                self.image_w, self.image_h, self.feature_stride
            )));
        }
        Ok(())
    }

    /// Feature-map width `W_e`.
    pub fn feature_w(&self) -> usize {
        self.image_w / self.feature_stride
    }

    /// Feature-map height `H_e`.
    pub fn feature_h(&self) -> usize {
        self.image_h / self.feature_stride
    }

    /// Full-resolution pixel center of feature pixel `(u, v)`.
    pub fn pixel_center(&self, u: usize, v: usize) -> (S, S) {
        let s = S::of_usize(self.feature_stride);
        let half = s / S::of(2.0);
        (S::of_usize(u) * s + half, S::of_usize(v) * s + half)
    }

    /// Projects a camera-frame point to full-resolution pixel coordinates.
    pub fn project(&self, p: &Vector3<S>) -> Option<(S, S)> {
        if p[2] <= S::zero() {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }
}

/// Uniform depth discretization addressed by bin centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthBins<S = f64> {
    d_min: S,
    d_max: S,
    d_size: S,
    count: usize,
}

impl<S: Scalar> DepthBins<S> {
    pub fn new(d_min: S, d_max: S, d_size: S) -> Result<Self> {
        if !(d_min > S::zero() && d_max > d_min && d_size > S::zero()) {
            return Err(Error::InvalidParameter(format!(
                "depth bins need d_max > d_min > 0 and d_size > 0, got [{d_min}, {d_max}] / {d_size}"
            )));
        }
        let count = integral_ratio(d_max - d_min, d_size).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "(d_max - d_min) / d_size = {} is not a positive integer",
                (d_max - d_min) / d_size
            ))
        })?;
        Ok(Self {
            d_min,
            d_max,
            d_size,
            count,
        })
    }

    pub fn d_min(&self) -> S {
        self.d_min
    }

    pub fn d_max(&self) -> S {
        self.d_max
    }

    pub fn d_size(&self) -> S {
        self.d_size
    }

    /// Number of bins `D`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn center(&self, idx: usize) -> S {
        self.d_min + (S::of_usize(idx) + S::of(0.5)) * self.d_size
    }

    /// Bin containing `depth`, half-open intervals.
    pub fn bin_of(&self, depth: S) -> Option<usize> {
        if depth < self.d_min || depth >= self.d_max {
            return None;
        }
        ((depth - self.d_min) / self.d_size)
            .floor()
            .to_usize()
            .map(|i| i.min(self.count - 1))
    }
}

/// BeV grid centered on the ego vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevGridSpec<S = f64> {
    extent_x: S,
    extent_y: S,
    resolution: S,
    width: usize,
    height: usize,
}

impl<S: Scalar> BevGridSpec<S> {
    pub fn new(extent_x: S, extent_y: S, resolution: S) -> Result<Self> {
        if !(resolution > S::zero() && extent_x > S::zero() && extent_y > S::zero()) {
            return Err(Error::InvalidParameter("grid extents and resolution must be positive".into()));
        }
        let err = || {
            Error::InvalidParameter(format!(
                "grid extent ({extent_x}, {extent_y}) is not a multiple of resolution {resolution}"
            ))
        };
        let width = integral_ratio(extent_x, resolution).ok_or_else(err)?;
        let height = integral_ratio(extent_y, resolution).ok_or_else(err)?;
        Ok(Self {
            extent_x,
            extent_y,
            resolution,
            width,
            height,
        })
    }

    /// 100 m × 100 m at 0.5 m, i.e. 200 × 200 cells.
    pub fn standard() -> Self {
        Self::new(S::of(100.0), S::of(100.0), S::of(0.5)).expect("valid default grid")
    }

    pub fn extent_x(&self) -> S {
        self.extent_x
    }

    pub fn extent_y(&self) -> S {
        self.extent_y
    }

    pub fn resolution(&self) -> S {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Cell `(row, col)` containing ego point `(x, y)`, or `None` outside the extent.
    pub fn cell_of(&self, x: S, y: S) -> Option<(usize, usize)> {
        let col = (x / self.resolution + S::of_usize(self.width) / S::of(2.0)).floor();
        let row = (y / self.resolution + S::of_usize(self.height) / S::of(2.0)).floor();
        if !(col >= S::zero() && row >= S::zero()) {
            return None;
        }
        let (col, row) = (col.to_usize()?, row.to_usize()?);
        (col < self.width && row < self.height).then_some((row, col))
    }

    /// Ego coordinates `(x, y)` of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (S, S) {
        self.continuous_to_ego(S::of_usize(row), S::of_usize(col))
    }

    /// Ego `(x, y)` of a continuous cell coordinate (integers are cell centers).
    pub fn continuous_to_ego(&self, row: S, col: S) -> (S, S) {
        let half = S::of(0.5);
        (
            (col - S::of_usize(self.width) / S::of(2.0) + half) * self.resolution,
            (row - S::of_usize(self.height) / S::of(2.0) + half) * self.resolution,
        )
    }
}

/// Backbone output for one camera: `C` content channels and `D` depth logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFeature<S = f64> {
    pub content: Field3D<S>,
    pub depth_logits: Field3D<S>,
}

impl<S: Scalar> CameraFeature<S> {
    pub fn new(content: Field3D<S>, depth_logits: Field3D<S>) -> Result<Self> {
        if (content.height(), content.width()) != (depth_logits.height(), depth_logits.width()) {
            return Err(Error::Shape(format!(
                "content {:?} and depth logits {:?} differ spatially",
                content.shape(),
                depth_logits.shape()
            )));
        }
        Ok(Self {
            content,
            depth_logits,
        })
    }
}

/// Outer product of content and depth probabilities, with the camera-frame
/// location of every `(d, row, col)` frustum point.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedFeature<S = f64> {
    channels: usize,
    depth: usize,
    height: usize,
    width: usize,
    /// `C × D × H_e × W_e`.
    data: Vec<S>,
    /// `D × H_e × W_e` camera-frame points.
    points: Vec<Vector3<S>>,
}

impl<S: Scalar> LiftedFeature<S> {
    /// `(C, D, H_e, W_e)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.channels, self.depth, self.height, self.width)
    }

    pub fn get(&self, c: usize, d: usize, row: usize, col: usize) -> S {
        self.data[((c * self.depth + d) * self.height + row) * self.width + col]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn points(&self) -> &[Vector3<S>] {
        &self.points
    }

    pub fn point(&self, d: usize, row: usize, col: usize) -> Vector3<S> {
        self.points[(d * self.height + row) * self.width + col]
    }
}

/// Camera-frame points on every feature-pixel ray at every bin center, indexed `(d, row, col)`.
pub fn frustum_points<S: Scalar>(intr: &CameraIntrinsics<S>, bins: &DepthBins<S>) -> Vec<Vector3<S>> {
    let (h, w) = (intr.feature_h(), intr.feature_w());
    let mut out = Vec::with_capacity(bins.count() * h * w);
    for d in 0..bins.count() {
        let z = bins.center(d);
        for v in 0..h {
            for u in 0..w {
                let (px, py) = intr.pixel_center(u, v);
                out.push([(px - intr.cx) * z / intr.fx, (py - intr.cy) * z / intr.fy, z]);
            }
        }
    }
    out
}

/// Softmax over depth logits per pixel, then the outer product with the content.
pub fn lift_features<S: Scalar>(
    feat: &CameraFeature<S>,
    intr: &CameraIntrinsics<S>,
    bins: &DepthBins<S>,
) -> Result<LiftedFeature<S>> {
    let (channels, h, w) = feat.content.shape();
    let depth = feat.depth_logits.channels();
    if (h, w) != (intr.feature_h(), intr.feature_w()) {
        return Err(Error::Shape(format!(
            "feature map {h}x{w} does not match intrinsics {}x{}",
            intr.feature_h(),
            intr.feature_w()
        )));
    }
    if depth != bins.count() {
        return Err(Error::Shape(format!(
            "{depth} depth logits but {} depth bins",
            bins.count()
        )));
    }
    if (feat.depth_logits.height(), feat.depth_logits.width()) != (h, w) {
        return Err(Error::Shape("depth logits and content differ spatially".into()));
    }
    let content = feat.content.as_slice();
    let logits_all = feat.depth_logits.as_slice();
    if content.iter().chain(logits_all).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("camera feature"));
    }

    let plane = h * w;
    let mut probs = vec![S::zero(); depth * plane];
    let mut logits = vec![S::zero(); depth];
    for px in 0..plane {
        for (d, l) in logits.iter_mut().enumerate() {
            *l = logits_all[d * plane + px];
        }
        for (d, p) in softmax_unchecked(&logits).into_iter().enumerate() {
            probs[d * plane + px] = p;
        }
    }
    let mut data = Vec::with_capacity(channels * depth * plane);
    for c in 0..channels {
        let content_c = &content[c * plane..(c + 1) * plane];
        for d in 0..depth {
            let prob_d = &probs[d * plane..(d + 1) * plane];
            data.extend(content_c.iter().zip(prob_d).map(|(x, p)| *x * *p));
        }
    }
    Ok(LiftedFeature {
        channels,
        depth,
        height: h,
        width: w,
        data,
        points: frustum_points(intr, bins),
    })
}

/// Transforms lifted points to the ego frame and sum-pools their features into
/// the BeV cell containing their `(x, y)`. Height is ignored; points outside
/// the extent are dropped.
pub fn splat_to_bev<S: Scalar>(
    lifted: &LiftedFeature<S>,
    cam_to_ego: &SE3Pose<S>,
    grid: &BevGridSpec<S>,
) -> Field3D<S> {
    let (channels, depth, h, w) = lifted.shape();
    let mut out = Field3D::zeros(channels, grid.height(), grid.width());
    let frustum = depth * h * w;
    for (i, p) in lifted.points.iter().enumerate() {
        let e = cam_to_ego.transform_point(p);
        if let Some((row, col)) = grid.cell_of(e[0], e[1]) {
            for c in 0..channels {
                out.add_at(c, row, col, lifted.data[c * frustum + i]);
            }
        }
    }
    out
}

/// Calibrated camera: intrinsics plus the camera-to-ego extrinsic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<S = f64> {
    pub intrinsics: CameraIntrinsics<S>,
    pub cam_to_ego: SE3Pose<S>,
}

/// Sum of per-camera splats. Splats run in parallel; the reduction follows
/// the listed camera order.
pub fn encode_observation<S: Scalar>(
    cams: &[(CameraFeature<S>, Camera<S>)],
    bins: &DepthBins<S>,
    grid: &BevGridSpec<S>,
) -> Result<Field3D<S>> {
    let (first, _) = cams.first().ok_or(Error::Empty("camera list"))?;
    let channels = first.content.channels();
    if let Some((bad, _)) = cams.iter().find(|(f, _)| f.content.channels() != channels) {
        return Err(Error::Shape(format!(
            "cameras disagree on channel count: {channels} vs {}",
            bad.content.channels()
        )));
    }
    let splats = cams
        .par_iter()
        .map(|(feat, cam)| {
            let lifted = lift_features(feat, &cam.intrinsics, bins)?;
            Ok(splat_to_bev(&lifted, &cam.cam_to_ego, grid))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = splats.into_iter();
    let mut total = iter.next().expect("at least one camera");
    for s in iter {
        total.add_assign(&s)?;
    }
    Ok(total)
}

// ---- rig file -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: usize,
    pub image_h: usize,
    pub feature_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicsRecord {
    /// Camera-to-ego rotation, three rows.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    #[serde(default)]
    pub name: String,
    pub intrinsics: IntrinsicsRecord,
    pub extrinsics: ExtrinsicsRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthBinsRecord {
    pub d_min: f64,
    pub d_max: f64,
    pub d_size: f64,
}

impl Default for DepthBinsRecord {
    fn default() -> Self {
        Self {
            d_min: 2.0,
            d_max: 50.0,
            d_size: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRecord {
    pub extent_x: f64,
    pub extent_y: f64,
    pub resolution: f64,
}

impl Default for GridRecord {
    fn default() -> Self {
        Self {
            extent_x: 100.0,
            extent_y: 100.0,
            resolution: 0.5,
        }
    }
}

/// JSON camera rig: cameras, depth bins and BeV grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigRecord {
    pub cameras: Vec<CameraRecord>,
    #[serde(default)]
    pub depth_bins: DepthBinsRecord,
    #[serde(default)]
    pub grid: GridRecord,
}

impl DepthBinsRecord {
    pub fn build(&self) -> Result<DepthBins<f64>> {
        DepthBins::new(self.d_min, self.d_max, self.d_size)
    }
}

impl GridRecord {
    pub fn build(&self) -> Result<BevGridSpec<f64>> {
        BevGridSpec::new(self.extent_x, self.extent_y, self.resolution)
    }
}

impl CameraRecord {
    pub fn build(&self) -> Result<Camera<f64>> {
        let i = &self.intrinsics;
        Ok(Camera {
            intrinsics: CameraIntrinsics::new(
                i.fx,
                i.fy,
                i.cx,
                i.cy,
                i.image_w,
                i.image_h,
                i.feature_stride,
            )?,
            cam_to_ego: SE3Pose::new(self.extrinsics.rotation, self.extrinsics.translation)?,
        })
    }

    pub fn from_camera(name: impl Into<String>, cam: &Camera<f64>) -> Self {
        let i = &cam.intrinsics;
        let pose = PoseRecord::from(&cam.cam_to_ego);
        let r = pose.rotation;
        Self {
            name: name.into(),
            intrinsics: IntrinsicsRecord {
                fx: i.fx,
                fy: i.fy,
                cx: i.cx,
                cy: i.cy,
                image_w: i.image_w,
                image_h: i.image_h,
                feature_stride: i.feature_stride,
            },
            extrinsics: ExtrinsicsRecord {
                rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
                translation: pose.translation,
            },
        }
    }
}

impl RigRecord {
    pub fn build_cameras(&self) -> Result<Vec<Camera<f64>>> {
        self.cameras.iter().map(CameraRecord::build).collect()
    }
}
