//! Synthetic planar driving scenes with exact ground truth: unicycle vehicles,
//! ideal depth cameras and BeV labels.
//!
//! A scene with horizon `T` has `T + 1` frames, `t = 0..=T`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{
    BevGridSpec, Camera, CameraFeature, CameraRecord, DepthBins, DepthBinsRecord, ExtrinsicsRecord,
    GridRecord, IntrinsicsRecord, RigRecord,
};
use crate::egomotion::{PoseRecord, SE3Pose};
use crate::fields::Field3D;
use crate::instances::{boxes_to_occupancy, generate_labels, BevBox, FrameLabels, InstanceMap, CENTERNESS_SIGMA};
use crate::io::{read_bgrid, read_json, read_jsonl, write_bgrid, write_json, write_jsonl};
use crate::rng::NoiseSource;
use crate::{Error, Result};

/// Spacing of surface samples on vehicle faces, in meters.
pub const FACE_SAMPLE_SPACING: f64 = 0.1;
/// Logit assigned to the observed depth bin; the rest stay at 0.
pub const ONE_HOT_LOGIT: f64 = 50.0;
/// Random vehicles keep their centers this far inside the BeV extent.
const EXTENT_MARGIN: f64 = 3.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 2000;

/// Planar pose and constant controls in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kinematics {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// m/s along the heading.
    pub speed: f64,
    /// rad/s.
    pub yaw_rate: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            speed: 5.0,
            yaw_rate: 0.0,
        }
    }
}

impl Kinematics {
    /// Closed-form unicycle state `(x, y, yaw)` after `t` seconds.
    pub fn state_at(&self, t: f64) -> (f64, f64, f64) {
        let yaw = self.yaw + self.yaw_rate * t;
        if self.yaw_rate.abs() < 1e-12 {
            let d = self.speed * t;
            (self.x + d * self.yaw.cos(), self.y + d * self.yaw.sin(), yaw)
        } else {
            let r = self.speed / self.yaw_rate;
            (
                self.x + r * (yaw.sin() - self.yaw.sin()),
                self.y - r * (yaw.cos() - self.yaw.cos()),
                yaw,
            )
        }
    }

    /// Body-to-world pose after `t` seconds.
    pub fn pose_at(&self, t: f64) -> SE3Pose<f64> {
        let (x, y, yaw) = self.state_at(t);
        SE3Pose::from_yaw(yaw, [x, y, 0.0])
    }

    fn validate(&self) -> Result<()> {
        if [self.x, self.y, self.yaw, self.speed, self.yaw_rate].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("kinematics"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub start: Kinematics,
    pub length: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub seed: u64,
    /// Random vehicles to place when `vehicles` is absent.
    pub num_vehicles: usize,
    /// Side of the square around the world origin where random vehicles spawn.
    pub world_extent: f64,
    /// Explicit vehicles; overrides random placement.
    pub vehicles: Option<Vec<VehicleSpec>>,
    pub ego: Kinematics,
    pub dt: f64,
    pub horizon: usize,
    pub vehicle_height: f64,
    /// Minimum center distance between any two vehicles (and the ego) at every frame.
    pub min_separation: f64,
    pub rig: RigRecord,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_vehicles: 6,
            world_extent: 80.0,
            vehicles: None,
            ego: Kinematics::default(),
            dt: 0.5,
            horizon: 6,
            vehicle_height: 1.5,
            min_separation: 8.0,
            rig: default_rig(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if !(self.world_extent > 0.0 && self.vehicle_height > 0.0 && self.min_separation >= 0.0) {
            return Err(Error::InvalidParameter(
                "world_extent and vehicle_height must be positive, min_separation non-negative".into(),
            ));
        }
        self.ego.validate()?;
        for v in self.vehicles.iter().flatten() {
            v.start.validate()?;
            if !(v.length > 0.0 && v.width > 0.0) {
                return Err(Error::InvalidParameter("vehicle length and width must be positive".into()));
            }
        }
        if self.rig.cameras.is_empty() {
            return Err(Error::InvalidParameter("rig needs at least one camera".into()));
        }
        self.rig.build_cameras()?;
        self.rig.depth_bins.build()?;
        self.rig.grid.build()?;
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.horizon + 1
    }
}

/// Four cameras at 90° yaw steps, 800x448 images, stride 8, 53° horizontal field of view.
pub fn default_rig() -> RigRecord {
    let intrinsics = IntrinsicsRecord {
        fx: 800.0,
        fy: 800.0,
        cx: 400.0,
        cy: 224.0,
        image_w: 800,
        image_h: 448,
        feature_stride: 8,
    };
    // (name, cos yaw, sin yaw, mount x, mount y)
    let mounts = [
        ("front", 1.0, 0.0, 1.5, 0.0),
        ("left", 0.0, 1.0, 0.0, 0.9),
        ("back", -1.0, 0.0, -1.5, 0.0),
        ("right", 0.0, -1.0, 0.0, -0.9),
    ];
    RigRecord {
        cameras: mounts
            .iter()
            .map(|(name, c, s, x, y)| CameraRecord {
                name: name.to_string(),
                intrinsics: intrinsics.clone(),
                extrinsics: ExtrinsicsRecord {
                    rotation: [[*s, 0.0, *c], [-*c, 0.0, *s], [0.0, -1.0, 0.0]],
                    translation: [*x, *y, 1.6],
                },
            })
            .collect(),
        depth_bins: DepthBinsRecord::default(),
        grid: GridRecord::default(),
    }
}

/// Ground-truth motion of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTimeline {
    pub vehicles: Vec<VehicleSpec>,
    /// Ego-to-world pose per frame.
    pub ego_poses: Vec<SE3Pose<f64>>,
    /// `actions[t]` maps ego frame `t` coordinates into ego frame `t + 1`.
    pub actions: Vec<SE3Pose<f64>>,
    /// Vehicle boxes in each frame's ego coordinates; ids are 1-based vehicle indices.
    pub boxes: Vec<Vec<BevBox>>,
}

fn box_in_ego(v: &VehicleSpec, ego: &SE3Pose<f64>, t: f64, id: u32) -> BevBox {
    let rel = ego.inverse().compose(&v.start.pose_at(t)).flatten_to_se2();
    BevBox {
        center_x: rel.tx(),
        center_y: rel.ty(),
        length: v.length,
        width: v.width,
        yaw: rel.yaw(),
        instance_id: id,
    }
}

fn sample_vehicles(cfg: &SceneConfig, grid: &BevGridSpec<f64>) -> Result<Vec<VehicleSpec>> {
    let mut rng = NoiseSource::new(cfg.seed);
    let half = cfg.world_extent / 2.0;
    let times: Vec<f64> = (0..cfg.frames()).map(|t| t as f64 * cfg.dt).collect();
    let egos: Vec<(f64, f64, f64)> = times.iter().map(|t| cfg.ego.state_at(*t)).collect();
    let ego_poses: Vec<SE3Pose<f64>> = times.iter().map(|t| cfg.ego.pose_at(*t)).collect();
    let (lim_x, lim_y) = (
        grid.extent_x() / 2.0 - EXTENT_MARGIN,
        grid.extent_y() / 2.0 - EXTENT_MARGIN,
    );
    let sep2 = cfg.min_separation * cfg.min_separation;

    let mut placed: Vec<(VehicleSpec, Vec<(f64, f64, f64)>)> = Vec::new();
    for _ in 0..cfg.num_vehicles {
        let mut accepted = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let v = VehicleSpec {
                start: Kinematics {
                    x: rng.uniform(-half, half),
                    y: rng.uniform(-half, half),
                    yaw: rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
                    speed: rng.uniform(0.0, 8.0),
                    yaw_rate: rng.uniform(-0.25, 0.25),
                },
                length: rng.uniform(3.8, 5.0),
                width: rng.uniform(1.7, 2.1),
            };
            let track: Vec<(f64, f64, f64)> = times.iter().map(|t| v.start.state_at(*t)).collect();
            let ok = track.iter().enumerate().all(|(k, (x, y, _))| {
                let d_ego = (x - egos[k].0).powi(2) + (y - egos[k].1).powi(2);
                let local = ego_poses[k].inverse().transform_point(&[*x, *y, 0.0]);
                d_ego >= sep2
                    && local[0].abs() <= lim_x
                    && local[1].abs() <= lim_y
                    && placed.iter().all(|(_, other)| {
                        (x - other[k].0).powi(2) + (y - other[k].1).powi(2) >= sep2
                    })
            });
            if ok {
                accepted = Some((v, track));
                break;
            }
        }
        match accepted {
            Some(a) => placed.push(a),
            None => {
                return Err(Error::InvalidParameter(format!(
                    "could not place {} vehicles with separation {} m",
                    cfg.num_vehicles, cfg.min_separation
                )))
            }
        }
    }
    Ok(placed.into_iter().map(|(v, _)| v).collect())
}

/// Integrates ego and vehicle motion; random vehicles come from the seeded generator.
pub fn simulate(cfg: &SceneConfig) -> Result<SceneTimeline> {
    cfg.validate()?;
    let grid = cfg.rig.grid.build()?;
    let vehicles = match &cfg.vehicles {
        Some(v) => v.clone(),
        None => sample_vehicles(cfg, &grid)?,
    };
    let ego_poses: Vec<SE3Pose<f64>> = (0..cfg.frames())
        .map(|t| cfg.ego.pose_at(t as f64 * cfg.dt))
        .collect();
    let actions = ego_poses
        .windows(2)
        .map(|w| w[1].inverse().compose(&w[0]))
        .collect();
    let boxes = ego_poses
        .iter()
        .enumerate()
        .map(|(t, ego)| {
            vehicles
                .iter()
                .enumerate()
                .map(|(i, v)| box_in_ego(v, ego, t as f64 * cfg.dt, i as u32 + 1))
                .collect()
        })
        .collect();
    Ok(SceneTimeline {
        vehicles,
        ego_poses,
        actions,
        boxes,
    })
}

/// Ego-frame surface samples on the four vertical faces of a box.
pub fn face_points(b: &BevBox, height: f64) -> Vec<[f64; 3]> {
    let corners = b.corners();
    let rows = (height / FACE_SAMPLE_SPACING).ceil().max(1.0) as usize;
    let mut out = Vec::new();
    for k in 0..4 {
        let (x0, y0) = corners[k];
        let (x1, y1) = corners[(k + 1) % 4];
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let cols = (len / FACE_SAMPLE_SPACING).ceil().max(1.0) as usize;
        for i in 0..cols {
            let s = i as f64 / cols as f64;
            let (x, y) = (x0 + s * (x1 - x0), y0 + s * (y1 - y0));
            for j in 0..=rows {
                out.push([x, y, height * j as f64 / rows as f64]);
            }
        }
    }
    out
}

/// Ideal depth camera: one content channel, one-hot depth logits on occupied pixels.
///
/// Samples are z-buffered per feature pixel; a pixel is occupied when its
/// nearest sample falls inside the depth range.
pub fn render_depth_camera(boxes: &[BevBox], height: f64, cam: &Camera<f64>, bins: &DepthBins<f64>) -> CameraFeature<f64> {
    let intr = &cam.intrinsics;
    let (h, w) = (intr.feature_h(), intr.feature_w());
    let stride = intr.feature_stride as f64;
    let ego_to_cam = cam.cam_to_ego.inverse();
    let mut zbuf = vec![f64::INFINITY; h * w];
    for b in boxes {
        for p in face_points(b, height) {
            let q = ego_to_cam.transform_point(&p);
            if let Some((px, py)) = intr.project(&q) {
                let (u, v) = ((px / stride).floor(), (py / stride).floor());
                if u >= 0.0 && v >= 0.0 && (u as usize) < w && (v as usize) < h {
                    let idx = v as usize * w + u as usize;
                    if q[2] < zbuf[idx] {
                        zbuf[idx] = q[2];
                    }
                }
            }
        }
    }
    let d = bins.count();
    let mut content = Field3D::zeros(1, h, w);
    let mut logits = Field3D::zeros(d, h, w);
    for (idx, z) in zbuf.iter().enumerate() {
        if let Some(bin) = z.is_finite().then(|| bins.bin_of(*z)).flatten() {
            let (row, col) = (idx / w, idx % w);
            content.set(0, row, col, 1.0);
            logits.set(bin, row, col, ONE_HOT_LOGIT);
        }
    }
    CameraFeature::new(content, logits).expect("shapes agree by construction")
}

/// Everything a scene produces, in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub timeline: SceneTimeline,
    /// `features[t][camera]`.
    pub features: Vec<Vec<CameraFeature<f64>>>,
    pub labels: Vec<FrameLabels>,
}

fn quantize(f: &Field3D<f64>) -> Field3D<f64> {
    f.cast::<f32>().cast::<f64>()
}

/// Simulates, renders every frame and derives labels. Label payloads are
/// rounded to f32 so they equal what the bundle stores.
pub fn build_dataset(cfg: &SceneConfig) -> Result<Dataset> {
    let timeline = simulate(cfg)?;
    let cams = cfg.rig.build_cameras()?;
    let bins = cfg.rig.depth_bins.build()?;
    let grid = cfg.rig.grid.build()?;
    let features = timeline
        .boxes
        .par_iter()
        .map(|boxes| {
            cams.iter()
                .map(|c| render_depth_camera(boxes, cfg.vehicle_height, c, &bins))
                .collect()
        })
        .collect();
    let maps = timeline
        .boxes
        .iter()
        .map(|b| boxes_to_occupancy(b, &grid).map(|(_, m)| m))
        .collect::<Result<Vec<InstanceMap>>>()?;
    let labels = generate_labels(&maps, CENTERNESS_SIGMA)?
        .into_iter()
        .map(|l| FrameLabels {
            centerness: quantize(&l.centerness.clone().into()).channel(0),
            offset: quantize(&l.offset),
            flow: quantize(&l.flow),
            ..l
        })
        .collect();
    Ok(Dataset {
        config: cfg.clone(),
        timeline,
        features,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    config: SceneConfig,
    vehicles: Vec<VehicleSpec>,
    frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseLine {
    t: usize,
    ego_to_world: PoseRecord,
    /// Ego motion from this frame to the next; absent on the last frame.
    action: Option<PoseRecord>,
}

pub const LABEL_KINDS: [&str; 5] = ["segmentation", "instance", "centerness", "offset", "flow"];

pub fn camera_file(dir: &Path, t: usize, cam: usize, kind: &str) -> PathBuf {
    dir.join("cams").join(format!("t{t:03}_cam{cam}_{kind}.bgrid"))
}

pub fn label_file(dir: &Path, t: usize, kind: &str) -> PathBuf {
    dir.join("labels").join(format!("t{t:03}_{kind}.bgrid"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the bundle layout under `dir` (created if missing).
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    create_dir(&dir.join("cams"))?;
    create_dir(&dir.join("labels"))?;
    write_json(
        dir.join("scene.json"),
        &SceneRecord {
            config: ds.config.clone(),
            vehicles: ds.timeline.vehicles.clone(),
            frames: ds.timeline.ego_poses.len(),
        },
    )?;
    let poses: Vec<PoseLine> = ds
        .timeline
        .ego_poses
        .iter()
        .enumerate()
        .map(|(t, p)| PoseLine {
            t,
            ego_to_world: p.into(),
            action: ds.timeline.actions.get(t).map(PoseRecord::from),
        })
        .collect();
    write_jsonl(dir.join("poses.jsonl"), &poses)?;
    write_jsonl(dir.join("boxes.jsonl"), &ds.timeline.boxes)?;
    for (t, cams) in ds.features.iter().enumerate() {
        for (j, f) in cams.iter().enumerate() {
            write_bgrid(camera_file(dir, t, j, "content"), &f.content)?;
            write_bgrid(camera_file(dir, t, j, "depth"), &f.depth_logits)?;
        }
    }
    for (t, l) in ds.labels.iter().enumerate() {
        write_bgrid(label_file(dir, t, "segmentation"), &Field3D::from(l.segmentation.clone()))?;
        write_bgrid(label_file(dir, t, "instance"), &l.instance.to_field())?;
        write_bgrid(label_file(dir, t, "centerness"), &Field3D::from(l.centerness.clone()))?;
        write_bgrid(label_file(dir, t, "offset"), &l.offset)?;
        write_bgrid(label_file(dir, t, "flow"), &l.flow)?;
    }
    Ok(())
}

/// Builds the dataset and writes it to `dir`.
pub fn make_dataset(cfg: &SceneConfig, dir: &Path) -> Result<Dataset> {
    let ds = build_dataset(cfg)?;
    write_dataset(&ds, dir)?;
    Ok(ds)
}

fn single_channel(f: Field3D<f64>, path: &Path) -> Result<crate::fields::Field2D<f64>> {
    if f.channels() != 1 {
        return Err(Error::format(path, format!("expected 1 channel, got {}", f.channels())));
    }
    Ok(f.channel(0))
}

/// Reads frame labels `t` from a bundle; `vanished` is rederived from the next frame.
pub fn load_labels(dir: &Path, frames: usize) -> Result<Vec<FrameLabels>> {
    let mut maps = Vec::with_capacity(frames);
    for t in 0..frames {
        let p = label_file(dir, t, "instance");
        maps.push(InstanceMap::from_field(&read_bgrid(&p)?).map_err(|e| Error::format(&p, e.to_string()))?);
    }
    (0..frames)
        .map(|t| {
            let seg_path = label_file(dir, t, "segmentation");
            let cen_path = label_file(dir, t, "centerness");
            let vanished = match maps.get(t + 1) {
                Some(next) => maps[t]
                    .instance_ids()
                    .into_iter()
                    .filter(|id| !next.instance_ids().contains(id))
                    .collect(),
                None => Vec::new(),
            };
            Ok(FrameLabels {
                segmentation: single_channel(read_bgrid(&seg_path)?, &seg_path)?,
                instance: maps[t].clone(),
                centerness: single_channel(read_bgrid(&cen_path)?, &cen_path)?,
                offset: read_bgrid(label_file(dir, t, "offset"))?,
                flow: read_bgrid(label_file(dir, t, "flow"))?,
                vanished,
            })
        })
        .collect()
}

/// Reads a bundle written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let scene: SceneRecord = read_json(dir.join("scene.json"))?;
    let poses_path = dir.join("poses.jsonl");
    let poses: Vec<PoseLine> = read_jsonl(&poses_path)?;
    if poses.len() != scene.frames {
        return Err(Error::format(
            &poses_path,
            format!("{} pose lines for {} frames", poses.len(), scene.frames),
        ));
    }
    let ego_poses = poses
        .iter()
        .map(|p| SE3Pose::try_from(&p.ego_to_world))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(&poses_path, e.to_string()))?;
    let actions = poses
        .iter()
        .filter_map(|p| p.action.as_ref().map(SE3Pose::try_from))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(&poses_path, e.to_string()))?;
    let boxes_path = dir.join("boxes.jsonl");
    let boxes: Vec<Vec<BevBox>> = read_jsonl(&boxes_path)?;
    if boxes.len() != scene.frames {
        return Err(Error::format(
            &boxes_path,
            format!("{} box lines for {} frames", boxes.len(), scene.frames),
        ));
    }
    let n_cams = scene.config.rig.cameras.len();
    let features = (0..scene.frames)
        .map(|t| {
            (0..n_cams)
                .map(|j| {
                    let content = read_bgrid(camera_file(dir, t, j, "content"))?;
                    let depth_path = camera_file(dir, t, j, "depth");
                    let depth = read_bgrid(&depth_path)?;
                    CameraFeature::new(content, depth).map_err(|e| Error::format(&depth_path, e.to_string()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = load_labels(dir, scene.frames)?;
    Ok(Dataset {
        config: scene.config,
        timeline: SceneTimeline {
            vehicles: scene.vehicles,
            ego_poses,
            actions,
            boxes,
        },
        features,
        labels,
    })
}

/// Cameras, depth bins and grid of a scene.
pub fn rig_parts(cfg: &SceneConfig) -> Result<(Vec<Camera<f64>>, DepthBins<f64>, BevGridSpec<f64>)> {
    Ok((cfg.rig.build_cameras()?, cfg.rig.depth_bins.build()?, cfg.rig.grid.build()?))
}
