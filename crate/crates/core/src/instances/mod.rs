//! BeV instance labels and the future-instance decoding and tracking pipeline.
//!
//! Instance centers, offsets and flows are expressed in continuous cell
//! coordinates `(row, col)`; integer coordinates are cell centers.

mod decode;
mod hungarian;
mod labels;
mod track;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

pub use decode::{assign_pixels, decode_sequence, nms_peaks, DecodeHeads, DecodedSequence, PixelAssignment, SegmentationHead};
pub use hungarian::{hungarian, Assignment};
pub use labels::{
    boxes_to_occupancy, centerness_label, flow_label, generate_labels, offset_label, FlowLabel,
    FrameLabels, CENTERNESS_SIGMA,
};
pub use track::{track_step, MatchRecord, TrackStep};

use crate::fields::{Field2D, Field3D};
use crate::{Error, Result};

/// Footprint of a vehicle in the ego frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevBox {
    pub center_x: f64,
    pub center_y: f64,
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
    pub instance_id: u32,
}

impl BevBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box {} needs positive length and width",
                self.instance_id
            )));
        }
        if self.instance_id == 0 {
            return Err(Error::InvalidParameter("instance id 0 is reserved for background".into()));
        }
        if ![self.center_x, self.center_y, self.yaw].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("BevBox"));
        }
        Ok(())
    }

    /// Whether ego point `(x, y)` lies inside the rotated rectangle (edges inclusive).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        let along = c * dx + s * dy;
        let across = -s * dx + c * dy;
        along.abs() <= 0.5 * self.length && across.abs() <= 0.5 * self.width
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            (self.center_x + c * a - s * b, self.center_y + s * a + c * b)
        })
    }
}

/// Per-cell instance ids; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl InstanceMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ids: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::Shape(format!(
                "instance map {height}x{width} needs {} ids, got {}",
                height * width,
                ids.len()
            )));
        }
        Ok(Self { height, width, ids })
    }

    /// Reads ids from a single-channel field of non-negative integers.
    pub fn from_field(field: &Field3D<f64>) -> Result<Self> {
        let (c, h, w) = field.shape();
        if c != 1 {
            return Err(Error::Shape(format!("instance map needs 1 channel, got {c}")));
        }
        let ids = field
            .as_slice()
            .iter()
            .map(|v| {
                if *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64 {
                    Ok(*v as u32)
                } else {
                    Err(Error::InvalidParameter(format!("instance id {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(h, w, ids)
    }

    /// Single-channel field of ids (exact in f32 up to 2^24).
    pub fn to_field(&self) -> Field3D<f64> {
        Field3D::from_vec(
            1,
            self.height,
            self.width,
            self.ids.iter().map(|v| *v as f64).collect(),
        )
        .expect("shape consistent")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, id: u32) {
        self.ids[row * self.width + col] = id;
    }

    pub fn instance_ids(&self) -> BTreeSet<u32> {
        self.ids.iter().copied().filter(|id| *id != 0).collect()
    }

    /// Cells of each instance in row-major order.
    pub fn regions(&self) -> BTreeMap<u32, Vec<(usize, usize)>> {
        let mut out: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, id) in self.ids.iter().enumerate() {
            if *id != 0 {
                out.entry(*id).or_default().push((i / self.width, i % self.width));
            }
        }
        out
    }

    /// Mean cell coordinate `(row, col)` of every instance.
    pub fn centers_of_mass(&self) -> BTreeMap<u32, (f64, f64)> {
        let mut acc: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
        for (i, id) in self.ids.iter().enumerate() {
            if *id != 0 {
                let e = acc.entry(*id).or_insert((0.0, 0.0, 0));
                e.0 += (i / self.width) as f64;
                e.1 += (i % self.width) as f64;
                e.2 += 1;
            }
        }
        acc.into_iter()
            .map(|(id, (r, c, n))| (id, (r / n as f64, c / n as f64)))
            .collect()
    }

    /// Binary foreground mask.
    pub fn foreground(&self) -> Field2D<f64> {
        Field2D::from_vec(
            self.height,
            self.width,
            self.ids.iter().map(|id| if *id != 0 { 1.0 } else { 0.0 }).collect(),
        )
        .expect("shape consistent")
    }

    /// Ids whose cells do not form a single 4-connected region.
    pub fn fragmented_ids(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (id, cells) in self.regions() {
            let mut seen = vec![false; self.ids.len()];
            let start = cells[0];
            let mut queue = VecDeque::from([start]);
            seen[start.0 * self.width + start.1] = true;
            let mut reached = 0;
            while let Some((r, c)) = queue.pop_front() {
                reached += 1;
                let neighbors = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for (nr, nc) in neighbors {
                    if nr < self.height && nc < self.width {
                        let j = nr * self.width + nc;
                        if !seen[j] && self.ids[j] == id {
                            seen[j] = true;
                            queue.push_back((nr, nc));
                        }
                    }
                }
            }
            if reached != cells.len() {
                out.push(id);
            }
        }
        out
    }

    /// Applies an id mapping; ids missing from `mapping` become background.
    pub fn relabel(&self, mapping: &BTreeMap<u32, u32>) -> Self {
        Self {
            height: self.height,
            width: self.width,
            ids: self
                .ids
                .iter()
                .map(|id| {
                    if *id == 0 {
                        0
                    } else {
                        mapping.get(id).copied().unwrap_or(0)
                    }
                })
                .collect(),
        }
    }
}

/// Decoding hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeParams {
    pub center_threshold: f64,
    /// Odd side length of the NMS neighborhood, in cells.
    pub nms_window: usize,
    /// Gate on warped-center distance, in meters.
    pub max_match_distance: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            center_threshold: 0.1,
            nms_window: 5,
            max_match_distance: 2.5,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_threshold > 0.0 && self.center_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "center_threshold must lie in (0, 1), got {}",
                self.center_threshold
            )));
        }
        if self.nms_window < 3 || self.nms_window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "nms_window must be odd and >= 3, got {}",
                self.nms_window
            )));
        }
        if !(self.max_match_distance >= 0.0) {
            return Err(Error::InvalidParameter("max_match_distance must be >= 0".into()));
        }
        Ok(())
    }
}
