use std::collections::BTreeMap;

use super::{BevBox, InstanceMap};
use crate::camera::BevGridSpec;
use crate::fields::{Field2D, Field3D};
use crate::{Error, Result};

/// Default centerness spread, in cells.
pub const CENTERNESS_SIGMA: f64 = 3.0;

/// Rasterizes box footprints by cell-center inclusion. Overlaps go to the larger id.
pub fn boxes_to_occupancy(boxes: &[BevBox], grid: &BevGridSpec<f64>) -> Result<(Field2D<f64>, InstanceMap)> {
    let (h, w) = (grid.height(), grid.width());
    let mut inst = InstanceMap::zeros(h, w);
    let res = grid.resolution();
    for b in boxes {
        b.validate()?;
        let corners = b.corners();
        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in corners {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        // Candidate cells: centers within the axis-aligned hull, padded by one cell.
        let col_range = cell_range(x_lo, x_hi, res, w);
        let row_range = cell_range(y_lo, y_hi, res, h);
        for row in row_range.clone() {
            for col in col_range.clone() {
                let (x, y) = grid.cell_center(row, col);
                if b.contains(x, y) && b.instance_id > inst.get(row, col) {
                    inst.set(row, col, b.instance_id);
                }
            }
        }
    }
    Ok((inst.foreground(), inst))
}

fn cell_range(lo: f64, hi: f64, res: f64, n: usize) -> std::ops::Range<usize> {
    let half = n as f64 / 2.0;
    let first = (lo / res + half).floor() - 1.0;
    let last = (hi / res + half).floor() + 1.0;
    let first = first.max(0.0).min(n as f64) as usize;
    let last = (last + 1.0).max(0.0).min(n as f64) as usize;
    first..last.max(first)
}

/// Max over instances of an isotropic Gaussian around each center of mass.
pub fn centerness_label(inst: &InstanceMap, sigma: f64) -> Result<Field2D<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let centers: Vec<(f64, f64)> = inst.centers_of_mass().into_values().collect();
    let denom = 2.0 * sigma * sigma;
    Ok(Field2D::from_fn(inst.height(), inst.width(), |row, col| {
        centers
            .iter()
            .map(|(r, c)| {
                let (dr, dc) = (row as f64 - r, col as f64 - c);
                (-(dr * dr + dc * dc) / denom).exp()
            })
            .fold(0.0, f64::max)
    }))
}

/// Two channels `(Δrow, Δcol)` from each instance cell to its center of mass.
pub fn offset_label(inst: &InstanceMap) -> Field3D<f64> {
    let com = inst.centers_of_mass();
    let (h, w) = inst.shape();
    let mut out = Field3D::zeros(2, h, w);
    for row in 0..h {
        for col in 0..w {
            let id = inst.get(row, col);
            if id != 0 {
                let (r, c) = com[&id];
                out.set(0, row, col, r - row as f64);
                out.set(1, row, col, c - col as f64);
            }
        }
    }
    out
}

/// Flow targets at time `t` and the ids that have no counterpart at `t+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowLabel {
    pub flow: Field3D<f64>,
    pub vanished: Vec<u32>,
}

/// Center-of-mass displacement of each instance between consecutive frames.
pub fn flow_label(inst_t: &InstanceMap, inst_t1: &InstanceMap) -> Result<FlowLabel> {
    if inst_t.shape() != inst_t1.shape() {
        return Err(Error::Shape(format!(
            "flow label maps differ: {:?} vs {:?}",
            inst_t.shape(),
            inst_t1.shape()
        )));
    }
    let now = inst_t.centers_of_mass();
    let next = inst_t1.centers_of_mass();
    let displacement: BTreeMap<u32, (f64, f64)> = now
        .iter()
        .filter_map(|(id, (r, c))| next.get(id).map(|(r1, c1)| (*id, (r1 - r, c1 - c))))
        .collect();
    let vanished = now.keys().filter(|id| !next.contains_key(id)).copied().collect();
    let (h, w) = inst_t.shape();
    let mut flow = Field3D::zeros(2, h, w);
    for row in 0..h {
        for col in 0..w {
            if let Some((dr, dc)) = displacement.get(&inst_t.get(row, col)) {
                flow.set(0, row, col, *dr);
                flow.set(1, row, col, *dc);
            }
        }
    }
    Ok(FlowLabel { flow, vanished })
}

/// All label targets for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabels {
    pub segmentation: Field2D<f64>,
    pub instance: InstanceMap,
    pub centerness: Field2D<f64>,
    pub offset: Field3D<f64>,
    /// Zero on the last frame, which has no successor.
    pub flow: Field3D<f64>,
    pub vanished: Vec<u32>,
}

/// Labels for a sequence of instance maps sharing one id space.
pub fn generate_labels(maps: &[InstanceMap], sigma: f64) -> Result<Vec<FrameLabels>> {
    maps.iter()
        .enumerate()
        .map(|(t, inst)| {
            let (flow, vanished) = match maps.get(t + 1) {
                Some(next) => {
                    let f = flow_label(inst, next)?;
                    (f.flow, f.vanished)
                }
                None => (Field3D::zeros(2, inst.height(), inst.width()), Vec::new()),
            };
            Ok(FrameLabels {
                segmentation: inst.foreground(),
                instance: inst.clone(),
                centerness: centerness_label(inst, sigma)?,
                offset: offset_label(inst),
                flow,
                vanished,
            })
        })
        .collect()
}
