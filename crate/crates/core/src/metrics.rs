//! Segmentation IoU, video panoptic quality and the unified perception metric.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::BevGridSpec;
use crate::fields::Field2D;
use crate::instances::InstanceMap;
use crate::{Error, Result};

/// IoU of two binary masks (`> 0.5` is foreground); 1 when both are empty.
pub fn iou(pred: &Field2D<f64>, gt: &Field2D<f64>) -> Result<f64> {
    pred.check_same_shape(gt, "iou")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (p, g) = (*p > 0.5, *g > 0.5);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Predicted and ground-truth instance sequences over the same frames.
#[derive(Clone, Debug)]
pub struct VpqInput<'a> {
    pub pred: &'a [InstanceMap],
    pub gt: &'a [InstanceMap],
}

/// Counts for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpqStep {
    pub t: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub iou_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpqReport {
    pub vpq: f64,
    pub per_t: Vec<VpqStep>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Candidate `(pred id, gt id, iou)` pairs with IoU above one half, sorted by gt id.
fn candidate_matches(pred: &InstanceMap, gt: &InstanceMap) -> (Vec<(u32, u32, f64)>, Vec<u32>, Vec<u32>) {
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    let mut p_area: BTreeMap<u32, usize> = BTreeMap::new();
    let mut g_area: BTreeMap<u32, usize> = BTreeMap::new();
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if *p != 0 {
            *p_area.entry(*p).or_default() += 1;
        }
        if *g != 0 {
            *g_area.entry(*g).or_default() += 1;
        }
        if *p != 0 && *g != 0 {
            *inter.entry((*p, *g)).or_default() += 1;
        }
    }
    let mut pairs: Vec<(u32, u32, f64)> = inter
        .into_iter()
        .filter_map(|((p, g), n)| {
            let union = p_area[&p] + g_area[&g] - n;
            let v = n as f64 / union as f64;
            (v > 0.5).then_some((p, g, v))
        })
        .collect();
    pairs.sort_by_key(|(p, g, _)| (*g, *p));
    (pairs, p_area.into_keys().collect(), g_area.into_keys().collect())
}

/// Video panoptic quality pooled over all frames.
///
/// The first TP for a ground-truth track fixes its predicted id (and the
/// reverse); a later match that contradicts either direction counts as one
/// FP plus one FN. The mapping persists across frames where the track is absent.
pub fn vpq(input: &VpqInput<'_>) -> Result<VpqReport> {
    let (pred, gt) = (input.pred, input.gt);
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "vpq needs equal sequence lengths, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("vpq sequences"));
    }
    if pred.iter().chain(gt).any(|m| m.shape() != pred[0].shape()) {
        return Err(Error::Shape("vpq maps differ in shape".into()));
    }

    let candidates: Vec<_> = pred
        .par_iter()
        .zip(gt.par_iter())
        .map(|(p, g)| candidate_matches(p, g))
        .collect();

    let mut gt_to_pred: HashMap<u32, u32> = HashMap::new();
    let mut pred_to_gt: HashMap<u32, u32> = HashMap::new();
    let mut per_t = Vec::with_capacity(pred.len());
    let (mut tp, mut fp, mut fn_, mut num) = (0usize, 0usize, 0usize, 0.0f64);
    for (t, (pairs, p_ids, g_ids)) in candidates.into_iter().enumerate() {
        let mut step = VpqStep { t, tp: 0, fp: 0, fn_: 0, iou_sum: 0.0 };
        for (p, g, v) in pairs {
            let gt_ok = gt_to_pred.get(&g).is_none_or(|x| *x == p);
            let pred_ok = pred_to_gt.get(&p).is_none_or(|x| *x == g);
            if gt_ok && pred_ok {
                gt_to_pred.insert(g, p);
                pred_to_gt.insert(p, g);
                step.tp += 1;
                step.iou_sum += v;
            }
        }
        step.fp = p_ids.len() - step.tp;
        step.fn_ = g_ids.len() - step.tp;
        tp += step.tp;
        fp += step.fp;
        fn_ += step.fn_;
        num += step.iou_sum;
        per_t.push(step);
    }
    let denom = tp as f64 + 0.5 * (fp + fn_) as f64;
    let vpq = if denom == 0.0 { 1.0 } else { num / denom };
    Ok(VpqReport { vpq, per_t, tp, fp, fn_ })
}

/// Evaluation range for BeV metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Range {
    /// 30 m x 30 m around the ego vehicle.
    Short,
    /// 100 m x 100 m around the ego vehicle.
    Long,
}

impl Range {
    pub fn extent_m(self) -> f64 {
        match self {
            Self::Short => 30.0,
            Self::Long => 100.0,
        }
    }
}

/// Central crop of an instance map covering `range` (clipped to the grid).
pub fn crop_to_range(map: &InstanceMap, grid: &BevGridSpec<f64>, range: Range) -> Result<InstanceMap> {
    if map.shape() != (grid.height(), grid.width()) {
        return Err(Error::Shape(format!(
            "map {:?} does not match grid {}x{}",
            map.shape(),
            grid.height(),
            grid.width()
        )));
    }
    let cells = |extent: f64, n: usize| -> Result<(usize, usize)> {
        let want = extent / grid.resolution();
        if (want - want.round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "range {extent} m is not a whole number of cells"
            )));
        }
        let k = (want.round() as usize).min(n);
        let start = (n - k) / 2;
        Ok((start, k))
    };
    let (r0, rh) = cells(range.extent_m(), grid.height())?;
    let (c0, cw) = cells(range.extent_m(), grid.width())?;
    let mut ids = Vec::with_capacity(rh * cw);
    for r in r0..r0 + rh {
        for c in c0..c0 + cw {
            ids.push(map.get(r, c));
        }
    }
    InstanceMap::from_vec(rh, cw, ids)
}

/// Mean relative improvement over a baseline, in percent.
///
/// Depth and flow errors improve by decreasing, segmentation IoU by increasing.
pub fn m_perception(
    depth_base: f64,
    depth_new: f64,
    seg_base: f64,
    seg_new: f64,
    flow_base: f64,
    flow_new: f64,
) -> Result<f64> {
    let all = [depth_base, depth_new, seg_base, seg_new, flow_base, flow_new];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("m_perception"));
    }
    if depth_base == 0.0 || seg_base == 0.0 || flow_base == 0.0 {
        return Err(Error::InvalidParameter("m_perception baselines must be nonzero".into()));
    }
    let depth = (depth_base - depth_new) / depth_base;
    let seg = (seg_new - seg_base) / seg_base;
    let flow = (flow_base - flow_new) / flow_base;
    Ok((depth + seg + flow) / 3.0 * 100.0)
}
