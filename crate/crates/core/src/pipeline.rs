//! Bundle-level orchestration: encode every frame, align the history to the
//! present, decode label-grade heads into tracked instances and score them.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::encode_observation;
use crate::egomotion::align_history;
use crate::fields::FieldSeq;
use crate::instances::{decode_sequence, DecodeHeads, DecodeParams, FrameLabels, InstanceMap, MatchRecord, SegmentationHead};
use crate::io::{write_bgrid, write_json};
use crate::metrics::{crop_to_range, iou, vpq, Range, VpqInput, VpqReport};
use crate::synth::{load_dataset, rig_parts};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub frames: usize,
    pub cameras: usize,
    /// Mean foreground IoU of decoded maps against the bundle labels.
    pub iou: f64,
    pub vpq: f64,
    pub vpq_short: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: usize,
    /// Sum of the aligned BeV features over all frames.
    pub bev_mass: f64,
    pub diagnostics: Vec<String>,
}

/// Heads built directly from labels (binary segmentation).
pub fn label_heads(labels: &[FrameLabels]) -> Vec<DecodeHeads> {
    labels
        .iter()
        .map(|l| DecodeHeads {
            segmentation: SegmentationHead::Binary(l.segmentation.clone()),
            centerness: l.centerness.clone(),
            offset: l.offset.clone(),
            flow: l.flow.clone(),
        })
        .collect()
}

/// VPQ of `pred` against `gt` restricted to `range`.
pub fn vpq_at_range(
    pred: &[InstanceMap],
    gt: &[InstanceMap],
    grid: &crate::camera::BevGridSpec<f64>,
    range: Range,
) -> Result<VpqReport> {
    let crop = |maps: &[InstanceMap]| {
        maps.iter()
            .map(|m| crop_to_range(m, grid, range))
            .collect::<Result<Vec<_>>>()
    };
    let (p, g) = (crop(pred)?, crop(gt)?);
    vpq(&VpqInput { pred: &p, gt: &g })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs the full chain on a bundle and writes `bev/`, `maps/`,
/// `match_log.json` and `summary.json` under `out`.
pub fn run_pipeline(bundle: &Path, params: &DecodeParams, out: &Path) -> Result<PipelineSummary> {
    let ds = load_dataset(bundle)?;
    let (cams, bins, grid) = rig_parts(&ds.config)?;

    let encoded = ds
        .features
        .par_iter()
        .map(|feats| {
            let pairs: Vec<_> = feats.iter().cloned().zip(cams.iter().copied()).collect();
            encode_observation(&pairs, &bins, &grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let aligned = align_history(&FieldSeq::new(encoded)?, &ds.timeline.actions, &grid)?;

    let decoded = decode_sequence(&label_heads(&ds.labels), params, &grid)?;
    let gt: Vec<InstanceMap> = ds.labels.iter().map(|l| l.instance.clone()).collect();
    let long = vpq_at_range(&decoded.maps, &gt, &grid, Range::Long)?;
    let short = vpq_at_range(&decoded.maps, &gt, &grid, Range::Short)?;
    let ious = decoded
        .maps
        .iter()
        .zip(&ds.labels)
        .map(|(m, l)| iou(&m.foreground(), &l.segmentation))
        .collect::<Result<Vec<_>>>()?;

    create_dir(&out.join("bev"))?;
    create_dir(&out.join("maps"))?;
    for (t, f) in aligned.elements().iter().enumerate() {
        write_bgrid(out.join("bev").join(format!("t{t:03}_aligned.bgrid")), f)?;
    }
    for (t, m) in decoded.maps.iter().enumerate() {
        write_bgrid(out.join("maps").join(format!("t{t:03}_instance.bgrid")), &m.to_field())?;
    }
    write_json(out.join("match_log.json"), &decoded.matches)?;

    let summary = PipelineSummary {
        frames: ds.labels.len(),
        cameras: cams.len(),
        iou: ious.iter().sum::<f64>() / ious.len() as f64,
        vpq: long.vpq,
        vpq_short: short.vpq,
        tp: long.tp,
        fp: long.fp,
        fn_: long.fn_,
        matches: decoded.matches.len(),
        bev_mass: aligned.elements().iter().flat_map(|f| f.as_slice()).sum(),
        diagnostics: decoded.diagnostics,
    };
    write_json(out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Match log entries grouped by step, for inspection.
pub fn matches_by_step(matches: &[MatchRecord]) -> Vec<Vec<&MatchRecord>> {
    let steps = matches.iter().map(|m| m.step).max().map_or(0, |s| s + 1);
    let mut out = vec![Vec::new(); steps];
    for m in matches {
        out[m.step].push(m);
    }
    out
}
