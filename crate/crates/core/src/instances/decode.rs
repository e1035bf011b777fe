use rayon::prelude::*;

use super::track::{track_step, MatchRecord};
use super::{DecodeParams, InstanceMap};
use crate::camera::BevGridSpec;
use crate::fields::{Field2D, Field3D};
use crate::{Error, Result};

/// Local maxima of a centerness map, in row-major order.
///
/// A cell survives if it reaches the threshold and beats every other cell in
/// its window; on a plateau only the smallest row-major index survives.
pub fn nms_peaks(centerness: &Field2D<f64>, p: &DecodeParams) -> Result<Vec<(usize, usize)>> {
    p.validate()?;
    let (h, w) = centerness.shape();
    let half = p.nms_window / 2;
    let mut out = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let v = centerness.get(row, col);
            if !(v >= p.center_threshold) {
                continue;
            }
            let own = row * w + col;
            let mut keep = true;
            'scan: for nr in row.saturating_sub(half)..(row + half + 1).min(h) {
                for nc in col.saturating_sub(half)..(col + half + 1).min(w) {
                    let idx = nr * w + nc;
                    if idx == own {
                        continue;
                    }
                    let nv = centerness.get(nr, nc);
                    if nv > v || (nv == v && idx < own) {
                        keep = false;
                        break 'scan;
                    }
                }
            }
            if keep {
                out.push((row, col));
            }
        }
    }
    Ok(out)
}

/// Result of grouping foreground cells around centers.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelAssignment {
    /// Ids are 1-based indices into the center list.
    pub map: InstanceMap,
    /// Set when foreground exists but no center was found.
    pub diagnostic: Option<String>,
}

/// Assigns each foreground cell (`seg > 0.5`) to the center nearest its offset vote.
pub fn assign_pixels(seg: &Field2D<f64>, offsets: &Field3D<f64>, centers: &[(usize, usize)]) -> Result<PixelAssignment> {
    let (h, w) = seg.shape();
    if offsets.shape() != (2, h, w) {
        return Err(Error::Shape(format!(
            "offsets must be 2x{h}x{w}, got {:?}",
            offsets.shape()
        )));
    }
    let mut map = InstanceMap::zeros(h, w);
    let mut foreground = 0usize;
    for row in 0..h {
        for col in 0..w {
            if !(seg.get(row, col) > 0.5) {
                continue;
            }
            foreground += 1;
            let vr = row as f64 + offsets.get(0, row, col);
            let vc = col as f64 + offsets.get(1, row, col);
            let mut best: Option<(usize, f64)> = None;
            for (k, (cr, cc)) in centers.iter().enumerate() {
                let d = (vr - *cr as f64).powi(2) + (vc - *cc as f64).powi(2);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            if let Some((k, _)) = best {
                map.set(row, col, k as u32 + 1);
            }
        }
    }
    let diagnostic = (centers.is_empty() && foreground > 0)
        .then(|| format!("{foreground} foreground cells but no instance centers; left unassigned"));
    Ok(PixelAssignment { map, diagnostic })
}

/// Semantic head input: a binary mask or two-class logits (class 1 is vehicle).
#[derive(Clone, Debug, PartialEq)]
pub enum SegmentationHead {
    Binary(Field2D<f64>),
    Logits(Field3D<f64>),
}

impl SegmentationHead {
    /// Binary foreground mask; logit ties go to background.
    pub fn foreground(&self) -> Result<Field2D<f64>> {
        match self {
            Self::Binary(m) => Ok(m.map(|v| if v > 0.5 { 1.0 } else { 0.0 })),
            Self::Logits(l) => {
                let (c, h, w) = l.shape();
                if c != 2 {
                    return Err(Error::Shape(format!("segmentation logits need 2 channels, got {c}")));
                }
                Ok(Field2D::from_fn(h, w, |r, col| {
                    if l.get(1, r, col) > l.get(0, r, col) {
                        1.0
                    } else {
                        0.0
                    }
                }))
            }
        }
    }
}

/// Per-timestep head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeHeads {
    pub segmentation: SegmentationHead,
    pub centerness: Field2D<f64>,
    /// `(Δrow, Δcol)` toward the instance center.
    pub offset: Field3D<f64>,
    /// `(Δrow, Δcol)` displacement from this step to the next.
    pub flow: Field3D<f64>,
}

/// Temporally consistent instance maps plus the tracking log.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedSequence {
    pub maps: Vec<InstanceMap>,
    pub matches: Vec<MatchRecord>,
    pub diagnostics: Vec<String>,
}

struct FrameDecode {
    centers: Vec<(usize, usize)>,
    assign: PixelAssignment,
}

fn decode_frame(heads: &DecodeHeads, p: &DecodeParams) -> Result<FrameDecode> {
    let seg = heads.segmentation.foreground()?;
    if heads.centerness.shape() != seg.shape() || heads.flow.shape() != (2, seg.height(), seg.width()) {
        return Err(Error::Shape("decode heads disagree on spatial shape".into()));
    }
    let centers = nms_peaks(&heads.centerness, p)?;
    let assign = assign_pixels(&seg, &heads.offset, &centers)?;
    Ok(FrameDecode { centers, assign })
}

/// Decodes every step in parallel, then chains ids through time.
pub fn decode_sequence(heads: &[DecodeHeads], p: &DecodeParams, grid: &BevGridSpec<f64>) -> Result<DecodedSequence> {
    if heads.is_empty() {
        return Err(Error::Empty("decode_sequence heads"));
    }
    p.validate()?;
    let frames = heads
        .par_iter()
        .map(|h| decode_frame(h, p))
        .collect::<Result<Vec<_>>>()?;
    let shape = frames[0].assign.map.shape();
    if frames.iter().any(|f| f.assign.map.shape() != shape) {
        return Err(Error::Shape("decode heads change shape over time".into()));
    }

    let mut diagnostics = Vec::new();
    for (t, f) in frames.iter().enumerate() {
        if let Some(d) = &f.assign.diagnostic {
            diagnostics.push(format!("step {t}: {d}"));
        }
        let frag = f.assign.map.fragmented_ids();
        if !frag.is_empty() {
            diagnostics.push(format!("step {t}: fragmented instances {frag:?}"));
        }
    }

    let mut maps = Vec::with_capacity(frames.len());
    let mut matches = Vec::new();
    maps.push(frames[0].assign.map.clone());
    let mut next_id = frames[0].centers.len() as u32 + 1;
    for t in 1..frames.len() {
        let step = track_step(
            &maps[t - 1],
            &heads[t - 1].flow,
            &frames[t].centers,
            &frames[t].assign.map,
            p,
            grid,
            t,
            &mut next_id,
        )?;
        matches.extend(step.matches);
        maps.push(step.map);
    }
    Ok(DecodedSequence {
        maps,
        matches,
        diagnostics,
    })
}
