use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{hungarian, DecodeParams, InstanceMap};
use crate::camera::BevGridSpec;
use crate::fields::Field3D;
use crate::{Error, Result};

/// One accepted match between consecutive steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRecord {
    /// Index of the later frame.
    pub step: usize,
    pub previous_id: u32,
    /// 1-based center index in the later frame before relabeling.
    pub current_index: u32,
    /// Id carried by the instance after relabeling.
    pub id: u32,
    pub distance_m: f64,
}

/// Output of one tracking step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackStep {
    pub map: InstanceMap,
    pub matches: Vec<MatchRecord>,
    /// Previous ids with no successor.
    pub retired: Vec<u32>,
    /// Fresh ids handed out this step.
    pub issued: Vec<u32>,
}

/// Carries ids from `prev` onto `current_assign`.
///
/// Previous centers of mass are moved by the mean flow over their cells and
/// matched to current centers of mass by distance in meters. Centers that
/// attracted no cells take no part.
#[allow(clippy::too_many_arguments)]
pub fn track_step(
    prev: &InstanceMap,
    prev_flow: &Field3D<f64>,
    current_centers: &[(usize, usize)],
    current_assign: &InstanceMap,
    p: &DecodeParams,
    grid: &BevGridSpec<f64>,
    step: usize,
    next_id: &mut u32,
) -> Result<TrackStep> {
    let (h, w) = prev.shape();
    if current_assign.shape() != (h, w) || prev_flow.shape() != (2, h, w) {
        return Err(Error::Shape("track_step inputs disagree on shape".into()));
    }
    let res = grid.resolution();

    let warped: Vec<(u32, (f64, f64))> = prev
        .regions()
        .into_iter()
        .map(|(id, cells)| {
            let n = cells.len() as f64;
            let (mut r, mut c, mut fr, mut fc) = (0.0, 0.0, 0.0, 0.0);
            for (row, col) in &cells {
                r += *row as f64;
                c += *col as f64;
                fr += prev_flow.get(0, *row, *col);
                fc += prev_flow.get(1, *row, *col);
            }
            (id, (r / n + fr / n, c / n + fc / n))
        })
        .collect();

    let current: Vec<(u32, (f64, f64))> = current_assign.centers_of_mass().into_iter().collect();
    if let Some((id, _)) = current.last() {
        if *id as usize > current_centers.len() {
            return Err(Error::Shape(format!(
                "assignment id {id} exceeds the {} current centers",
                current_centers.len()
            )));
        }
    }

    let cost: Vec<Vec<f64>> = warped
        .iter()
        .map(|(_, (pr, pc))| {
            current
                .iter()
                .map(|(_, (cr, cc))| ((pr - cr).powi(2) + (pc - cc).powi(2)).sqrt() * res)
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost)?;

    let mut mapping = BTreeMap::new();
    let mut matches = Vec::new();
    for (i, j) in assignment.pairs {
        let d = cost[i][j];
        if d <= p.max_match_distance {
            let (prev_id, local) = (warped[i].0, current[j].0);
            mapping.insert(local, prev_id);
            matches.push(MatchRecord {
                step,
                previous_id: prev_id,
                current_index: local,
                id: prev_id,
                distance_m: d,
            });
        }
    }
    let mut issued = Vec::new();
    for (local, _) in &current {
        if !mapping.contains_key(local) {
            mapping.insert(*local, *next_id);
            issued.push(*next_id);
            *next_id += 1;
        }
    }
    let kept: Vec<u32> = matches.iter().map(|m| m.previous_id).collect();
    let retired = warped
        .iter()
        .map(|(id, _)| *id)
        .filter(|id| !kept.contains(id))
        .collect();
    matches.sort_by_key(|m| m.current_index);
    Ok(TrackStep {
        map: current_assign.relabel(&mapping),
        matches,
        retired,
        issued,
    })
}
