//! The three-task evaluation protocol: destination accuracy and trajectory
//! fidelity (task 1), retrieval quality (task 2), and captioning quality
//! (task 3), including oracle variants and routing diagnostics.

pub mod text;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, CellId, GeoPoint, HexConfig};
use crate::roadnet::{self, HopDistance, RoadGraph};
use crate::traj::{self, Trajectory};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid EDR threshold: {0}")]
    InvalidEps(f64),
    #[error("ground-truth route has zero length")]
    ZeroLengthTruth,
    #[error("misaligned item ids: {0}")]
    MisalignedIds(String),
    #[error(transparent)]
    Roadnet(#[from] roadnet::RoadnetError),
    #[error(transparent)]
    Traj(#[from] traj::TrajError),
    #[error(transparent)]
    Geo(#[from] geo::GeoError),
}

/// Default EDR spatial threshold in kilometers, on the order of one hex
/// cell.
pub const DEFAULT_EDR_EPS_KM: f64 = 0.1;

/// Default Jaccard threshold for soft recall.
pub const DEFAULT_SR_THRESHOLD: f64 = 0.8;

/// J@K aggregation form. The max form guarantees monotonicity in K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum JkForm {
    #[default]
    Max,
    Mean,
}

fn endpoint(t: &Trajectory, g: &RoadGraph) -> Result<GeoPoint, MetricsError> {
    let last = *t.rid_list.last().ok_or(MetricsError::EmptySequence)?;
    Ok(g.segment(last)?.end)
}

fn last_cell(t: &Trajectory, g: &RoadGraph, cfg: &HexConfig) -> Result<CellId, MetricsError> {
    let last = *t.rid_list.last().ok_or(MetricsError::EmptySequence)?;
    Ok(traj::dominant_cell(g.segment(last)?, cfg)?)
}

/// 1 iff the dominant cell of the prediction's last segment matches the
/// ground truth's.
pub fn dest_hit(
    pred: &Trajectory,
    gt: &Trajectory,
    g: &RoadGraph,
    cfg: &HexConfig,
) -> Result<bool, MetricsError> {
    Ok(last_cell(pred, g, cfg)? == last_cell(gt, g, cfg)?)
}

/// Geodesic distance in km between predicted and ground-truth endpoints
/// (the end point of each last segment).
pub fn endpoint_dist_km(
    pred: &Trajectory,
    gt: &Trajectory,
    g: &RoadGraph,
) -> Result<f64, MetricsError> {
    Ok(geo::haversine_km(endpoint(pred, g)?, endpoint(gt, g)?)?)
}

/// 1 iff the predicted endpoint segment is within `k` road-segment hops of
/// the ground-truth endpoint segment (undirected view).
pub fn hit_at_k(
    pred: &Trajectory,
    gt: &Trajectory,
    g: &RoadGraph,
    k: u32,
) -> Result<bool, MetricsError> {
    let a = *pred.rid_list.last().ok_or(MetricsError::EmptySequence)?;
    let b = *gt.rid_list.last().ok_or(MetricsError::EmptySequence)?;
    Ok(matches!(roadnet::hop_distance(g, a, b, k)?, HopDistance::Hops(_)))
}

/// The set of dominant cells traversed by a trajectory.
pub fn visited_cells(
    t: &Trajectory,
    g: &RoadGraph,
    cfg: &HexConfig,
) -> Result<BTreeSet<CellId>, MetricsError> {
    let segs = t.segments(g)?;
    let mut out = BTreeSet::new();
    for s in segs {
        out.insert(traj::dominant_cell(s, cfg)?);
    }
    Ok(out)
}

/// Jaccard similarity over the traversed cell sets.
pub fn jaccard_cells(
    pred: &Trajectory,
    gt: &Trajectory,
    g: &RoadGraph,
    cfg: &HexConfig,
) -> Result<f64, MetricsError> {
    let a = visited_cells(pred, g, cfg)?;
    let b = visited_cells(gt, g, cfg)?;
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    if union == 0 {
        return Err(MetricsError::EmptySequence);
    }
    Ok(inter as f64 / union as f64)
}

/// Classic dynamic time warping with haversine ground cost, full window,
/// sum aggregation. Kilometers.
pub fn dtw_km(a: &[GeoPoint], b: &[GeoPoint]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let n = a.len();
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let d = geo::haversine_km(a[i - 1], b[j - 1])?;
            cur[j] = d + prev[j].min(cur[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Symmetric Hausdorff distance (km) over point sets.
pub fn hausdorff_km(a: &[GeoPoint], b: &[GeoPoint]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let directed = |from: &[GeoPoint], to: &[GeoPoint]| -> Result<f64, MetricsError> {
        let mut worst: f64 = 0.0;
        for &p in from {
            let mut best = f64::INFINITY;
            for &q in to {
                best = best.min(geo::haversine_km(p, q)?);
            }
            worst = worst.max(best);
        }
        Ok(worst)
    };
    Ok(directed(a, b)?.max(directed(b, a)?))
}

/// Edit distance on real sequences: two points match (cost 0) when within
/// `eps_km`, otherwise substitution/insertion/deletion cost 1. Normalized
/// by the longer sequence length, so the result lies in [0, 1].
pub fn edr(a: &[GeoPoint], b: &[GeoPoint], eps_km: f64) -> Result<f64, MetricsError> {
    if eps_km <= 0.0 || !eps_km.is_finite() {
        return Err(MetricsError::InvalidEps(eps_km));
    }
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let n = a.len();
    let m = b.len();
    let mut prev: Vec<u32> = (0..=m as u32).collect();
    let mut cur = vec![0u32; m + 1];
    for i in 1..=n {
        cur[0] = i as u32;
        for j in 1..=m {
            let sub = if geo::haversine_km(a[i - 1], b[j - 1])? <= eps_km {
                0
            } else {
                1
            };
            cur[j] = (prev[j - 1] + sub).min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] as f64 / n.max(m) as f64)
}

/// Over-/under-routing flags: route length above 1.5x or below 0.5x the
/// ground-truth length.
pub fn route_length_flags(
    pred: &Trajectory,
    gt: &Trajectory,
    g: &RoadGraph,
) -> Result<(bool, bool), MetricsError> {
    let pl = g.path_length_m(&pred.rid_list)?;
    let gl = g.path_length_m(&gt.rid_list)?;
    if gl <= 0.0 {
        return Err(MetricsError::ZeroLengthTruth);
    }
    let ratio = pl / gl;
    Ok((ratio > 1.5, ratio < 0.5))
}

/// Oracle candidate selection: the candidate whose endpoint is closest to
/// the ground-truth endpoint, first occurrence on ties.
pub fn oracle_select<'a>(
    candidates: &'a [Trajectory],
    gt: &Trajectory,
    g: &RoadGraph,
) -> Result<&'a Trajectory, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let mut best = &candidates[0];
    let mut best_d = endpoint_dist_km(best, gt, g)?;
    for cand in &candidates[1..] {
        let d = endpoint_dist_km(cand, gt, g)?;
        if d < best_d {
            best = cand;
            best_d = d;
        }
    }
    Ok(best)
}

/// Mean task-1 metrics over a batch of (prediction, ground-truth) pairs,
/// with oracle counterparts when oracle predictions are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task1Report {
    pub dest_hit: f64,
    pub dist_km: f64,
    pub h_at: BTreeMap<u32, f64>,
    pub jaccard: f64,
    pub dtw_km: f64,
    pub hausdorff_km: f64,
    pub edr: f64,
    pub over_rt: f64,
    pub under_rt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_dest_hit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_dist_km: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_h_at: Option<BTreeMap<u32, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_jaccard: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_dtw_km: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_hausdorff_km: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_edr: Option<f64>,
    pub n_queries: usize,
}

struct Task1Accumulator {
    dest_hit: f64,
    dist: f64,
    h_at: BTreeMap<u32, f64>,
    jac: f64,
    dtw: f64,
    haus: f64,
    edr: f64,
    over: f64,
    under: f64,
}

fn task1_accumulate(
    preds: &[Trajectory],
    gts: &[Trajectory],
    g: &RoadGraph,
    cfg: &HexConfig,
    ks: &[u32],
    eps_km: f64,
) -> Result<Task1Accumulator, MetricsError> {
    let n = preds.len() as f64;
    let mut acc = Task1Accumulator {
        dest_hit: 0.0,
        dist: 0.0,
        h_at: ks.iter().map(|&k| (k, 0.0)).collect(),
        jac: 0.0,
        dtw: 0.0,
        haus: 0.0,
        edr: 0.0,
        over: 0.0,
        under: 0.0,
    };
    for (pred, gt) in preds.iter().zip(gts) {
        acc.dest_hit += dest_hit(pred, gt, g, cfg)? as u8 as f64;
        acc.dist += endpoint_dist_km(pred, gt, g)?;
        for &k in ks {
            *acc.h_at.get_mut(&k).unwrap() += hit_at_k(pred, gt, g, k)? as u8 as f64;
        }
        acc.jac += jaccard_cells(pred, gt, g, cfg)?;
        let pa = pred.points(g)?;
        let pb = gt.points(g)?;
        acc.dtw += dtw_km(&pa, &pb)?;
        acc.haus += hausdorff_km(&pa, &pb)?;
        acc.edr += edr(&pa, &pb, eps_km)?;
        let (o, u) = route_length_flags(pred, gt, g)?;
        acc.over += o as u8 as f64;
        acc.under += u as u8 as f64;
    }
    acc.dest_hit /= n;
    acc.dist /= n;
    for v in acc.h_at.values_mut() {
        *v /= n;
    }
    acc.jac /= n;
    acc.dtw /= n;
    acc.haus /= n;
    acc.edr /= n;
    acc.over /= n;
    acc.under /= n;
    Ok(acc)
}

pub fn task1_report(
    preds: &[Trajectory],
    oracle_preds: Option<&[Trajectory]>,
    gts: &[Trajectory],
    g: &RoadGraph,
    cfg: &HexConfig,
    ks: &[u32],
    eps_km: f64,
) -> Result<Task1Report, MetricsError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(MetricsError::MisalignedIds(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let acc = task1_accumulate(preds, gts, g, cfg, ks, eps_km)?;
    let oracle = match oracle_preds {
        Some(op) => {
            if op.len() != gts.len() {
                return Err(MetricsError::MisalignedIds(format!(
                    "{} oracle predictions vs {} ground truths",
                    op.len(),
                    gts.len()
                )));
            }
            Some(task1_accumulate(op, gts, g, cfg, ks, eps_km)?)
        }
        None => None,
    };
    Ok(Task1Report {
        dest_hit: acc.dest_hit,
        dist_km: acc.dist,
        h_at: acc.h_at,
        jaccard: acc.jac,
        dtw_km: acc.dtw,
        hausdorff_km: acc.haus,
        edr: acc.edr,
        over_rt: acc.over,
        under_rt: acc.under,
        o_dest_hit: oracle.as_ref().map(|o| o.dest_hit),
        o_dist_km: oracle.as_ref().map(|o| o.dist),
        o_h_at: oracle.as_ref().map(|o| o.h_at.clone()),
        o_jaccard: oracle.as_ref().map(|o| o.jac),
        o_dtw_km: oracle.as_ref().map(|o| o.dtw),
        o_hausdorff_km: oracle.as_ref().map(|o| o.haus),
        o_edr: oracle.as_ref().map(|o| o.edr),
        n_queries: preds.len(),
    })
}

/// Retrieval metrics over ranked lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task2Report {
    pub j_at: BTreeMap<u32, f64>,
    pub sr_at: BTreeMap<u32, f64>,
    pub r_at: BTreeMap<u32, f64>,
    pub mrr: f64,
    pub n_queries: usize,
}

/// Compute the task-2 report. `ranked[q]` is the ranked candidate id list
/// for query q, `gt_ids[q]` the matching trajectory id. J@K aggregates the
/// per-query Jaccard within the top K using `jk_form`; SR@K thresholds the
/// per-query best Jaccard; queries whose ground truth never appears in the
/// ranking contribute 0 to MRR.
#[allow(clippy::too_many_arguments)]
pub fn retrieval_report(
    ranked: &[Vec<u64>],
    gt_ids: &[u64],
    trajectories: &BTreeMap<u64, Trajectory>,
    g: &RoadGraph,
    cfg: &HexConfig,
    ks: &[u32],
    jac_threshold: f64,
    jk_form: JkForm,
) -> Result<Task2Report, MetricsError> {
    if ranked.is_empty() || ranked.len() != gt_ids.len() {
        return Err(MetricsError::MisalignedIds(format!(
            "{} ranked lists vs {} ground truths",
            ranked.len(),
            gt_ids.len()
        )));
    }
    let n = ranked.len() as f64;
    let mut j_at: BTreeMap<u32, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut sr_at = j_at.clone();
    let mut r_at = j_at.clone();
    let mut mrr = 0.0;

    for (list, &gt_id) in ranked.iter().zip(gt_ids) {
        if list.is_empty() {
            return Err(MetricsError::EmptySequence);
        }
        let gt = trajectories
            .get(&gt_id)
            .ok_or_else(|| MetricsError::MisalignedIds(format!("unknown gt id {gt_id}")))?;
        if let Some(rank) = list.iter().position(|&id| id == gt_id) {
            mrr += 1.0 / (rank + 1) as f64;
        }
        // Per-candidate Jaccard, computed once up to the largest K.
        let max_k = ks.iter().copied().max().unwrap_or(0) as usize;
        let jacs: Vec<f64> = list
            .iter()
            .take(max_k)
            .map(|id| {
                let cand = trajectories
                    .get(id)
                    .ok_or_else(|| MetricsError::MisalignedIds(format!("unknown candidate id {id}")))?;
                jaccard_cells(cand, gt, g, cfg)
            })
            .collect::<Result<_, _>>()?;
        for &k in ks {
            let top = &jacs[..jacs.len().min(k as usize)];
            if top.is_empty() {
                continue;
            }
            let best = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let j = match jk_form {
                JkForm::Max => best,
                JkForm::Mean => top.iter().sum::<f64>() / top.len() as f64,
            };
            *j_at.get_mut(&k).unwrap() += j;
            if best > jac_threshold {
                *sr_at.get_mut(&k).unwrap() += 1.0;
            }
            if list.iter().take(k as usize).any(|&id| id == gt_id) {
                *r_at.get_mut(&k).unwrap() += 1.0;
            }
        }
    }
    for map in [&mut j_at, &mut sr_at, &mut r_at] {
        for v in map.values_mut() {
            *v /= n;
        }
    }
    Ok(Task2Report {
        j_at,
        sr_at,
        r_at,
        mrr: mrr / n,
        n_queries: ranked.len(),
    })
}

/// Captioning metrics, averaged over items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task3Report {
    pub rouge_l: f64,
    pub meteor: f64,
    pub poi_recall: f64,
    pub n_loc_mean: f64,
    pub embedding_f1: Option<f64>,
    pub n_items: usize,
}
