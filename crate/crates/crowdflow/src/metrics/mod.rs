//! Evaluation metrics: mean absolute displacement (MAE), entropic optimal
//! transport (OT), final displacement error (FDE), maximum mean discrepancy
//! over pairwise-distance sets (MMD), dynamic time warping (DTW), and
//! collision count (COL).
//!
//! Point metrics pair frames valid on both sides; distributional metrics
//! (OT, MMD) compare per-frame position sets and average over eligible
//! frames. Reductions run in fixed index order.

mod dtw;
mod mmd;
mod sinkhorn;

pub use dtw::dtw;
pub use mmd::{mmd_squared, pairwise_distances};
pub use sinkhorn::{sinkhorn_uniform, SinkhornSolution};

#[cfg(test)]
pub(crate) use dtw::oracle::dtw_brute;
#[cfg(test)]
pub(crate) use sinkhorn::sinkhorn_dual_trace;

use crate::config::MetricsConfig;
use crate::scene::{Episode, Vec2};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One evaluation: the six metrics plus the configuration they were computed
/// under.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub ot: f64,
    pub fde: f64,
    pub mmd: f64,
    pub dtw: f64,
    pub col: u64,
    pub config: MetricEcho,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricEcho {
    pub ot_epsilon: f64,
    /// Bandwidth actually in effect; `None` echoes the median heuristic.
    pub mmd_bandwidth: Option<f64>,
    pub collision_threshold: f64,
    pub ot_debias: bool,
}

impl MetricReport {
    /// Stable one-line CSV row matching [`Self::csv_header`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.mae, self.ot, self.fde, self.mmd, self.dtw, self.col
        )
    }

    pub fn csv_header() -> &'static str {
        "mae,ot,fde,mmd,dtw,col"
    }
}

/// Average L2 displacement over frames valid in both episodes.
pub fn mae(pred: &Episode, gt: &Episode) -> Result<f64> {
    check_alignment(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..pred.num_pedestrians() {
        for t in 0..pred.num_frames().min(gt.num_frames()) {
            if let (Some(a), Some(b)) = (pred.position(p, t), gt.position(p, t)) {
                sum += a.distance(b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Metric("no mutually valid position pairs".into()));
    }
    Ok(sum / count as f64)
}

/// Mean displacement at each pedestrian's final mutually valid frame.
pub fn fde(pred: &Episode, gt: &Episode) -> Result<f64> {
    check_alignment(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..pred.num_pedestrians() {
        let last = (0..pred.num_frames().min(gt.num_frames()))
            .rev()
            .find(|t| pred.position(p, *t).is_some() && gt.position(p, *t).is_some());
        if let Some(t) = last {
            sum += pred.position(p, t).unwrap().distance(gt.position(p, t).unwrap());
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Metric("no pedestrian has a mutually valid final frame".into()));
    }
    Ok(sum / count as f64)
}

/// Per-frame entropic transport cost between the two position sets under
/// uniform weights, averaged over frames where both sets are nonempty.
pub fn ot(pred: &Episode, gt: &Episode, epsilon: f64, debias: bool) -> Result<f64> {
    let frames = pred.num_frames().min(gt.num_frames());
    let mut total = 0.0;
    let mut counted = 0usize;
    for t in 0..frames {
        let a: Vec<Vec2> = pred.frame_positions(t).into_iter().map(|(_, v)| v).collect();
        let b: Vec<Vec2> = gt.frame_positions(t).into_iter().map(|(_, v)| v).collect();
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let cost_ab = transport_cost(&a, &b, epsilon)?;
        let value = if debias {
            // Sinkhorn divergence: OT(a,b) - (OT(a,a) + OT(b,b)) / 2.
            let aa = transport_cost(&a, &a, epsilon)?;
            let bb = transport_cost(&b, &b, epsilon)?;
            cost_ab - 0.5 * (aa + bb)
        } else {
            cost_ab
        };
        total += value;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Metric("no frame has positions on both sides".into()));
    }
    Ok(total / counted as f64)
}

/// Entropic transport cost between two uniform point clouds under the
/// Euclidean cost matrix.
pub fn transport_cost(a: &[Vec2], b: &[Vec2], epsilon: f64) -> Result<f64> {
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for pa in a {
        for pb in b {
            cost.push(pa.distance(*pb));
        }
    }
    Ok(sinkhorn_uniform(&cost, a.len(), b.len(), epsilon)?.cost)
}

/// Per-frame squared MMD between the pairwise-distance multisets of the two
/// episodes, averaged over frames with at least two pedestrians on each side.
pub fn mmd(pred: &Episode, gt: &Episode, bandwidth: Option<f64>) -> Result<f64> {
    let frames = pred.num_frames().min(gt.num_frames());
    let mut total = 0.0;
    let mut counted = 0usize;
    for t in 0..frames {
        let a: Vec<Vec2> = pred.frame_positions(t).into_iter().map(|(_, v)| v).collect();
        let b: Vec<Vec2> = gt.frame_positions(t).into_iter().map(|(_, v)| v).collect();
        if a.len() < 2 || b.len() < 2 {
            continue;
        }
        let da = pairwise_distances(&a);
        let db = pairwise_distances(&b);
        total += mmd_squared(&da, &db, bandwidth)?;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Metric(
            "no frame has two pedestrians on both sides".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Mean DTW distance between each pedestrian's predicted and true valid
/// position sequences.
pub fn dtw_mean(pred: &Episode, gt: &Episode) -> Result<f64> {
    check_alignment(pred, gt)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for p in 0..pred.num_pedestrians() {
        let a: Vec<Vec2> = (0..pred.num_frames())
            .filter_map(|t| pred.position(p, t))
            .collect();
        let b: Vec<Vec2> = (0..gt.num_frames())
            .filter_map(|t| gt.position(p, t))
            .collect();
        if a.is_empty() || b.is_empty() {
            continue;
        }
        total += dtw(&a, &b)?;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Metric("no pedestrian has positions on both sides".into()));
    }
    Ok(total / counted as f64)
}

/// Number of (frame, unordered pair) events with pairwise distance strictly
/// below the threshold, over mutually valid pedestrians of one episode.
pub fn collision_count(episode: &Episode, threshold: f64) -> Result<u64> {
    if !(threshold > 0.0) {
        return Err(Error::Metric(format!(
            "collision threshold must be positive, got {threshold}"
        )));
    }
    let mut count = 0u64;
    for t in 0..episode.num_frames() {
        let present = episode.frame_positions(t);
        for i in 0..present.len() {
            for j in (i + 1)..present.len() {
                if present[i].1.distance(present[j].1) < threshold {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// The full six-metric evaluation of a predicted episode against ground
/// truth. Pedestrian rows are aligned by id.
pub fn evaluate(pred: &Episode, gt: &Episode, config: &MetricsConfig) -> Result<MetricReport> {
    Ok(MetricReport {
        mae: mae(pred, gt)?,
        ot: ot(pred, gt, config.ot_epsilon, config.ot_debias)?,
        fde: fde(pred, gt)?,
        mmd: mmd(pred, gt, config.mmd_bandwidth)?,
        dtw: dtw_mean(pred, gt)?,
        col: collision_count(pred, config.collision_threshold)?,
        config: MetricEcho {
            ot_epsilon: config.ot_epsilon,
            mmd_bandwidth: config.mmd_bandwidth,
            collision_threshold: config.collision_threshold,
            ot_debias: config.ot_debias,
        },
    })
}

fn check_alignment(pred: &Episode, gt: &Episode) -> Result<()> {
    if pred.ped_ids != gt.ped_ids {
        return Err(Error::Metric(
            "episodes cover different pedestrian id sets".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
