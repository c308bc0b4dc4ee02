//! Squared maximum mean discrepancy between two scalar sample sets with a
//! Gaussian kernel (biased estimator: identical sets give exactly zero).

use crate::{Error, Result};

/// Biased-estimator squared MMD. `bandwidth` of `None` uses the median
/// heuristic over the pooled samples (falling back to 1 when the median
/// separation is zero).
pub fn mmd_squared(xs: &[f64], ys: &[f64], bandwidth: Option<f64>) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Metric("mmd of an empty sample set".into()));
    }
    let sigma = match bandwidth {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::Metric(format!("bandwidth must be positive, got {s}"))),
        None => median_heuristic(xs, ys),
    };
    let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * sigma * sigma)).exp();
    let mean_kernel = |left: &[f64], right: &[f64]| {
        let mut sum = 0.0;
        for a in left {
            for b in right {
                sum += k(*a, *b);
            }
        }
        sum / (left.len() * right.len()) as f64
    };
    Ok(mean_kernel(xs, xs) + mean_kernel(ys, ys) - 2.0 * mean_kernel(xs, ys))
}

/// Median absolute separation over all pairs of the pooled sample set.
fn median_heuristic(xs: &[f64], ys: &[f64]) -> f64 {
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let mut gaps = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            gaps.push((pooled[i] - pooled[j]).abs());
        }
    }
    if gaps.is_empty() {
        return 1.0;
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = gaps[gaps.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// All pairwise distances between valid points (the frame's intra-pedestrian
/// distance set).
pub fn pairwise_distances(points: &[crate::scene::Vec2]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            out.push(points[i].distance(points[j]));
        }
    }
    out
}
