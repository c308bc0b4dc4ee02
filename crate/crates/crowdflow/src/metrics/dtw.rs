//! Dynamic time warping over 2-D point sequences: boundary-anchored minimum
//! cumulative alignment cost with diagonal, horizontal, and vertical moves.

use crate::scene::Vec2;
use crate::{Error, Result};

pub fn dtw(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric("dtw of an empty sequence".into()));
    }
    let (n, m) = (a.len(), b.len());
    // D(i, j) = cost(i, j) + min(D(i-1, j), D(i, j-1), D(i-1, j-1))
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let cost = a[i - 1].distance(b[j - 1]);
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}
