//! Central-finite-difference gradient checking.
//!
//! Used by the test suites to validate every backward rule against an
//! independent numeric estimate. The checker only evaluates the supplied
//! closure; it knows nothing about the graph internals.

/// Central-difference gradient of a scalar function at `x`.
pub fn central_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative discrepancy between two gradient vectors:
/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1)`. The unit floor turns the
/// comparison absolute for small-magnitude entries, where finite differences
/// are dominated by roundoff.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

use crate::autodiff::{ParamSet, Value};

/// Check every parameter's accumulated gradient of `forward()` (a scalar
/// graph rebuilt per call) against central differences. Returns the worst
/// relative discrepancy across all parameter entries.
pub fn check_paramset_gradients(
    params: &ParamSet,
    mut forward: impl FnMut() -> Value,
    h: f64,
) -> f64 {
    params.zero_grads();
    let loss = forward();
    loss.backward();
    let mut worst: f64 = 0.0;
    for (_, p) in params.iter() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let x0 = p.to_vec();
        let mut numeric = vec![0.0; x0.len()];
        let mut probe = x0.clone();
        for i in 0..x0.len() {
            probe[i] = x0[i] + h;
            p.set_data(&probe);
            let fp = forward().item();
            probe[i] = x0[i] - h;
            p.set_data(&probe);
            let fm = forward().item();
            probe[i] = x0[i];
            p.set_data(&x0);
            numeric[i] = (fp - fm) / (2.0 * h);
        }
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    worst
}
