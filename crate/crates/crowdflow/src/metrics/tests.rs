use super::*;
use crate::rng::{purpose, stream};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;

/// Episode from an explicit position grid with dt = 0.1.
fn episode(grid: Vec<Vec<Option<Vec2>>>) -> Episode {
    let ids = (1..=grid.len() as u64).collect();
    Episode::from_positions(ids, grid, 0.1).unwrap()
}

fn offset_episode(base: &Episode, shift: Vec2) -> Episode {
    let grid: Vec<Vec<Option<Vec2>>> = (0..base.num_pedestrians())
        .map(|p| {
            (0..base.num_frames())
                .map(|t| base.position(p, t).map(|v| v + shift))
                .collect()
        })
        .collect();
    episode(grid)
}

fn random_episode(peds: usize, frames: usize, seed: u64) -> Episode {
    let mut rng = stream(seed, &[purpose::SCENARIO]);
    let grid = (0..peds)
        .map(|_| {
            (0..frames)
                .map(|_| {
                    Some(Vec2::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                    ))
                })
                .collect()
        })
        .collect();
    episode(grid)
}

#[test]
fn identical_episodes_have_zero_errors() {
    let e = random_episode(4, 6, 1);
    assert_eq!(mae(&e, &e).unwrap(), 0.0);
    assert_eq!(fde(&e, &e).unwrap(), 0.0);
    assert_eq!(dtw_mean(&e, &e).unwrap(), 0.0);
    assert_eq!(mmd(&e, &e, None).unwrap(), 0.0);
}

#[test]
fn mae_single_offset_pair() {
    let gt = episode(vec![vec![Some(Vec2::ZERO)]]);
    let pred = episode(vec![vec![Some(Vec2::new(3.0, 4.0))]]);
    assert_abs_diff_eq!(mae(&pred, &gt).unwrap(), 5.0, epsilon = 1e-12);
}

#[test]
fn mae_is_translation_invariant() {
    let gt = random_episode(3, 5, 2);
    let pred = random_episode(3, 5, 3);
    let base = mae(&pred, &gt).unwrap();
    let shift = Vec2::new(11.0, -4.0);
    let moved = mae(&offset_episode(&pred, shift), &offset_episode(&gt, shift)).unwrap();
    assert_abs_diff_eq!(base, moved, epsilon = 1e-9);
}

#[test]
fn mae_requires_overlap() {
    let a = episode(vec![vec![Some(Vec2::ZERO), None]]);
    let b = episode(vec![vec![None, Some(Vec2::ZERO)]]);
    assert!(mae(&a, &b).is_err());
}

#[test]
fn fde_hand_mean() {
    // Final-frame errors 1 and 3 average to 2.
    let gt = episode(vec![
        vec![Some(Vec2::ZERO), Some(Vec2::ZERO)],
        vec![Some(Vec2::ZERO), Some(Vec2::ZERO)],
    ]);
    let pred = episode(vec![
        vec![Some(Vec2::ZERO), Some(Vec2::new(1.0, 0.0))],
        vec![Some(Vec2::ZERO), Some(Vec2::new(0.0, 3.0))],
    ]);
    assert_abs_diff_eq!(fde(&pred, &gt).unwrap(), 2.0, epsilon = 1e-12);
}

#[test]
fn fde_skips_pedestrians_without_final_overlap() {
    let gt = episode(vec![
        vec![Some(Vec2::ZERO), Some(Vec2::ZERO)],
        vec![None, None],
    ]);
    let pred = episode(vec![
        vec![Some(Vec2::ZERO), Some(Vec2::new(2.0, 0.0))],
        vec![Some(Vec2::ZERO), Some(Vec2::ZERO)],
    ]);
    assert_abs_diff_eq!(fde(&pred, &gt).unwrap(), 2.0, epsilon = 1e-12);
}

#[test]
fn ot_singleton_pair_is_the_distance() {
    // Forced coupling: a single point on each side.
    let gt = episode(vec![vec![Some(Vec2::ZERO)]]);
    let pred = episode(vec![vec![Some(Vec2::new(0.6, 0.8))]]);
    for eps in [1e-3, 1e-2, 0.1] {
        let v = ot(&pred, &gt, eps, false).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
    }
}

#[test]
fn ot_identical_sets_vanishes_at_small_epsilon() {
    let e = random_episode(4, 3, 4);
    let v = ot(&e, &e, 1e-3, false).unwrap();
    assert!(v.abs() < 1e-2, "identical sets should cost ~0, got {v}");
}

#[test]
fn ot_matches_brute_force_on_small_instances() {
    // 2-vs-2: the optimal coupling among uniform marginals is one of the two
    // permutation matrices.
    let mut rng = stream(5, &[purpose::SCENARIO]);
    for _ in 0..40 {
        let pts = |rng: &mut rand_chacha::ChaCha12Rng, n: usize| -> Vec<Vec2> {
            (0..n)
                .map(|_| Vec2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                .collect()
        };
        let a = pts(&mut rng, 2);
        let b = pts(&mut rng, 2);
        let direct = a[0].distance(b[0]) + a[1].distance(b[1]);
        let crossed = a[0].distance(b[1]) + a[1].distance(b[0]);
        let lp = 0.5 * direct.min(crossed);
        let entropic = transport_cost(&a, &b, 1e-2).unwrap();
        assert!(
            (entropic - lp).abs() < 5e-3,
            "entropic {entropic} vs exact {lp}"
        );
    }
}

#[test]
fn sinkhorn_dual_objective_is_monotone() {
    // The alternating updates maximize the dual blockwise, so the dual trace
    // never decreases. (The primal transport cost is not monotone; small
    // random instances exhibit both directions while converging.)
    let mut rng = stream(6, &[purpose::SCENARIO]);
    for _ in 0..20 {
        let n = rng.random_range(2..5);
        let m = rng.random_range(2..5);
        let cost: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..2.0)).collect();
        let trace = sinkhorn_dual_trace(&cost, n, m, 0.05, 40);
        for w in trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-12,
                "dual objective decreased across iterations: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn sinkhorn_converges_by_marginal_residual() {
    let a = [Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
    let b = [Vec2::new(0.5, 0.5), Vec2::new(1.5, 0.0), Vec2::new(0.2, 0.9)];
    let mut cost = Vec::new();
    for pa in &a {
        for pb in &b {
            cost.push(pa.distance(*pb));
        }
    }
    // Moderate regularization reaches the residual threshold quickly; tiny
    // regularization legitimately exits on the iteration cap instead.
    let sol = sinkhorn_uniform(&cost, 3, 3, 0.5).unwrap();
    assert!(sol.marginal_error < 1e-9, "violation {}", sol.marginal_error);
    assert!(sol.iterations < 10_000);
    let capped = sinkhorn_uniform(&cost, 3, 3, 1e-3).unwrap();
    assert!(capped.marginal_error < 1e-9 || capped.iterations == 10_000);
}

#[test]
fn mmd_direct_summation_oracle() {
    // Distance sets of size two against the 4-term kernel sums written out.
    let xs = [1.0, 2.0];
    let ys = [1.5, 2.5];
    let sigma = 0.8;
    let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * sigma * sigma)).exp();
    let kxx = (k(1.0, 1.0) + k(1.0, 2.0) + k(2.0, 1.0) + k(2.0, 2.0)) / 4.0;
    let kyy = (k(1.5, 1.5) + k(1.5, 2.5) + k(2.5, 1.5) + k(2.5, 2.5)) / 4.0;
    let kxy = (k(1.0, 1.5) + k(1.0, 2.5) + k(2.0, 1.5) + k(2.0, 2.5)) / 4.0;
    let want = kxx + kyy - 2.0 * kxy;
    let got = mmd_squared(&xs, &ys, Some(sigma)).unwrap();
    assert_abs_diff_eq!(got, want, epsilon = 1e-15);
}

proptest! {
    #[test]
    fn mmd_is_nonnegative(
        xs in proptest::collection::vec(0.0f64..10.0, 1..6),
        ys in proptest::collection::vec(0.0f64..10.0, 1..6),
    ) {
        let v = mmd_squared(&xs, &ys, Some(1.0)).unwrap();
        prop_assert!(v >= -1e-12, "negative squared mmd {v}");
    }

    #[test]
    fn dtw_is_symmetric(
        a in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..7),
        b in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..7),
    ) {
        let pa: Vec<Vec2> = a.iter().map(|(x, y)| Vec2::new(*x, *y)).collect();
        let pb: Vec<Vec2> = b.iter().map(|(x, y)| Vec2::new(*x, *y)).collect();
        let ab = dtw(&pa, &pb).unwrap();
        let ba = dtw(&pb, &pa).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
    }
}

#[test]
fn dtw_hand_case() {
    // A = [(0,0), (1,0)], B = [(0,0), (2,0)]: the best path pairs the first
    // points (0), then (1,0) with (2,0) at cost 1.
    let a = [Vec2::ZERO, Vec2::new(1.0, 0.0)];
    let b = [Vec2::ZERO, Vec2::new(2.0, 0.0)];
    assert_abs_diff_eq!(dtw(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn dtw_matches_exhaustive_enumeration() {
    let mut rng = stream(7, &[purpose::SCENARIO]);
    for _ in 0..60 {
        let len_a = rng.random_range(1..=6);
        let len_b = rng.random_range(1..=6);
        let seq = |rng: &mut rand_chacha::ChaCha12Rng, n: usize| -> Vec<Vec2> {
            (0..n)
                .map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect()
        };
        let a = seq(&mut rng, len_a);
        let b = seq(&mut rng, len_b);
        let fast = dtw(&a, &b).unwrap();
        let brute = dtw_brute(&a, &b);
        assert_abs_diff_eq!(fast, brute, epsilon = 1e-9);
    }
}

#[test]
fn dtw_rejects_empty_sequences() {
    assert!(dtw(&[], &[Vec2::ZERO]).is_err());
}

#[test]
fn collision_count_cases() {
    // Single pedestrian: zero.
    let single = episode(vec![vec![Some(Vec2::ZERO); 4]]);
    assert_eq!(collision_count(&single, 0.5).unwrap(), 0);

    // Two static pedestrians at distance 0.3 over 4 frames: 4 events.
    let close = episode(vec![
        vec![Some(Vec2::ZERO); 4],
        vec![Some(Vec2::new(0.3, 0.0)); 4],
    ]);
    assert_eq!(collision_count(&close, 0.5).unwrap(), 4);

    // All distances at or above the threshold: zero (strict inequality).
    let apart = episode(vec![
        vec![Some(Vec2::ZERO); 3],
        vec![Some(Vec2::new(0.5, 0.0)); 3],
    ]);
    assert_eq!(collision_count(&apart, 0.5).unwrap(), 0);
    assert!(collision_count(&apart, 0.0).is_err());
}

#[test]
fn metrics_are_invariant_to_consistent_relabeling() {
    let gt = random_episode(4, 5, 8);
    let pred = random_episode(4, 5, 9);
    let relabel = |e: &Episode| {
        let perm = [2usize, 0, 3, 1];
        let grid: Vec<Vec<Option<Vec2>>> = perm
            .iter()
            .map(|p| (0..e.num_frames()).map(|t| e.position(*p, t)).collect())
            .collect();
        episode(grid)
    };
    let config = MetricsConfig::default();
    let a = evaluate(&pred, &gt, &config).unwrap();
    let b = evaluate(&relabel(&pred), &relabel(&gt), &config).unwrap();
    assert_abs_diff_eq!(a.mae, b.mae, epsilon = 1e-12);
    assert_abs_diff_eq!(a.ot, b.ot, epsilon = 1e-9);
    assert_abs_diff_eq!(a.fde, b.fde, epsilon = 1e-12);
    assert_abs_diff_eq!(a.mmd, b.mmd, epsilon = 1e-12);
    assert_abs_diff_eq!(a.dtw, b.dtw, epsilon = 1e-12);
    assert_eq!(a.col, b.col);
}

#[test]
fn report_serializes_with_config_echo() {
    let e = random_episode(3, 4, 10);
    let report = evaluate(&e, &e, &MetricsConfig::default()).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"ot_epsilon\":0.01"));
    assert!(json.contains("\"collision_threshold\":0.5"));
    assert_eq!(report.csv_row().split(',').count(), 6);
}
