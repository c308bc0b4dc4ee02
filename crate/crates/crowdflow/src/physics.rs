//! Classical force terms applied outside the diffusion model: destination
//! attraction, desired-speed estimation, kinematic integration, and the
//! optional pairwise repulsion post-processor.
//!
//! Each term exists as a plain-`f64` function (simulation and tests) and,
//! where training needs gradients, as a graph builder over [`Value`]s. A
//! consistency test pins both paths to each other.

use crate::autodiff::Value;
use crate::scene::{Episode, PedestrianState, Vec2};
use crate::{Error, Result};

/// Destination-attraction parameters. `m` is the per-pedestrian coefficient,
/// `mu` the global relaxation time in seconds.
#[derive(Clone, Copy, Debug)]
pub struct DestinationParams {
    pub m: f64,
    pub mu: f64,
}

impl Default for DestinationParams {
    fn default() -> Self {
        DestinationParams { m: 1.0, mu: 0.5 }
    }
}

/// Repulsion post-processor parameters.
#[derive(Clone, Copy, Debug)]
pub struct RepulsionParams {
    pub lambda: f64,
    pub sigma: f64,
}

impl Default for RepulsionParams {
    fn default() -> Self {
        RepulsionParams {
            lambda: 1.0,
            sigma: 0.5,
        }
    }
}

/// Relaxation force toward the desired velocity: `m * (v' n - v) / mu` with
/// `n` the unit vector toward the destination. A pedestrian standing exactly
/// at its destination feels no force.
pub fn destination_force(
    state: &PedestrianState,
    destination: Vec2,
    desired_speed: f64,
    params: DestinationParams,
) -> Vec2 {
    let offset = destination - state.position;
    if offset.norm() < 1e-12 {
        return Vec2::ZERO;
    }
    let n = offset.unit_or_zero();
    (n * desired_speed - state.velocity) * (params.m / params.mu)
}

/// Graph version of [`destination_force`] for rollout training. The
/// at-destination guard branches on forward data, like any other kink.
pub fn destination_force_value(
    position: &Value,
    velocity: &Value,
    destination: Vec2,
    desired_speed: f64,
    params: DestinationParams,
) -> Value {
    let dest = Value::vector(vec![destination.x, destination.y]);
    let offset = dest.sub(position);
    let d = offset.data();
    let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
    drop(d);
    if norm < 1e-12 {
        return Value::vector(vec![0.0, 0.0]);
    }
    let n = offset.l2_unit();
    n.scale_const(desired_speed)
        .sub(velocity)
        .scale_const(params.m / params.mu)
}

/// Mean speed over the pedestrian's valid velocity frames within the first
/// `skip_frames` frames. With fewer than two valid position frames in that
/// window, falls back to the mean over all valid velocity frames; a
/// pedestrian with no valid velocities at all is an error.
pub fn estimate_desired_speed(episode: &Episode, ped: usize, skip_frames: usize) -> Result<f64> {
    let window = skip_frames.min(episode.num_frames());
    let valid_positions_in_window = (0..window)
        .filter(|t| episode.position(ped, *t).is_some())
        .count();
    let speeds: Vec<f64> = if valid_positions_in_window >= 2 {
        (0..window)
            .filter_map(|t| episode.velocity(ped, t))
            .map(Vec2::norm)
            .collect()
    } else {
        (0..episode.num_frames())
            .filter_map(|t| episode.velocity(ped, t))
            .map(Vec2::norm)
            .collect()
    };
    if speeds.is_empty() {
        return Err(Error::invalid(format!(
            "pedestrian {} has no valid velocity frames to estimate a desired speed",
            episode.ped_ids[ped]
        )));
    }
    Ok(speeds.iter().sum::<f64>() / speeds.len() as f64)
}

/// One kinematic step: `v' = v + a dt`, `p' = p + v dt + a dt^2 / 2`, where
/// the position update uses the pre-step velocity.
pub fn integrate_step(
    state: &PedestrianState,
    acceleration: Vec2,
    dt: f64,
) -> Result<PedestrianState> {
    if !acceleration.is_finite() {
        return Err(Error::NonFinite {
            context: "acceleration passed to integrate_step".into(),
        });
    }
    let v_next = state.velocity + acceleration * dt;
    let p_next = state.position + state.velocity * dt + acceleration * (0.5 * dt * dt);
    Ok(PedestrianState {
        position: p_next,
        velocity: v_next,
        acceleration,
    })
}

/// Graph version of [`integrate_step`]; returns `(p', v')`.
pub fn integrate_value(
    position: &Value,
    velocity: &Value,
    acceleration: &Value,
    dt: f64,
) -> (Value, Value) {
    let v_next = velocity.add(&acceleration.scale_const(dt));
    let p_next = position
        .add(&velocity.scale_const(dt))
        .add(&acceleration.scale_const(0.5 * dt * dt));
    (p_next, v_next)
}

/// Pairwise repulsion: for each pedestrian `i`, sum over all other valid
/// pedestrians of `lambda * exp(-d_ij / sigma) * n_ij`, where `n_ij` points
/// from `j` to `i`. Coincident pairs contribute nothing.
pub fn repulsion_correction(positions: &[Option<Vec2>], params: RepulsionParams) -> Vec<Vec2> {
    let n = positions.len();
    let mut out = vec![Vec2::ZERO; n];
    for i in 0..n {
        let Some(pi) = positions[i] else { continue };
        let mut acc = Vec2::ZERO;
        for (j, pj) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            let Some(pj) = *pj else { continue };
            let offset = pi - pj;
            let d = offset.norm();
            if d < 1e-12 {
                continue;
            }
            acc = acc + offset * (params.lambda * (-d / params.sigma).exp() / d);
        }
        out[i] = acc;
    }
    out
}
