//! Closed-loop simulation: per frame, build the neighbor graph, compute the
//! conditioning signal, sample an acceleration with the configured reverse
//! sampler, add the destination force (and optional repulsion), and
//! integrate.
//!
//! Pedestrian presence follows ground truth: each pedestrian is simulated
//! from its first fully valid frame at or after the start frame until its
//! ground-truth track ends. Output frames before the start are left invalid,
//! and only predicted frames are recorded, so evaluation never pairs copied
//! initial conditions.

use super::{gt_window, prepare_targets, schedule_from_config, GoalTargets};
use crate::config::RunConfig;
use crate::diffusion::{ddim_indices, ddim_from, sample_ddpm};
use crate::igi::{build_knn, AgentNodes};
use crate::model::CrowdModel;
use crate::physics::{
    destination_force, integrate_step, repulsion_correction, DestinationParams, RepulsionParams,
};
use crate::rng::{purpose, stream};
use crate::scene::{Episode, PedestrianState, SceneEnvironment, Vec2};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Resolved simulation options.
#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    pub start_frame: usize,
    pub frames: usize,
}

impl SimOptions {
    /// Resolve start/length against a ground-truth episode: the start
    /// defaults to `skip_frames + history window`, the length to the rest of
    /// the episode.
    pub fn from_config(config: &RunConfig, episode: &Episode) -> Result<Self> {
        let default_start = config.training.skip_frames + config.model.history.window;
        let start_frame = config.simulate.start_frame.unwrap_or(default_start);
        if start_frame + 1 >= episode.num_frames() {
            return Err(Error::invalid(format!(
                "simulation start frame {start_frame} leaves no frames to roll out (episode has {})",
                episode.num_frames()
            )));
        }
        let frames = config
            .simulate
            .frames
            .unwrap_or(episode.num_frames() - 1 - start_frame)
            .min(episode.num_frames() - 1 - start_frame);
        Ok(SimOptions { start_frame, frames })
    }
}

/// Roll the model forward from ground-truth initial conditions. The output
/// episode shares the input's frame indexing and pedestrian ids; frames
/// `start+1 ..= start+frames` carry predictions.
pub fn simulate(
    episode: &Episode,
    scene: &SceneEnvironment,
    model: &CrowdModel,
    config: &RunConfig,
    options: SimOptions,
) -> Result<Episode> {
    let n = episode.num_pedestrians();
    let window = config.model.history.window;
    let dt = episode.frame_interval;
    let schedule = schedule_from_config(config)?;
    let targets: GoalTargets = prepare_targets(episode, config.training.skip_frames);
    let dest_params = DestinationParams {
        m: config.physics.m,
        mu: config.physics.mu,
    };
    let use_ddpm = config.diffusion.sampler == "ddpm";
    let indices = ddim_indices(schedule.num_steps(), config.diffusion.ddim_steps)?;
    let freeze_radius = config.simulate.freeze_radius;

    let end_frame = options.start_frame + options.frames;
    let mut out = Episode::empty(
        episode.ped_ids.clone(),
        episode.num_frames().max(end_frame + 1),
        dt,
    );
    out.destinations = targets.destinations.clone();
    out.desired_speeds = targets.desired_speeds.clone();

    // Live kinematic state per pedestrian, entered lazily from ground truth.
    let mut states: Vec<Option<PedestrianState>> = vec![None; n];
    let mut histories: Vec<Vec<Option<AgentNodes>>> = vec![Vec::new(); n];
    let mut entered: Vec<bool> = vec![false; n];

    for t in options.start_frame..end_frame {
        // Entries: pedestrians whose ground truth becomes fully valid at t.
        // Valid frames are contiguous, so each pedestrian enters once.
        for p in 0..n {
            if !entered[p]
                && targets.destinations[p].is_some()
                && targets.desired_speeds[p].is_some()
            {
                if let Some(s) = episode.state(p, t) {
                    entered[p] = true;
                    states[p] = Some(s);
                    histories[p] = gt_window(episode, p, t, window);
                }
            }
        }
        // Exits: the ground-truth position track ends (pedestrian leaves).
        for p in 0..n {
            if states[p].is_some() && episode.position(p, t + 1).is_none() {
                states[p] = None;
                histories[p].clear();
            }
        }

        let positions: Vec<Option<Vec2>> = states
            .iter()
            .map(|s| s.as_ref().map(|st| st.position))
            .collect();
        let present: Vec<Vec2> = positions.iter().flatten().copied().collect();
        if present.is_empty() {
            continue;
        }
        let nodes: Vec<Option<AgentNodes>> = states
            .iter()
            .map(|s| {
                s.as_ref()
                    .map(|st| AgentNodes::from_parts(st.position, st.velocity, st.acceleration))
            })
            .collect();
        let graph = build_knn(&positions, config.model.igi.top_k);
        let frame = model.frame_conditioning(scene, &present)?;
        let noise: Vec<Vec<f64>> = (0..n)
            .map(|p| {
                if states[p].is_none() {
                    return vec![0.0; 2];
                }
                let mut rng = stream(config.seed, &[purpose::GNN_NOISE, p as u64, t as u64]);
                (0..2).map(|_| rng.sample(StandardNormal)).collect()
            })
            .collect();
        let conditioning = model.condition(scene, &frame, &nodes, &histories, &graph, &noise);

        let repulsion = if config.physics.repulsion.enabled {
            repulsion_correction(
                &positions,
                RepulsionParams {
                    lambda: config.physics.repulsion.lambda,
                    sigma: config.physics.repulsion.sigma,
                },
            )
        } else {
            vec![Vec2::ZERO; n]
        };

        for p in 0..n {
            let Some(state) = states[p] else { continue };
            let at_goal = freeze_radius > 0.0
                && state.position.distance(targets.destinations[p].unwrap()) < freeze_radius;
            let next = if at_goal {
                PedestrianState::new(state.position, Vec2::ZERO, Vec2::ZERO)
            } else {
                let c = conditioning[p].as_ref().unwrap().detach();
                let mut rng = stream(config.seed, &[purpose::SAMPLER, p as u64, t as u64]);
                let mut denoise = |y: [f64; 2], k: usize| model.denoiser.denoise_plain(y, k, &c);
                let y0 = if use_ddpm {
                    sample_ddpm(&mut denoise, &schedule, &mut rng)
                } else {
                    let y_start = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    ddim_from(&mut denoise, &schedule, &indices, y_start)
                };
                let f_dest = destination_force(
                    &state,
                    targets.destinations[p].unwrap(),
                    targets.desired_speeds[p].unwrap(),
                    dest_params,
                );
                let a_hat = Vec2::new(y0[0], y0[1]) + f_dest + repulsion[p];
                integrate_step(&state, a_hat, dt)?
            };

            out.set_state(p, t + 1, next);
            let node = AgentNodes::from_parts(next.position, next.velocity, next.acceleration);
            histories[p].push(Some(node));
            if histories[p].len() > window {
                histories[p].remove(0);
            }
            states[p] = Some(next);
        }
    }
    Ok(out)
}
