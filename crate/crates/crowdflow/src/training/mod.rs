//! Multi-frame rollout training: forward-simulate a short horizon with the
//! current model, accumulate the weighted acceleration/position loss against
//! ground truth, backpropagate through the whole rollout, and step Adam.
//!
//! Per rollout frame the denoiser is trained by single-step clean-sample
//! regression: a diffusion step `k` is drawn, the ground-truth acceleration
//! is noised to `y_k` by the closed-form marginal, and the denoiser's
//! prediction from `(y_k, k, c)` enters the loss as the model acceleration
//! (full reverse sampling inside every training frame would be intractable).
//!
//! A pedestrian participates in a segment while ground truth provides its
//! full kinematic state; when its ground-truth track ends it leaves the
//! rollout, mirroring the scene. Loss pairs therefore exist exactly where
//! ground truth is valid, and masked frames cannot influence gradients.

mod simulate;

pub use simulate::{simulate, SimOptions};

use crate::autodiff::{Adam, AdamConfig, Value};
use crate::config::RunConfig;
use crate::container::{self, Payload, Record};
use crate::diffusion::{forward_sample, make_schedule, NoiseSchedule, ScheduleShape};
use crate::igi::{build_knn, AgentNodes};
use crate::model::CrowdModel;
use crate::physics::{
    destination_force_value, estimate_desired_speed, integrate_value, DestinationParams,
};
use crate::rng::{purpose, stream};
use crate::scene::{Episode, SceneEnvironment, Vec2};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Per-pedestrian goal data derived from an episode.
#[derive(Clone, Debug)]
pub struct GoalTargets {
    pub destinations: Vec<Option<Vec2>>,
    pub desired_speeds: Vec<Option<f64>>,
}

/// Destinations are each pedestrian's last valid position; desired speeds
/// come from the skip-window estimate. Pedestrians without enough data get
/// `None` and are excluded from rollouts.
pub fn prepare_targets(episode: &Episode, skip_frames: usize) -> GoalTargets {
    let n = episode.num_pedestrians();
    let mut destinations = Vec::with_capacity(n);
    let mut desired_speeds = Vec::with_capacity(n);
    for p in 0..n {
        destinations.push(episode.last_position(p));
        desired_speeds.push(estimate_desired_speed(episode, p, skip_frames).ok());
    }
    GoalTargets {
        destinations,
        desired_speeds,
    }
}

pub fn schedule_from_config(config: &RunConfig) -> Result<NoiseSchedule> {
    let shape = match config.diffusion.schedule.as_str() {
        "linear" => ScheduleShape::Linear,
        "cosine" => ScheduleShape::Cosine,
        other => return Err(Error::config(format!("unknown schedule `{other}`"))),
    };
    make_schedule(
        config.diffusion.steps,
        config.diffusion.beta_start,
        config.diffusion.beta_end,
        shape,
    )
}

/// Ground-truth history window ending at `t0` as graph constants.
fn gt_window(episode: &Episode, ped: usize, t0: usize, window: usize) -> Vec<Option<AgentNodes>> {
    let from = (t0 + 1).saturating_sub(window);
    (from..=t0)
        .map(|t| {
            episode
                .state(ped, t)
                .map(|s| AgentNodes::from_parts(s.position, s.velocity, s.acceleration))
        })
        .collect()
}

/// Number of loss pairs a segment will produce (pure mask arithmetic, no
/// graph work).
pub fn segment_pair_count(episode: &Episode, t0: usize, horizon: usize, targets: &GoalTargets) -> usize {
    let mut pairs = 0;
    for p in 0..episode.num_pedestrians() {
        if episode.state(p, t0).is_none()
            || targets.destinations[p].is_none()
            || targets.desired_speeds[p].is_none()
        {
            continue;
        }
        for tau in 1..=horizon {
            if t0 + tau < episode.num_frames() && episode.state(p, t0 + tau).is_some() {
                pairs += 1;
            } else {
                break;
            }
        }
    }
    pairs
}

/// Unnormalized rollout loss terms for one segment plus the pair count.
/// `rng_tags` scopes the diffusion-step and interaction-noise streams
/// (epoch, segment index) so draws are independent across the run.
#[allow(clippy::too_many_arguments)]
pub fn rollout_terms(
    episode: &Episode,
    scene: &SceneEnvironment,
    model: &CrowdModel,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    targets: &GoalTargets,
    t0: usize,
    rng_tags: (u64, u64),
) -> Result<(Value, usize)> {
    let n = episode.num_pedestrians();
    let horizon = config.training.horizon;
    let window = config.model.history.window;
    let dt = episode.frame_interval;
    let dest_params = DestinationParams {
        m: config.physics.m,
        mu: config.physics.mu,
    };
    let (epoch_tag, segment_tag) = rng_tags;

    let participating: Vec<bool> = (0..n)
        .map(|p| {
            episode.state(p, t0).is_some()
                && targets.destinations[p].is_some()
                && targets.desired_speeds[p].is_some()
        })
        .collect();

    let mut nodes: Vec<Option<AgentNodes>> = (0..n)
        .map(|p| {
            if !participating[p] {
                return None;
            }
            let s = episode.state(p, t0).unwrap();
            Some(AgentNodes::from_parts(s.position, s.velocity, s.acceleration))
        })
        .collect();
    let mut histories: Vec<Vec<Option<AgentNodes>>> = (0..n)
        .map(|p| {
            if participating[p] {
                gt_window(episode, p, t0, window)
            } else {
                Vec::new()
            }
        })
        .collect();

    let mut terms = Value::scalar(0.0);
    let mut pairs = 0usize;

    for tau in 1..=horizon {
        let target = t0 + tau;
        if target >= episode.num_frames() {
            break;
        }
        // Pedestrians whose ground truth ended leave the rollout.
        for p in 0..n {
            if nodes[p].is_some() && episode.state(p, target).is_none() {
                nodes[p] = None;
            }
        }
        if nodes.iter().all(|s| s.is_none()) {
            break;
        }
        let positions: Vec<Option<Vec2>> = nodes
            .iter()
            .map(|s| s.as_ref().map(|a| a.position_vec2()))
            .collect();
        let present: Vec<Vec2> = positions.iter().flatten().copied().collect();
        let graph = build_knn(&positions, config.model.igi.top_k);
        let frame = model.frame_conditioning(scene, &present)?;
        let noise: Vec<Vec<f64>> = (0..n)
            .map(|p| {
                if nodes[p].is_none() {
                    return vec![0.0; 2];
                }
                let mut rng = stream(
                    config.seed,
                    &[purpose::GNN_NOISE, epoch_tag, segment_tag, p as u64, tau as u64],
                );
                (0..2).map(|_| rng.sample(StandardNormal)).collect()
            })
            .collect();
        let conditioning = model.condition(scene, &frame, &nodes, &histories, &graph, &noise);

        let mut next: Vec<Option<AgentNodes>> = vec![None; n];
        for p in 0..n {
            let Some(node) = nodes[p].as_ref() else { continue };
            let c = conditioning[p].as_ref().unwrap();
            let gt_state = episode.state(p, target).unwrap();
            let mut rng = stream(
                config.seed,
                &[purpose::DIFFUSION_STEP, epoch_tag, segment_tag, p as u64, tau as u64],
            );
            let k = rng.random_range(1..=schedule.num_steps());
            let y_k = forward_sample(
                [gt_state.acceleration.x, gt_state.acceleration.y],
                k,
                schedule,
                &mut rng,
            )?;
            let y0_hat = model
                .denoiser
                .denoise(&Value::vector(vec![y_k[0], y_k[1]]), k, c);
            let f_dest = destination_force_value(
                &node.position,
                &node.velocity,
                targets.destinations[p].unwrap(),
                targets.desired_speeds[p].unwrap(),
                dest_params,
            );
            let a_hat = y0_hat.add(&f_dest);
            let (p_next, v_next) = integrate_value(&node.position, &node.velocity, &a_hat, dt);

            let a_gt = Value::vector(vec![gt_state.acceleration.x, gt_state.acceleration.y]);
            let p_gt = Value::vector(vec![gt_state.position.x, gt_state.position.y]);
            let a_err = a_hat.sub(&a_gt).sq_norm().scale_const(config.training.lambda_a);
            let p_err = p_next.sub(&p_gt).sq_norm().scale_const(config.training.lambda_p);
            terms = terms.add(&a_err).add(&p_err);
            pairs += 1;

            histories[p].push(Some(AgentNodes {
                position: p_next.clone(),
                velocity: v_next.clone(),
                acceleration: a_hat.clone(),
            }));
            if histories[p].len() > window {
                histories[p].remove(0);
            }
            next[p] = Some(AgentNodes {
                position: p_next,
                velocity: v_next,
                acceleration: a_hat,
            });
        }
        nodes = next;
    }
    Ok((terms, pairs))
}

/// The segment loss of the rollout objective: weighted squared errors
/// averaged over valid pairs.
#[allow(clippy::too_many_arguments)]
pub fn rollout_loss(
    episode: &Episode,
    scene: &SceneEnvironment,
    model: &CrowdModel,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    targets: &GoalTargets,
    t0: usize,
    rng_tags: (u64, u64),
) -> Result<Value> {
    let (terms, pairs) = rollout_terms(episode, scene, model, schedule, config, targets, t0, rng_tags)?;
    if pairs == 0 {
        return Err(Error::Training(format!(
            "segment starting at frame {t0} has no valid pairs"
        )));
    }
    Ok(terms.scale_const(1.0 / pairs as f64))
}

/// One row of the training log.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_mae: f64,
    pub learning_rate: f64,
}

/// Training outcome: per-epoch log plus the trained model state left in
/// `model`.
#[derive(Debug)]
pub struct TrainOutput {
    pub log: Vec<EpochLog>,
    pub epochs_run: usize,
}

/// Frame index splitting training from validation.
pub fn validation_start(episode: &Episode, config: &RunConfig) -> usize {
    let frames = episode.num_frames();
    frames - (frames as f64 * config.training.val_fraction).floor() as usize
}

/// Training segment start frames.
pub fn training_segments(episode: &Episode, config: &RunConfig, targets: &GoalTargets) -> Vec<usize> {
    let window = config.model.history.window;
    let first = config.training.skip_frames + window.saturating_sub(1);
    let val_start = validation_start(episode, config);
    let horizon = config.training.horizon;
    let mut out = Vec::new();
    let mut t0 = first;
    while t0 + horizon < val_start {
        if segment_pair_count(episode, t0, horizon, targets) > 0 {
            out.push(t0);
        }
        t0 += config.training.stride.max(1);
    }
    out
}

/// Closed-loop validation: short rollouts over the held-out span, scored by
/// mean position error. Deterministic given the seed.
pub fn validation_mae(
    episode: &Episode,
    scene: &SceneEnvironment,
    model: &CrowdModel,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    targets: &GoalTargets,
) -> Result<f64> {
    let val_start = validation_start(episode, config);
    let horizon = config.training.horizon;
    let frames = episode.num_frames();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut t0 = val_start;
    let mut segments = 0;
    while t0 + horizon < frames && segments < 8 {
        let (err, pairs) = validation_segment(
            episode, scene, model, schedule, config, targets, t0,
        )?;
        total += err;
        count += pairs;
        segments += 1;
        t0 += horizon.max(1);
    }
    if count == 0 {
        return Err(Error::Training("validation span has no usable segments".into()));
    }
    Ok(total / count as f64)
}

/// Closed-loop rollout of one validation segment with the deterministic
/// sampler at a reduced step count; returns summed position error and pairs.
fn validation_segment(
    episode: &Episode,
    scene: &SceneEnvironment,
    model: &CrowdModel,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    targets: &GoalTargets,
    t0: usize,
) -> Result<(f64, usize)> {
    use crate::diffusion::{ddim_indices, ddim_from};
    let n = episode.num_pedestrians();
    let horizon = config.training.horizon;
    let window = config.model.history.window;
    let dt = episode.frame_interval;
    let dest_params = DestinationParams {
        m: config.physics.m,
        mu: config.physics.mu,
    };
    let ddim_steps = config.diffusion.ddim_steps.min(5);
    let indices = ddim_indices(schedule.num_steps(), ddim_steps)?;

    let mut nodes: Vec<Option<AgentNodes>> = (0..n)
        .map(|p| {
            if targets.destinations[p].is_none() || targets.desired_speeds[p].is_none() {
                return None;
            }
            episode
                .state(p, t0)
                .map(|s| AgentNodes::from_parts(s.position, s.velocity, s.acceleration))
        })
        .collect();
    let mut histories: Vec<Vec<Option<AgentNodes>>> = (0..n)
        .map(|p| {
            if nodes[p].is_some() {
                gt_window(episode, p, t0, window)
            } else {
                Vec::new()
            }
        })
        .collect();

    let mut total = 0.0;
    let mut pairs = 0usize;
    for tau in 1..=horizon {
        let target = t0 + tau;
        if target >= episode.num_frames() {
            break;
        }
        for p in 0..n {
            if nodes[p].is_some() && episode.state(p, target).is_none() {
                nodes[p] = None;
            }
        }
        let positions: Vec<Option<Vec2>> = nodes
            .iter()
            .map(|s| s.as_ref().map(|a| a.position_vec2()))
            .collect();
        let present: Vec<Vec2> = positions.iter().flatten().copied().collect();
        if present.is_empty() {
            break;
        }
        let graph = build_knn(&positions, config.model.igi.top_k);
        let frame = model.frame_conditioning(scene, &present)?;
        let noise: Vec<Vec<f64>> = (0..n)
            .map(|p| {
                if nodes[p].is_none() {
                    return vec![0.0; 2];
                }
                let mut rng = stream(
                    config.seed,
                    &[purpose::GNN_NOISE, u64::MAX, t0 as u64, p as u64, tau as u64],
                );
                (0..2).map(|_| rng.sample(StandardNormal)).collect()
            })
            .collect();
        let conditioning = model.condition(scene, &frame, &nodes, &histories, &graph, &noise);

        let mut next: Vec<Option<AgentNodes>> = vec![None; n];
        for p in 0..n {
            let Some(node) = nodes[p].as_ref() else { continue };
            let c = conditioning[p].as_ref().unwrap().detach();
            let mut rng = stream(
                config.seed,
                &[purpose::SAMPLER, u64::MAX, t0 as u64, p as u64, tau as u64],
            );
            let y_start = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let mut denoise = |y: [f64; 2], k: usize| model.denoiser.denoise_plain(y, k, &c);
            let y0 = ddim_from(&mut denoise, schedule, &indices, y_start);

            let state = crate::scene::PedestrianState {
                position: node.position_vec2(),
                velocity: {
                    let d = node.velocity.data();
                    Vec2::new(d[0], d[1])
                },
                acceleration: {
                    let d = node.acceleration.data();
                    Vec2::new(d[0], d[1])
                },
            };
            let f_dest = crate::physics::destination_force(
                &state,
                targets.destinations[p].unwrap(),
                targets.desired_speeds[p].unwrap(),
                dest_params,
            );
            let a_hat = Vec2::new(y0[0], y0[1]) + f_dest;
            let next_state = crate::physics::integrate_step(&state, a_hat, dt)?;

            let gt = episode.state(p, target).unwrap();
            total += next_state.position.distance(gt.position);
            pairs += 1;

            let nn = AgentNodes::from_parts(
                next_state.position,
                next_state.velocity,
                next_state.acceleration,
            );
            histories[p].push(Some(nn.clone()));
            if histories[p].len() > window {
                histories[p].remove(0);
            }
            next[p] = Some(nn);
        }
        nodes = next;
    }
    Ok((total, pairs))
}

/// Current learning rate under the step decay schedule.
fn lr_at_epoch(config: &RunConfig, epoch: usize) -> f64 {
    let period = config.training.lr_decay_every.max(1);
    let steps = (epoch.saturating_sub(1)) / period;
    config.training.learning_rate * config.training.lr_decay.powi(steps as i32)
}

/// Run the training loop, mutating `model` in place. When `out_dir` is
/// given, periodic and final training checkpoints plus `train_log.csv` are
/// written there. `resume_from` restores a training checkpoint (parameters,
/// optimizer moments, epoch counter) and continues to `epochs`.
pub fn train(
    episode: &Episode,
    scene: &SceneEnvironment,
    model: &CrowdModel,
    config: &RunConfig,
    out_dir: Option<&Path>,
    resume_from: Option<&Path>,
) -> Result<TrainOutput> {
    let schedule = schedule_from_config(config)?;
    let targets = prepare_targets(episode, config.training.skip_frames);
    let segments = training_segments(episode, config, &targets);
    if segments.is_empty() {
        return Err(Error::Training(
            "no training segments: the episode is too short for the configured window, horizon, and split".into(),
        ));
    }

    let mut adam = Adam::new(
        &model.params,
        AdamConfig {
            learning_rate: config.training.learning_rate,
            weight_decay: config.training.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut start_epoch = 1;
    if let Some(path) = resume_from {
        start_epoch = restore_training_checkpoint(path, model, &mut adam, config)? + 1;
    }

    let mut log = Vec::new();
    if start_epoch == 1 {
        // Epoch 0: untrained loss and validation error under the initial
        // parameters (forward passes only).
        let mut loss_sum = 0.0;
        let mut pair_sum = 0usize;
        for (si, &t0) in segments.iter().enumerate() {
            let (terms, pairs) =
                rollout_terms(episode, scene, model, &schedule, config, &targets, t0, (0, si as u64))?;
            loss_sum += terms.item();
            pair_sum += pairs;
        }
        let val = validation_mae(episode, scene, model, &schedule, config, &targets)?;
        log.push(EpochLog {
            epoch: 0,
            loss: loss_sum / pair_sum.max(1) as f64,
            val_mae: val,
            learning_rate: lr_at_epoch(config, 1),
        });
    }

    for epoch in start_epoch..=config.training.epochs {
        adam.config.learning_rate = lr_at_epoch(config, epoch);

        let mut order = segments.clone();
        let mut shuffle_rng = stream(config.seed, &[purpose::SHUFFLE, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss_sum = 0.0;
        let mut epoch_pairs = 0usize;
        for batch in order.chunks(config.training.batch_size.max(1)) {
            model.params.zero_grads();
            let total_pairs: usize = batch
                .iter()
                .map(|&t0| segment_pair_count(episode, t0, config.training.horizon, &targets))
                .sum();
            if total_pairs == 0 {
                continue;
            }
            for &t0 in batch {
                let (terms, pairs) = rollout_terms(
                    episode,
                    scene,
                    model,
                    &schedule,
                    config,
                    &targets,
                    t0,
                    (epoch as u64, t0 as u64),
                )?;
                if pairs == 0 {
                    continue;
                }
                let contribution = terms.item();
                if !contribution.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss in epoch {epoch}, segment starting at frame {t0}"
                    )));
                }
                epoch_loss_sum += contribution;
                epoch_pairs += pairs;
                terms.scale_const(1.0 / total_pairs as f64).backward();
            }
            adam.step(&model.params)?;
        }

        let val = validation_mae(episode, scene, model, &schedule, config, &targets)?;
        log.push(EpochLog {
            epoch,
            loss: epoch_loss_sum / epoch_pairs.max(1) as f64,
            val_mae: val,
            learning_rate: adam.config.learning_rate,
        });

        if let Some(dir) = out_dir {
            let every = config.training.checkpoint_every;
            if every > 0 && epoch % every == 0 && epoch != config.training.epochs {
                write_training_checkpoint(
                    &dir.join(format!("checkpoint_ep{epoch}.esdf")),
                    model,
                    &adam,
                    config,
                    epoch,
                )?;
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_training_checkpoint(
            &dir.join("checkpoint_final.esdf"),
            model,
            &adam,
            config,
            config.training.epochs,
        )?;
        let mut csv = String::from("epoch,loss,val_mae,lr\n");
        for row in &log {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                row.epoch, row.loss, row.val_mae, row.learning_rate
            ));
        }
        std::fs::write(dir.join("train_log.csv"), csv)?;
    }

    Ok(TrainOutput {
        epochs_run: config.training.epochs.saturating_sub(start_epoch - 1),
        log,
    })
}

/// Training checkpoint: model parameters plus optimizer moments, step
/// counter, epoch, seed, and a config snapshot. Reserved record names carry
/// the non-parameter state.
pub fn write_training_checkpoint(
    path: &Path,
    model: &CrowdModel,
    adam: &Adam,
    config: &RunConfig,
    epoch: usize,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut records = model.parameter_records();
    for ((name, value), (m, v)) in model.params.iter().zip(adam.moments().iter()) {
        records.push(Record::tensor(
            format!("__opt.{name}.m"),
            value.shape().to_vec(),
            m.clone(),
        ));
        records.push(Record::tensor(
            format!("__opt.{name}.v"),
            value.shape().to_vec(),
            v.clone(),
        ));
    }
    records.push(Record::bytes("__opt.step", adam.step_count.to_le_bytes().to_vec()));
    records.push(Record::bytes("__epoch", (epoch as u64).to_le_bytes().to_vec()));
    records.push(Record::bytes("__seed", config.seed.to_le_bytes().to_vec()));
    records.push(Record::bytes("__config", config.to_toml().into_bytes()));
    container::write_file(path, &records)
}

/// Restore a training checkpoint; returns the stored epoch. The stored
/// config snapshot must match the active config exactly.
pub fn restore_training_checkpoint(
    path: &Path,
    model: &CrowdModel,
    adam: &mut Adam,
    config: &RunConfig,
) -> Result<usize> {
    let records = container::read_file(path)?;
    let find_bytes = |name: &str| -> Result<&[u8]> {
        records
            .iter()
            .find(|r| r.name == name)
            .and_then(|r| match &r.payload {
                Payload::Bytes(b) => Some(b.as_slice()),
                _ => None,
            })
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))
    };
    let stored_text = String::from_utf8(find_bytes("__config")?.to_vec())
        .map_err(|_| Error::Checkpoint("config snapshot is not UTF-8".into()))?;
    let mut stored = RunConfig::parse(&stored_text)?;
    let mut active = config.clone();
    // Resuming means continuing the same run to a new epoch cap; everything
    // else must match exactly.
    stored.training.epochs = 0;
    active.training.epochs = 0;
    if stored != active {
        return Err(Error::Checkpoint(
            "checkpoint was trained under a different configuration".into(),
        ));
    }
    model.load_parameter_records(&records)?;
    let mut moments = Vec::new();
    for (name, value) in model.params.iter() {
        let grab = |suffix: &str| -> Result<Vec<f64>> {
            let rec_name = format!("__opt.{name}.{suffix}");
            let rec = records
                .iter()
                .find(|r| r.name == rec_name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record `{rec_name}`")))?;
            match &rec.payload {
                Payload::Tensor { data, shape } if shape == value.shape() => Ok(data.clone()),
                _ => Err(Error::Checkpoint(format!("record `{rec_name}` malformed"))),
            }
        };
        moments.push((grab("m")?, grab("v")?));
    }
    let step = u64::from_le_bytes(find_bytes("__opt.step")?.try_into().map_err(|_| {
        Error::Checkpoint("optimizer step record malformed".into())
    })?);
    adam.restore_moments(moments, step);
    let epoch = u64::from_le_bytes(
        find_bytes("__epoch")?
            .try_into()
            .map_err(|_| Error::Checkpoint("epoch record malformed".into()))?,
    );
    Ok(epoch as usize)
}

#[cfg(test)]
mod tests;
