//! Synthetic scenario generation.
//!
//! Ground truth comes from a handcrafted force simulator (destination
//! relaxation, approach-gated pairwise avoidance, neighbor alignment,
//! obstacle repulsion, object-of-interest attraction, seeded noise) so that
//! each learned conditioning channel has a recoverable signal. The generator
//! is deliberately separate from the learned model: it never touches the
//! conditioning encoders or the denoiser.

use crate::igi::sim1;
use crate::physics::{destination_force, integrate_step, DestinationParams};
use crate::rng::{purpose, stream};
use crate::scene::{
    build_scene, save_trajectories, BoundsConfig, DimsConfig, EntityConfig, Episode, GrayImage,
    LightingConfig, PedestrianState, SceneConfig, SceneEnvironment, TransformConfig, Vec2,
};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Scenario templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    /// Bidirectional flow along a corridor.
    Corridor,
    /// Two orthogonal streams crossing in the middle.
    Crossing,
    /// One-directional flow weaving around staggered obstacles.
    ObstacleSlalom,
    /// One-directional flow detouring toward a placed attractor.
    OoiAttractor,
}

impl Template {
    pub fn parse(name: &str) -> Result<Template> {
        Ok(match name {
            "corridor" => Template::Corridor,
            "crossing" => Template::Crossing,
            "obstacle-slalom" => Template::ObstacleSlalom,
            "ooi-attractor" => Template::OoiAttractor,
            other => {
                return Err(Error::invalid(format!(
                    "unknown template `{other}` (expected corridor, crossing, obstacle-slalom, or ooi-attractor)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Template::Corridor => "corridor",
            Template::Crossing => "crossing",
            Template::ObstacleSlalom => "obstacle-slalom",
            Template::OoiAttractor => "ooi-attractor",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScenarioSpec {
    pub template: Template,
    pub agents: usize,
    pub frames: usize,
    /// Standard deviation of the per-frame acceleration noise (m/s^2).
    pub noise: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::invalid("scenario needs at least one agent"));
        }
        if self.frames < 2 {
            return Err(Error::invalid("scenario needs at least two frames"));
        }
        if self.noise < 0.0 {
            return Err(Error::invalid("noise level must be non-negative"));
        }
        Ok(())
    }
}

/// A generated dataset: ground-truth episode, scene description, and the
/// synthesized lighting image.
pub struct GeneratedScenario {
    pub episode: Episode,
    pub scene_config: SceneConfig,
    pub lighting_image: GrayImage,
    pub scene: SceneEnvironment,
    pub destinations: Vec<Vec2>,
    pub desired_speeds: Vec<f64>,
}

const DT: f64 = 0.1;

struct GeneratorForces {
    avoid_strength: f64,
    avoid_range: f64,
    align_strength: f64,
    align_radius: f64,
    obstacle_strength: f64,
    obstacle_range: f64,
    ooi_strength: f64,
}

impl Default for GeneratorForces {
    fn default() -> Self {
        GeneratorForces {
            avoid_strength: 1.6,
            avoid_range: 0.9,
            align_strength: 0.8,
            align_radius: 2.0,
            obstacle_strength: 7.0,
            obstacle_range: 0.9,
            ooi_strength: 1.1,
        }
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedScenario> {
    spec.validate()?;
    let mut layout_rng = stream(spec.seed, &[purpose::SCENARIO, 0]);
    let (bounds_max, starts, destinations, obstacles, oois) = layout(spec, &mut layout_rng);
    let n = spec.agents;
    let desired_speeds: Vec<f64> = (0..n)
        .map(|_| layout_rng.random_range(1.0..1.4))
        .collect();

    let forces = GeneratorForces::default();
    let dest_params = DestinationParams { m: 1.0, mu: 0.5 };

    let mut states: Vec<PedestrianState> = starts
        .iter()
        .zip(&destinations)
        .zip(&desired_speeds)
        .map(|((start, dest), speed)| {
            let dir = (*dest - *start).unit_or_zero();
            PedestrianState::new(*start, dir * *speed, Vec2::ZERO)
        })
        .collect();

    let mut grid: Vec<Vec<Option<Vec2>>> = vec![Vec::with_capacity(spec.frames); n];
    for (i, s) in states.iter().enumerate() {
        grid[i].push(Some(s.position));
    }

    for t in 1..spec.frames {
        let snapshot = states.clone();
        for i in 0..n {
            let me = snapshot[i];
            let mut force = destination_force(&me, destinations[i], desired_speeds[i], dest_params);

            // Approach-gated avoidance: repelled only by neighbors that are
            // heading toward this agent.
            let mut align_sum = Vec2::ZERO;
            let mut align_count = 0usize;
            for (j, other) in snapshot.iter().enumerate() {
                if j == i {
                    continue;
                }
                let offset = me.position - other.position;
                let d = offset.norm();
                if d < 1e-9 {
                    continue;
                }
                let gate = sim1(other.position - me.position, other.velocity);
                force = force
                    + offset
                        * (forces.avoid_strength * gate * (-d / forces.avoid_range).exp() / d);
                if d < forces.align_radius {
                    align_sum = align_sum + other.velocity;
                    align_count += 1;
                }
            }
            if align_count > 0 {
                let mean_v = align_sum * (1.0 / align_count as f64);
                force = force + (mean_v - me.velocity) * forces.align_strength;
            }

            for obstacle in &obstacles {
                let offset = me.position - obstacle.1;
                let d = offset.norm();
                if d < 1e-9 {
                    continue;
                }
                force = force
                    + offset * (forces.obstacle_strength * (-d / forces.obstacle_range).exp() / d);
            }

            // Attractor pull while the agent has not yet passed it.
            for ooi in &oois {
                if me.position.x < ooi.1.x {
                    let offset = ooi.1 - me.position;
                    let d = offset.norm();
                    if d > 1e-9 {
                        force = force + offset * (forces.ooi_strength / d * (-d / 4.0).exp());
                    }
                }
            }

            let mut noise_rng = stream(spec.seed, &[purpose::SCENARIO, 1, i as u64, t as u64]);
            let jitter = Vec2::new(
                noise_rng.sample::<f64, _>(StandardNormal) * spec.noise,
                noise_rng.sample::<f64, _>(StandardNormal) * spec.noise,
            );
            let accel = force + jitter;
            states[i] = integrate_step(&me, accel, DT)?;
            grid[i].push(Some(states[i].position));
        }
    }

    let episode = Episode::from_positions((1..=n as u64).collect(), grid, DT)?;
    let lighting_image = lighting_pattern(spec.seed);
    let scene_config = SceneConfig {
        bounds: BoundsConfig {
            min: [0.0, 0.0],
            max: [bounds_max.x, bounds_max.y],
        },
        transform: TransformConfig {
            // 64x32 image spanning the scene.
            matrix: [
                [bounds_max.x / 64.0, 0.0, 0.0],
                [0.0, bounds_max.y / 32.0, 0.0],
            ],
        },
        lighting: LightingConfig {
            image: "lighting.pgm".into(),
            cell_px: 8,
            dims: Some(DimsConfig { cols: 8, rows: 4 }),
        },
        scene_embedding: "scene".into(),
        obstacles: obstacles
            .iter()
            .map(|(id, p)| EntityConfig {
                id: id.clone(),
                position: [p.x, p.y],
                embedding: id.clone(),
            })
            .collect(),
        oois: oois
            .iter()
            .map(|(id, p)| EntityConfig {
                id: id.clone(),
                position: [p.x, p.y],
                embedding: id.clone(),
            })
            .collect(),
    };
    let scene = build_scene(&scene_config, &lighting_image)?;
    Ok(GeneratedScenario {
        episode,
        scene_config,
        lighting_image,
        scene,
        destinations,
        desired_speeds,
    })
}

type Layout = (Vec2, Vec<Vec2>, Vec<Vec2>, Vec<(String, Vec2)>, Vec<(String, Vec2)>);

/// Start/goal geometry per template. Agents are staggered along their entry
/// side with seeded jitter.
fn layout(spec: &ScenarioSpec, rng: &mut impl Rng) -> Layout {
    let n = spec.agents;
    let mut starts = Vec::with_capacity(n);
    let mut dests = Vec::with_capacity(n);
    let mut obstacles = Vec::new();
    let mut oois = Vec::new();
    let bounds_max;
    match spec.template {
        Template::Corridor => {
            bounds_max = Vec2::new(12.0, 6.0);
            for i in 0..n {
                let rightward = i % 2 == 0;
                let lane = 1.0 + 4.0 * ((i / 2) as f64 + 0.5) / ((n / 2).max(1) as f64 + 1.0)
                    + rng.random_range(-0.15..0.15);
                let depth = 0.6 + 2.4 * rng.random_range(0.0..1.0);
                if rightward {
                    starts.push(Vec2::new(depth, lane));
                    dests.push(Vec2::new(11.4, lane + rng.random_range(-0.2..0.2)));
                } else {
                    starts.push(Vec2::new(12.0 - depth, lane));
                    dests.push(Vec2::new(0.6, lane + rng.random_range(-0.2..0.2)));
                }
            }
        }
        Template::Crossing => {
            bounds_max = Vec2::new(12.0, 12.0);
            for i in 0..n {
                let horizontal = i % 2 == 0;
                let lane = 4.8 + 2.4 * ((i / 2) as f64 + 0.5) / ((n / 2).max(1) as f64 + 1.0)
                    + rng.random_range(-0.1..0.1);
                let depth = 0.6 + 2.4 * rng.random_range(0.0..1.0);
                if horizontal {
                    starts.push(Vec2::new(depth, lane));
                    dests.push(Vec2::new(11.4, lane + rng.random_range(-0.2..0.2)));
                } else {
                    starts.push(Vec2::new(lane, depth));
                    dests.push(Vec2::new(lane + rng.random_range(-0.2..0.2), 11.4));
                }
            }
        }
        Template::ObstacleSlalom => {
            bounds_max = Vec2::new(12.0, 6.0);
            obstacles = vec![
                ("obs0".to_string(), Vec2::new(3.5, 2.3)),
                ("obs1".to_string(), Vec2::new(6.0, 3.7)),
                ("obs2".to_string(), Vec2::new(8.5, 2.3)),
            ];
            // Lanes run between the obstacle rows so approaches are oblique
            // and the repulsion always has a lateral component.
            for i in 0..n {
                let lane = 2.65 + 0.7 * (i as f64 + 0.5) / n as f64 + rng.random_range(-0.08..0.08);
                let depth = 0.5 + 1.5 * rng.random_range(0.0..1.0);
                starts.push(Vec2::new(depth, lane));
                dests.push(Vec2::new(11.4, lane + rng.random_range(-0.2..0.2)));
            }
        }
        Template::OoiAttractor => {
            bounds_max = Vec2::new(12.0, 6.0);
            oois = vec![("ooi0".to_string(), Vec2::new(6.0, 4.6))];
            for i in 0..n {
                let lane = 1.0 + 1.4 * (i as f64 + 0.5) / n as f64 + rng.random_range(-0.1..0.1);
                let depth = 0.5 + 1.9 * rng.random_range(0.0..1.0);
                starts.push(Vec2::new(depth, lane));
                dests.push(Vec2::new(11.4, lane + rng.random_range(-0.2..0.2)));
            }
        }
    }
    (bounds_max, starts, dests, obstacles, oois)
}

/// Deterministic 64x32 brightness pattern: a horizontal gradient with a
/// seed-dependent dark band.
fn lighting_pattern(seed: u64) -> GrayImage {
    let (w, h) = (64usize, 32usize);
    let mut rng = stream(seed, &[purpose::SCENARIO, 2]);
    let band_center: f64 = rng.random_range(8.0..24.0);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gradient = 60.0 + 150.0 * x as f64 / w as f64;
            let dip = 80.0 * (-((y as f64 - band_center) / 6.0).powi(2)).exp();
            pixels.push((gradient - dip).clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, pixels).unwrap()
}

/// Write `gt.csv`, `scene.toml`, `lighting.pgm`, and a starter `run.toml`
/// into a directory.
pub fn write_to_dir(dir: impl AsRef<Path>, generated: &GeneratedScenario) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    save_trajectories(dir.join("gt.csv"), &generated.episode)?;
    crate::scene::save_scene(dir, &generated.scene_config, &generated.lighting_image)?;
    let mut run = crate::config::RunConfig::default();
    run.scene.path = "scene.toml".into();
    run.data.trajectories = "gt.csv".into();
    run.data.frame_interval = DT;
    std::fs::write(dir.join("run.toml"), run.to_toml())?;
    Ok(())
}
