//! Assembly of all learned pieces into one model with a shared parameter
//! registry, the per-frame conditioning pipeline, and parameter checkpoints.

use crate::autodiff::{concat, ParamSet, Value};
use crate::config::ModelConfig;
use crate::container::{self, Payload, Record};
use crate::diffusion::{Denoiser, DenoiserSettings};
use crate::environment::{EmbeddingProvider, EnvChannel, EnvFrameCache, EnvModule, EnvSettings};
use crate::history::{HistoryEncoder, HistorySettings};
use crate::igi::{AgentNodes, IgiModule, IgiSettings, IgiToggles, NeighborGraph};
use crate::rng::{purpose, stream};
use crate::scene::{SceneEnvironment, Vec2};
use crate::{Error, Result};
use std::path::Path;

/// The learned model: embeddings, conditioning encoders, and the denoiser,
/// all registered in one parameter set.
pub struct CrowdModel {
    pub params: ParamSet,
    pub embed: EmbeddingProvider,
    pub env: Option<EnvModule>,
    pub igi: IgiModule,
    pub history: HistoryEncoder,
    pub denoiser: Denoiser,
    pub config: ModelConfig,
    d_env: usize,
}

/// Everything pedestrian-independent needed to condition one frame.
pub struct FrameConditioning {
    env_cache: Option<EnvFrameCache>,
}

impl CrowdModel {
    /// Build with parameters initialized from `(seed, INIT)`. Embeddings come
    /// from a learned table over the scene's entity ids unless an external
    /// container path is given.
    pub fn build(
        config: &ModelConfig,
        scene: &SceneEnvironment,
        seed: u64,
        external_embeddings: Option<&Path>,
    ) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut rng = stream(seed, &[purpose::INIT]);
        let embed = match external_embeddings {
            Some(path) => {
                let provider = EmbeddingProvider::from_file(path)?;
                if provider.dim != config.embed_dim {
                    return Err(Error::config(format!(
                        "external embeddings have dim {} but the model expects {}",
                        provider.dim, config.embed_dim
                    )));
                }
                for id in scene.embedding_ids() {
                    provider.get(&id)?;
                }
                provider
            }
            None => EmbeddingProvider::learned(
                &mut params,
                &scene.embedding_ids(),
                config.embed_dim,
                &mut rng,
            ),
        };
        let env = if config.env.enabled {
            let channel = match config.env.channel.as_str() {
                "lighting" => EnvChannel::Lighting,
                "density" => EnvChannel::Density,
                "none" => EnvChannel::None,
                other => return Err(Error::config(format!("unknown env channel `{other}`"))),
            };
            let settings = EnvSettings {
                embed_dim: config.embed_dim,
                scene_proj_dim: config.scene_proj_dim,
                d1: config.env.d1,
                d2: config.env.d2,
                d_light: config.env.d_light,
                light_hidden: config.env.light_hidden,
                agg_hidden: config.env.agg_hidden,
                d_env: config.env.d_env,
                use_obstacles: config.env.obstacles,
                use_oois: config.env.oois,
                channel,
                lighting_mean_only: config.env.lighting_mean_only,
                density_k: config.env.density_k,
            };
            let cells = scene.lighting.rows * scene.lighting.cols;
            Some(EnvModule::new(&mut params, settings, cells, &mut rng))
        } else {
            None
        };
        let igi = IgiModule::new(
            &mut params,
            IgiSettings {
                layers: config.igi.layers,
                hidden: config.igi.hidden,
                message_dim: config.igi.message_dim,
                out_dim: config.igi.d_social,
                noise_dim: 2,
                toggles: IgiToggles {
                    use_relative_motion: config.igi.use_relative_motion,
                    use_sim1: config.igi.use_sim1,
                    use_sim2: config.igi.use_sim2,
                    use_sim3: config.igi.use_sim3,
                },
            },
            &mut rng,
        );
        let history = HistoryEncoder::new(
            &mut params,
            HistorySettings {
                window: config.history.window,
                proj_dim: config.history.proj_dim,
                hidden: config.history.hidden,
                relative: config.history.relative,
            },
            &mut rng,
        );
        let d_env = config.env.d_env;
        let cond_in = d_env + config.igi.d_social + config.history.hidden;
        let denoiser = Denoiser::new(
            &mut params,
            DenoiserSettings {
                t_embed_dim: config.denoiser.t_embed_dim,
                cond_in_dim: cond_in,
                cond_dim: config.denoiser.cond_dim,
                width: config.denoiser.width,
                depth: config.denoiser.depth,
            },
            &mut rng,
        );
        Ok(CrowdModel {
            params,
            embed,
            env,
            igi,
            history,
            denoiser,
            config: config.clone(),
            d_env,
        })
    }

    /// Conditioning vector length `d_env + d_social + d_hist`.
    pub fn cond_dim(&self) -> usize {
        self.d_env + self.config.igi.d_social + self.config.history.hidden
    }

    /// Per-frame precomputation (entity enhancement, lighting or density).
    pub fn frame_conditioning(
        &self,
        scene: &SceneEnvironment,
        frame_positions: &[Vec2],
    ) -> Result<FrameConditioning> {
        let env_cache = match &self.env {
            Some(env) => Some(env.frame_cache(&self.embed, scene, frame_positions)?),
            None => None,
        };
        Ok(FrameConditioning { env_cache })
    }

    /// Conditioning signal per pedestrian: environment, social, and history
    /// features concatenated. `nodes` holds the current frame's states
    /// (`None` for invalid pedestrians), `histories` the per-pedestrian
    /// window ending at the current frame, `noise` the per-pedestrian
    /// interaction noise.
    pub fn condition(
        &self,
        scene: &SceneEnvironment,
        frame: &FrameConditioning,
        nodes: &[Option<AgentNodes>],
        histories: &[Vec<Option<AgentNodes>>],
        graph: &NeighborGraph,
        noise: &[Vec<f64>],
    ) -> Vec<Option<Value>> {
        let social = self.igi.forward(nodes, graph, noise);
        nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let node = node.as_ref()?;
                let f_social = social[i].as_ref().unwrap();
                let f_hist = self.history.encode(&histories[i]);
                let f_env = match (&self.env, &frame.env_cache) {
                    (Some(env), Some(cache)) => {
                        let query = env_query(scene, node);
                        env.forward(cache, &query, &node.position)
                    }
                    _ => Value::vector(vec![0.0; self.d_env]),
                };
                Some(concat(&[&f_env, f_social, &f_hist]))
            })
            .collect()
    }

    /// Serialize all parameters as container records in registration order.
    pub fn parameter_records(&self) -> Vec<Record> {
        self.params
            .iter()
            .map(|(name, v)| Record::tensor(name, v.shape().to_vec(), v.to_vec()))
            .collect()
    }

    /// Load parameters from container records; every registered parameter
    /// must be present with a matching shape (extra records are ignored so
    /// training checkpoints can carry optimizer state alongside).
    pub fn load_parameter_records(&self, records: &[Record]) -> Result<()> {
        for (name, value) in self.params.iter() {
            let rec = records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let Payload::Tensor { shape, data } = &rec.payload else {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` is not a tensor record"
                )));
            };
            if shape != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {shape:?} but the model expects {:?}",
                    value.shape()
                )));
            }
            value.set_data(data);
        }
        Ok(())
    }

    /// Write a parameters-only checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path, &self.parameter_records())
    }

    /// Read a parameters-only (or training) checkpoint into this model.
    pub fn load(&self, path: impl AsRef<Path>) -> Result<()> {
        let records = container::read_file(path)?;
        self.load_parameter_records(&records)
    }
}

/// Environment attention query: pedestrian state with its position
/// normalized by the scene bounds (keeps logits invariant under joint
/// translation of pedestrian, entities, and bounds).
pub fn env_query(scene: &SceneEnvironment, node: &AgentNodes) -> Value {
    let center = scene.bounds.center();
    let half = scene.bounds.extent() * 0.5;
    let inv = Value::vector(vec![
        if half.x > 0.0 { 1.0 / half.x } else { 0.0 },
        if half.y > 0.0 { 1.0 / half.y } else { 0.0 },
    ]);
    let p_norm = node
        .position
        .sub(&Value::vector(vec![center.x, center.y]))
        .mul(&inv);
    concat(&[&p_norm, &node.velocity, &node.acceleration])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::igi::build_knn;
    use crate::scene::{build_lighting_grid, Bounds, GrayImage, Obstacle, PixelTransform};

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::default();
        c.embed_dim = 4;
        c.env.d1 = 4;
        c.env.d2 = 4;
        c.env.d_light = 3;
        c.env.light_hidden = 4;
        c.env.agg_hidden = 4;
        c.env.d_env = 4;
        c.igi.layers = 1;
        c.igi.hidden = 4;
        c.igi.message_dim = 4;
        c.igi.d_social = 3;
        c.history.proj_dim = 4;
        c.history.hidden = 4;
        c.denoiser.t_embed_dim = 4;
        c.denoiser.cond_dim = 4;
        c.denoiser.width = 6;
        c.denoiser.depth = 1;
        c
    }

    fn scene() -> SceneEnvironment {
        let image = GrayImage::new(4, 4, vec![100; 16]).unwrap();
        SceneEnvironment {
            obstacles: vec![Obstacle {
                id: "o".into(),
                position: Vec2::new(2.0, 2.0),
                embedding_id: "o".into(),
            }],
            oois: vec![],
            lighting: build_lighting_grid(&image, 2).unwrap(),
            bounds: Bounds {
                min: Vec2::ZERO,
                max: Vec2::new(8.0, 4.0),
            },
            pixel_to_meter: PixelTransform::identity(),
            scene_embedding_id: "scene".into(),
        }
    }

    #[test]
    fn builds_and_conditions_a_frame() {
        let scene = scene();
        let model = CrowdModel::build(&small_config(), &scene, 7, None).unwrap();
        let nodes = vec![
            Some(AgentNodes::from_parts(
                Vec2::new(1.0, 1.0),
                Vec2::new(1.0, 0.0),
                Vec2::ZERO,
            )),
            None,
        ];
        let histories = vec![vec![nodes[0].clone()], vec![]];
        let graph = build_knn(&[Some(Vec2::new(1.0, 1.0)), None], 6);
        let frame = model.frame_conditioning(&scene, &[Vec2::new(1.0, 1.0)]).unwrap();
        let noise = vec![vec![0.1, -0.2], vec![0.0, 0.0]];
        let c = model.condition(&scene, &frame, &nodes, &histories, &graph, &noise);
        assert_eq!(c[0].as_ref().unwrap().shape(), &[model.cond_dim()]);
        assert!(c[1].is_none());
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let scene = scene();
        let a = CrowdModel::build(&small_config(), &scene, 3, None).unwrap();
        let b = CrowdModel::build(&small_config(), &scene, 3, None).unwrap();
        for ((name_a, va), (name_b, vb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(va.to_vec(), vb.to_vec());
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_parameters() {
        let scene = scene();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.esdf");
        let a = CrowdModel::build(&small_config(), &scene, 3, None).unwrap();
        a.save(&path).unwrap();
        let b = CrowdModel::build(&small_config(), &scene, 99, None).unwrap();
        b.load(&path).unwrap();
        for ((_, va), (_, vb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(va.to_vec(), vb.to_vec());
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_is_reported() {
        let scene = scene();
        let a = CrowdModel::build(&small_config(), &scene, 3, None).unwrap();
        let mut records = a.parameter_records();
        records[0] = Record::tensor(records[0].name.clone(), vec![1], vec![0.0]);
        let err = a.load_parameter_records(&records).unwrap_err();
        assert!(err.to_string().contains("shape"));
    }

    #[test]
    fn env_disabled_yields_zero_env_feature_block() {
        let scene = scene();
        let mut config = small_config();
        config.env.enabled = false;
        let model = CrowdModel::build(&config, &scene, 7, None).unwrap();
        let nodes = vec![Some(AgentNodes::from_parts(
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::ZERO,
        ))];
        let histories = vec![vec![nodes[0].clone()]];
        let graph = build_knn(&[Some(Vec2::new(1.0, 1.0))], 6);
        let frame = model.frame_conditioning(&scene, &[]).unwrap();
        let c = model.condition(&scene, &frame, &nodes, &histories, &graph, &[vec![0.0, 0.0]]);
        let head: Vec<f64> = c[0].as_ref().unwrap().to_vec()[..4].to_vec();
        assert_eq!(head, vec![0.0; 4]);
    }
}
