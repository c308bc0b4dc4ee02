//! Environment conditioning: obstacles, objects of interest, and lighting
//! (or a crowd-density grid) reduced to one feature vector per pedestrian.
//!
//! Obstacles go through two stages. Stage one enhances each obstacle feature
//! with global scene context: the query comes from the obstacle embedding
//! plus its position, key and value from the scene feature, and the enhanced
//! feature is the query plus the attention readout (the residual keeps
//! per-obstacle identity; with a single scene key the readout itself is just
//! the scene value). Stage two lets each pedestrian attend over the enhanced
//! obstacle features with a learned relative-position bias on the logits.
//!
//! Objects of interest are enhanced in one shot by projecting the
//! concatenation of their embedding, position, and the scene feature, then
//! enter the same pedestrian attention with their own parameters.
//!
//! Positions are normalized by the scene bounds to `[-1, 1]` wherever they
//! enter a feature vector or query; relative positions stay in meters.

use crate::autodiff::{concat, Activation, Affine, Mlp, ParamSet, Value};
use crate::container::{self, Payload};
use crate::scene::{build_density_grid, SceneEnvironment, Vec2};
use crate::{Error, Result};
use rand::Rng;
use std::collections::HashMap;
use std::path::Path;

/// How entity embeddings are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Trainable table keyed by entity id.
    LearnedTable,
    /// Fixed vectors loaded from a container file.
    ExternalFile,
}

/// Embedding lookup for scene entities. Vectors share one dimension; lookups
/// of unregistered ids are errors.
pub struct EmbeddingProvider {
    pub dim: usize,
    pub mode: EmbeddingMode,
    order: Vec<String>,
    table: HashMap<String, Value>,
}

impl EmbeddingProvider {
    /// Trainable table with one row per id, initialized like affine weights.
    pub fn learned(
        params: &mut ParamSet,
        ids: &[String],
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut table = HashMap::new();
        let mut order = Vec::new();
        for id in ids {
            if table.contains_key(id) {
                continue;
            }
            let data: Vec<f64> = (0..dim).map(|_| rng.random_range(-bound..bound)).collect();
            let v = params.register(&format!("embed.{id}"), data, vec![dim]);
            order.push(id.clone());
            table.insert(id.clone(), v);
        }
        EmbeddingProvider {
            dim,
            mode: EmbeddingMode::LearnedTable,
            order,
            table,
        }
    }

    /// Fixed vectors from a container file of rank-1 tensor records.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let records = container::read_file(path)?;
        let mut table = HashMap::new();
        let mut order = Vec::new();
        let mut dim = None;
        for rec in records {
            let Payload::Tensor { shape, data } = rec.payload else {
                return Err(Error::Checkpoint(format!(
                    "embedding record `{}` is not a tensor",
                    rec.name
                )));
            };
            if shape.len() != 1 {
                return Err(Error::Checkpoint(format!(
                    "embedding record `{}` must be rank 1, got {shape:?}",
                    rec.name
                )));
            }
            match dim {
                None => dim = Some(shape[0]),
                Some(d) if d != shape[0] => {
                    return Err(Error::Checkpoint(format!(
                        "embedding record `{}` has dim {} but earlier records have {d}",
                        rec.name, shape[0]
                    )))
                }
                _ => {}
            }
            order.push(rec.name.clone());
            table.insert(rec.name, Value::constant(data, shape));
        }
        let dim = dim.ok_or_else(|| Error::Checkpoint("embedding file has no records".into()))?;
        Ok(EmbeddingProvider {
            dim,
            mode: EmbeddingMode::ExternalFile,
            order,
            table,
        })
    }

    pub fn get(&self, id: &str) -> Result<&Value> {
        self.table
            .get(id)
            .ok_or_else(|| Error::invalid(format!("embedding id `{id}` is not registered")))
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }
}

/// One cross-attention block: query/key/value projections plus the small
/// bias network over relative positions and the scaling dimension.
pub struct AttentionBlock {
    pub w_q: Affine,
    pub w_k: Affine,
    pub w_v: Affine,
    pub bias_net: Mlp,
    pub scale_dim: usize,
}

impl AttentionBlock {
    fn init(
        params: &mut ParamSet,
        name: &str,
        query_in: usize,
        entity_in: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        AttentionBlock {
            w_q: Affine::init(params, &format!("{name}.w_q"), dim, query_in, rng),
            w_k: Affine::init(params, &format!("{name}.w_k"), dim, entity_in, rng),
            w_v: Affine::init(params, &format!("{name}.w_v"), dim, entity_in, rng),
            bias_net: Mlp::init(params, &format!("{name}.bias"), &[2, 8, 1], Activation::Tanh, rng),
        scale_dim: dim,
        }
    }
}

/// Scaled dot-product attention of one query over an entity list with an
/// additive per-entity logit bias. Weights form a probability distribution;
/// an empty entity list yields a zero vector of `out_dim`.
pub fn entity_attention(
    query: &Value,
    keys: &[Value],
    values: &[Value],
    logit_bias: &[Value],
    scale_dim: usize,
    out_dim: usize,
) -> Value {
    assert_eq!(keys.len(), values.len(), "attention: {} keys vs {} values", keys.len(), values.len());
    assert_eq!(
        keys.len(),
        logit_bias.len(),
        "attention: {} keys vs {} biases",
        keys.len(),
        logit_bias.len()
    );
    if keys.is_empty() {
        return Value::vector(vec![0.0; out_dim]);
    }
    let scale = 1.0 / (scale_dim as f64).sqrt();
    let logits: Vec<Value> = keys
        .iter()
        .zip(logit_bias)
        .map(|(k, b)| query.dot(k).scale_const(scale).add(b))
        .collect();
    let logit_refs: Vec<&Value> = logits.iter().collect();
    let weights = concat(&logit_refs).softmax();
    let mut out = values[0].scale_by(&weights.slice(0, 1));
    for (l, v) in values.iter().enumerate().skip(1) {
        out = out.add(&v.scale_by(&weights.slice(l, 1)));
    }
    out
}

/// Which third conditioning channel is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvChannel {
    Lighting,
    Density,
    None,
}

/// Dimension and toggle configuration for the environment module.
#[derive(Clone, Copy, Debug)]
pub struct EnvSettings {
    pub embed_dim: usize,
    pub scene_proj_dim: Option<usize>,
    pub d1: usize,
    pub d2: usize,
    pub d_light: usize,
    pub light_hidden: usize,
    pub agg_hidden: usize,
    pub d_env: usize,
    pub use_obstacles: bool,
    pub use_oois: bool,
    pub channel: EnvChannel,
    pub lighting_mean_only: bool,
    pub density_k: usize,
}

/// The environment feature pipeline. The aggregate MLP input layout is
/// static: disabled or empty channels contribute zero vectors.
pub struct EnvModule {
    pub settings: EnvSettings,
    scene_proj: Option<Affine>,
    obs_proj_q: Affine,
    obs_proj_k: Affine,
    obs_proj_v: Affine,
    obs_attention: AttentionBlock,
    ooi_proj: Affine,
    ooi_attention: AttentionBlock,
    light_mlp: Option<Mlp>,
    density_mlp: Option<Mlp>,
    aggregate: Mlp,
}

/// Per-frame precomputation shared by all pedestrians.
pub struct EnvFrameCache {
    obstacle_keys: Vec<Value>,
    obstacle_values: Vec<Value>,
    obstacle_positions: Vec<Vec2>,
    ooi_keys: Vec<Value>,
    ooi_values: Vec<Value>,
    ooi_positions: Vec<Vec2>,
    channel_feature: Value,
}

impl EnvModule {
    pub fn new(
        params: &mut ParamSet,
        settings: EnvSettings,
        lighting_cells: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d_e = settings.embed_dim;
        let scene_dim = settings.scene_proj_dim.unwrap_or(d_e);
        let scene_proj = settings
            .scene_proj_dim
            .map(|d| Affine::init(params, "env.scene_proj", d, d_e, rng));
        let light_in = lighting_cells * if settings.lighting_mean_only { 1 } else { 3 };
        let light_mlp = (settings.channel == EnvChannel::Lighting).then(|| {
            Mlp::init(
                params,
                "env.light",
                &[light_in, settings.light_hidden, settings.d_light],
                Activation::Tanh,
                rng,
            )
        });
        let density_mlp = (settings.channel == EnvChannel::Density).then(|| {
            Mlp::init(
                params,
                "env.density",
                &[
                    settings.density_k * settings.density_k,
                    settings.light_hidden,
                    settings.d_light,
                ],
                Activation::Tanh,
                rng,
            )
        });
        EnvModule {
            obs_proj_q: Affine::init(params, "env.obs_enh.q", settings.d1, d_e + 2, rng),
            obs_proj_k: Affine::init(params, "env.obs_enh.k", settings.d1, scene_dim, rng),
            obs_proj_v: Affine::init(params, "env.obs_enh.v", settings.d1, scene_dim, rng),
            obs_attention: AttentionBlock::init(params, "env.obs_attn", 6, settings.d1, settings.d1, rng),
            ooi_proj: Affine::init(
                params,
                "env.ooi_enh",
                settings.d2,
                d_e + 2 + scene_dim,
                rng,
            ),
            ooi_attention: AttentionBlock::init(params, "env.ooi_attn", 6, settings.d2, settings.d2, rng),
            aggregate: Mlp::init(
                params,
                "env.aggregate",
                &[
                    settings.d1 + settings.d2 + settings.d_light,
                    settings.agg_hidden,
                    settings.d_env,
                ],
                Activation::Tanh,
                rng,
            ),
            light_mlp,
            density_mlp,
            scene_proj,
            settings,
        }
    }

    /// Global scene feature: the scene embedding, optionally projected.
    pub fn scene_feature(&self, embed: &EmbeddingProvider, scene: &SceneEnvironment) -> Result<Value> {
        let raw = embed.get(&scene.scene_embedding_id)?;
        Ok(match &self.scene_proj {
            Some(proj) => proj.apply(raw),
            None => raw.clone(),
        })
    }

    /// Stage-one enhancement of obstacle features with scene context.
    pub fn enhance_obstacles(
        &self,
        embed: &EmbeddingProvider,
        scene: &SceneEnvironment,
    ) -> Result<Vec<Value>> {
        let scene_feat = self.scene_feature(embed, scene)?;
        let key = self.obs_proj_k.apply(&scene_feat);
        let value = self.obs_proj_v.apply(&scene_feat);
        let mut out = Vec::with_capacity(scene.obstacles.len());
        for obstacle in &scene.obstacles {
            let pos = scene.bounds.normalize(obstacle.position);
            let query = self.obs_proj_q.apply(&concat(&[
                embed.get(&obstacle.embedding_id)?,
                &Value::vector(vec![pos.x, pos.y]),
            ]));
            // Softmax over the single scene key is 1, so the readout equals
            // the scene value; the residual query keeps obstacle identity.
            let readout = entity_attention(
                &query,
                std::slice::from_ref(&key),
                std::slice::from_ref(&value),
                &[Value::scalar(0.0)],
                self.obs_attention.scale_dim,
                self.settings.d1,
            );
            out.push(query.add(&readout));
        }
        Ok(out)
    }

    /// Stage-one enhancement of OOI features: projection of embedding,
    /// position, and scene context.
    pub fn enhance_oois(
        &self,
        embed: &EmbeddingProvider,
        scene: &SceneEnvironment,
    ) -> Result<Vec<Value>> {
        let scene_feat = self.scene_feature(embed, scene)?;
        let mut out = Vec::with_capacity(scene.oois.len());
        for ooi in &scene.oois {
            let pos = scene.bounds.normalize(ooi.position);
            out.push(self.ooi_proj.apply(&concat(&[
                embed.get(&ooi.embedding_id)?,
                &Value::vector(vec![pos.x, pos.y]),
                &scene_feat,
            ])));
        }
        Ok(out)
    }

    /// Lighting feature from flattened per-cell stats.
    pub fn lighting_feature(&self, scene: &SceneEnvironment) -> Value {
        let mlp = self.light_mlp.as_ref().expect("lighting channel not built");
        let flat = scene.lighting.flatten(self.settings.lighting_mean_only);
        assert_eq!(
            flat.len(),
            mlp.in_dim(),
            "lighting grid size {} does not match the encoder input {}",
            flat.len(),
            mlp.in_dim()
        );
        mlp.apply(&Value::vector(flat))
    }

    /// Density feature from a K x K count grid, normalized by the number of
    /// agents (zero-safe).
    pub fn density_feature(&self, scene: &SceneEnvironment, positions: &[Vec2]) -> Result<Value> {
        let mlp = self.density_mlp.as_ref().expect("density channel not built");
        let counts = build_density_grid(positions, scene.bounds, self.settings.density_k)?;
        let total: u32 = counts.iter().sum();
        let scale = if total > 0 { 1.0 / total as f64 } else { 0.0 };
        let flat: Vec<f64> = counts.iter().map(|c| *c as f64 * scale).collect();
        Ok(mlp.apply(&Value::vector(flat)))
    }

    /// Everything pedestrian-independent for one frame.
    pub fn frame_cache(
        &self,
        embed: &EmbeddingProvider,
        scene: &SceneEnvironment,
        frame_positions: &[Vec2],
    ) -> Result<EnvFrameCache> {
        let (obstacle_keys, obstacle_values, obstacle_positions) = if self.settings.use_obstacles {
            let enhanced = self.enhance_obstacles(embed, scene)?;
            (
                enhanced.iter().map(|f| self.obs_attention.w_k.apply(f)).collect(),
                enhanced.iter().map(|f| self.obs_attention.w_v.apply(f)).collect(),
                scene.obstacles.iter().map(|o| o.position).collect(),
            )
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let (ooi_keys, ooi_values, ooi_positions) = if self.settings.use_oois {
            let enhanced = self.enhance_oois(embed, scene)?;
            (
                enhanced.iter().map(|f| self.ooi_attention.w_k.apply(f)).collect(),
                enhanced.iter().map(|f| self.ooi_attention.w_v.apply(f)).collect(),
                scene.oois.iter().map(|o| o.position).collect(),
            )
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let channel_feature = match self.settings.channel {
            EnvChannel::Lighting => self.lighting_feature(scene),
            EnvChannel::Density => self.density_feature(scene, frame_positions)?,
            EnvChannel::None => Value::vector(vec![0.0; self.settings.d_light]),
        };
        Ok(EnvFrameCache {
            obstacle_keys,
            obstacle_values,
            obstacle_positions,
            ooi_keys,
            ooi_values,
            ooi_positions,
            channel_feature,
        })
    }

    /// Pedestrian attention over cached entity features. `query_state` is the
    /// six-dimensional state with bounds-normalized position; `position` the
    /// raw position (graph value) feeding the relative-position bias.
    fn ped_entity_attention(
        &self,
        block: &AttentionBlock,
        keys: &[Value],
        values: &[Value],
        entity_positions: &[Vec2],
        query_state: &Value,
        position: &Value,
        out_dim: usize,
    ) -> Value {
        if keys.is_empty() {
            return Value::vector(vec![0.0; out_dim]);
        }
        let query = block.w_q.apply(query_state);
        let biases: Vec<Value> = entity_positions
            .iter()
            .map(|ep| {
                let entity = Value::vector(vec![ep.x, ep.y]);
                block.bias_net.apply(&entity.sub(position))
            })
            .collect();
        entity_attention(&query, keys, values, &biases, block.scale_dim, out_dim)
    }

    /// Pedestrian-obstacle interaction feature.
    pub fn ped_obstacle_feature(
        &self,
        cache: &EnvFrameCache,
        query_state: &Value,
        position: &Value,
    ) -> Value {
        self.ped_entity_attention(
            &self.obs_attention,
            &cache.obstacle_keys,
            &cache.obstacle_values,
            &cache.obstacle_positions,
            query_state,
            position,
            self.settings.d1,
        )
    }

    /// Pedestrian-OOI interaction feature.
    pub fn ped_ooi_feature(
        &self,
        cache: &EnvFrameCache,
        query_state: &Value,
        position: &Value,
    ) -> Value {
        self.ped_entity_attention(
            &self.ooi_attention,
            &cache.ooi_keys,
            &cache.ooi_values,
            &cache.ooi_positions,
            query_state,
            position,
            self.settings.d2,
        )
    }

    /// Fused environment feature for one pedestrian.
    pub fn forward(
        &self,
        cache: &EnvFrameCache,
        query_state: &Value,
        position: &Value,
    ) -> Value {
        let f_obs = self.ped_obstacle_feature(cache, query_state, position);
        let f_ooi = self.ped_ooi_feature(cache, query_state, position);
        self.aggregate
            .apply(&concat(&[&f_obs, &f_ooi, &cache.channel_feature]))
    }
}
