//! Run configuration: a TOML tree with validated keys (unknown keys are
//! rejected), shipped defaults, and dotted-path command-line overrides.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneRef,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub physics: PhysicsConfig,
    pub training: TrainingConfig,
    pub metrics: MetricsConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scene: SceneRef::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            diffusion: DiffusionConfig::default(),
            physics: PhysicsConfig::default(),
            training: TrainingConfig::default(),
            metrics: MetricsConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SceneRef {
    /// Path to the scene TOML, relative to the run config file.
    pub path: String,
    /// Optional external embedding container; absent means a learned table.
    pub embeddings: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Ground-truth trajectory CSV, relative to the run config file.
    pub trajectories: String,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            trajectories: String::new(),
            frame_interval: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub scene_proj_dim: Option<usize>,
    pub env: EnvConfig,
    pub igi: IgiConfig,
    pub history: HistoryConfig,
    pub denoiser: DenoiserConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            scene_proj_dim: None,
            env: EnvConfig::default(),
            igi: IgiConfig::default(),
            history: HistoryConfig::default(),
            denoiser: DenoiserConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Master switch; disabled means the environment feature is a zero
    /// vector and no environment parameters exist.
    pub enabled: bool,
    pub obstacles: bool,
    pub oois: bool,
    /// Third channel: "lighting", "density", or "none".
    pub channel: String,
    pub d1: usize,
    pub d2: usize,
    pub d_light: usize,
    pub light_hidden: usize,
    pub agg_hidden: usize,
    pub d_env: usize,
    /// Pool only cell means instead of mean/max/min.
    pub lighting_mean_only: bool,
    pub density_k: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            enabled: true,
            obstacles: true,
            oois: true,
            channel: "lighting".into(),
            d1: 16,
            d2: 16,
            d_light: 8,
            light_hidden: 32,
            agg_hidden: 32,
            d_env: 16,
            lighting_mean_only: false,
            density_k: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IgiConfig {
    pub top_k: usize,
    pub layers: usize,
    pub hidden: usize,
    pub message_dim: usize,
    pub d_social: usize,
    #[serde(rename = "use_relative_motion")]
    pub use_relative_motion: bool,
    pub use_sim1: bool,
    pub use_sim2: bool,
    pub use_sim3: bool,
}

impl Default for IgiConfig {
    fn default() -> Self {
        IgiConfig {
            top_k: 6,
            layers: 3,
            hidden: 32,
            message_dim: 32,
            d_social: 16,
            use_relative_motion: true,
            use_sim1: true,
            use_sim2: true,
            use_sim3: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HistoryConfig {
    pub window: usize,
    pub proj_dim: usize,
    pub hidden: usize,
    pub relative: bool,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        HistoryConfig {
            window: 8,
            proj_dim: 16,
            hidden: 32,
            relative: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub t_embed_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub depth: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            t_embed_dim: 16,
            cond_dim: 32,
            width: 64,
            depth: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// "linear" or "cosine".
    pub schedule: String,
    /// "ddim" or "ddpm".
    pub sampler: String,
    pub ddim_steps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 70,
            beta_start: 1e-4,
            beta_end: 0.05,
            schedule: "linear".into(),
            sampler: "ddim".into(),
            ddim_steps: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// Per-pedestrian destination coefficient.
    pub m: f64,
    /// Global relaxation time, seconds.
    pub mu: f64,
    pub repulsion: RepulsionConfig,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            m: 1.0,
            mu: 0.5,
            repulsion: RepulsionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RepulsionConfig {
    pub enabled: bool,
    pub lambda: f64,
    pub sigma: f64,
}

impl Default for RepulsionConfig {
    fn default() -> Self {
        RepulsionConfig {
            enabled: false,
            lambda: 1.0,
            sigma: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lambda_a: f64,
    pub lambda_p: f64,
    /// Rollout horizon in frames.
    pub horizon: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub skip_frames: usize,
    /// Stride between training segment starts.
    pub stride: usize,
    /// Fraction of trailing frames held out for validation.
    pub val_fraction: f64,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda_a: 1.0,
            lambda_p: 1.0,
            horizon: 4,
            batch_size: 32,
            epochs: 160,
            learning_rate: 1e-5,
            weight_decay: 1e-5,
            lr_decay: 0.999,
            lr_decay_every: 10,
            skip_frames: 25,
            stride: 4,
            val_fraction: 0.2,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ot_epsilon: f64,
    /// Gaussian kernel bandwidth; absent means the median heuristic.
    pub mmd_bandwidth: Option<f64>,
    pub collision_threshold: f64,
    /// Report the debiased divergence instead of the raw entropic cost.
    pub ot_debias: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            ot_epsilon: 0.01,
            mmd_bandwidth: None,
            collision_threshold: 0.5,
            ot_debias: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// First simulated frame; earlier frames seed history. Absent means
    /// `skip_frames + history window`.
    pub start_frame: Option<usize>,
    /// Number of frames to roll out. Absent means to the episode end.
    pub frames: Option<usize>,
    /// Stop integrating pedestrians within this distance of their goal
    /// (0 disables freezing).
    #[serde(rename = "freeze_at_goal")]
    pub freeze_radius: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            start_frame: None,
            frames: None,
            freeze_radius: 0.0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Load from a file with `key.path=value` overrides applied to the TOML
    /// tree before deserialization.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.as_ref().display()))
        })?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Value =
            toml::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        for spec in overrides {
            apply_override(&mut tree, spec)?;
        }
        let config: RunConfig = tree
            .try_into()
            .map_err(|e| Error::config(format!("run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.training.lambda_a >= 0.0 && self.training.lambda_p >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if self.training.lambda_a == 0.0 && self.training.lambda_p == 0.0 {
            return Err(Error::config("at least one loss weight must be positive"));
        }
        if self.training.horizon == 0 {
            return Err(Error::config("training horizon must be at least 1"));
        }
        if self.data.frame_interval <= 0.0 {
            return Err(Error::config("frame_interval must be positive"));
        }
        if !matches!(self.model.env.channel.as_str(), "lighting" | "density" | "none") {
            return Err(Error::config(format!(
                "env channel must be lighting, density, or none, got `{}`",
                self.model.env.channel
            )));
        }
        if !matches!(self.diffusion.schedule.as_str(), "linear" | "cosine") {
            return Err(Error::config(format!(
                "schedule must be linear or cosine, got `{}`",
                self.diffusion.schedule
            )));
        }
        if !matches!(self.diffusion.sampler.as_str(), "ddim" | "ddpm") {
            return Err(Error::config(format!(
                "sampler must be ddim or ddpm, got `{}`",
                self.diffusion.sampler
            )));
        }
        if self.diffusion.ddim_steps == 0 || self.diffusion.ddim_steps > self.diffusion.steps {
            return Err(Error::config("ddim_steps must lie in 1..=steps"));
        }
        if !(0.0..1.0).contains(&self.training.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Apply one `a.b.c=value` override; the value is parsed as TOML (falling
/// back to a string when it does not parse as one).
fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{spec}` is not key=value")))?;
    let parsed: toml::Value = raw
        .parse()
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let mut node = tree;
    let segments: Vec<&str> = path.trim().split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{spec}`: `{seg}` is not a table")))?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(seg.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    Ok(())
}
