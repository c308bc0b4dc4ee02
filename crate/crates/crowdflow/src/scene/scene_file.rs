//! Scene configuration file (TOML): bounds, pixel-to-meter transform,
//! entities, and lighting setup. Unknown keys are rejected.

use super::{
    build_lighting_grid, build_lighting_grid_with_dims, read_pgm, write_pgm, Bounds, GrayImage,
    LightingGrid, Obstacle, ObjectOfInterest, PixelTransform, SceneEnvironment,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub bounds: BoundsConfig,
    pub transform: TransformConfig,
    pub lighting: LightingConfig,
    pub scene_embedding: String,
    #[serde(default)]
    pub obstacles: Vec<EntityConfig>,
    #[serde(default)]
    pub oois: Vec<EntityConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    /// Row-major 2x3 pixel-to-meter affine matrix.
    pub matrix: [[f64; 3]; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LightingConfig {
    /// Path to a binary PGM (P5), relative to the scene file.
    pub image: String,
    pub cell_px: usize,
    /// Optional fixed partition overriding the ceiling rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<DimsConfig>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DimsConfig {
    pub cols: usize,
    pub rows: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EntityConfig {
    pub id: String,
    pub position: [f64; 2],
    pub embedding: String,
}

impl SceneConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::scene(format!("scene config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene config serializes")
    }
}

/// Load and fully validate a scene. `lighting_image_path`, when given,
/// overrides the image path in the config (otherwise the config path is
/// resolved relative to the scene file's directory).
pub fn load_scene(
    config_path: impl AsRef<Path>,
    lighting_image_path: Option<&Path>,
) -> Result<SceneEnvironment> {
    let config_path = config_path.as_ref();
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        Error::scene(format!("cannot read scene config {}: {e}", config_path.display()))
    })?;
    let config = SceneConfig::parse(&text)?;
    let image_path = match lighting_image_path {
        Some(p) => p.to_path_buf(),
        None => config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&config.lighting.image),
    };
    let image = read_pgm(&image_path).map_err(|e| {
        Error::scene(format!(
            "cannot read lighting image {}: {e}",
            image_path.display()
        ))
    })?;
    build_scene(&config, &image)
}

/// Validate a parsed config against its lighting image.
pub fn build_scene(config: &SceneConfig, image: &GrayImage) -> Result<SceneEnvironment> {
    let bounds = Bounds {
        min: config.bounds.min.into(),
        max: config.bounds.max.into(),
    };
    if !(bounds.min.x < bounds.max.x && bounds.min.y < bounds.max.y) {
        return Err(Error::scene("bounds must have positive extent"));
    }
    let transform = PixelTransform(config.transform.matrix);
    if !transform.is_invertible() {
        return Err(Error::scene("pixel-to-meter transform is not invertible"));
    }
    let lighting = build_lighting(config, image)?;
    let check_entity = |kind: &str, e: &EntityConfig| -> Result<()> {
        if !bounds.contains(e.position.into()) {
            return Err(Error::scene(format!(
                "{kind} `{}` at ({}, {}) lies outside the scene bounds",
                e.id, e.position[0], e.position[1]
            )));
        }
        Ok(())
    };
    for e in &config.obstacles {
        check_entity("obstacle", e)?;
    }
    for e in &config.oois {
        check_entity("object of interest", e)?;
    }
    Ok(SceneEnvironment {
        obstacles: config
            .obstacles
            .iter()
            .map(|e| Obstacle {
                id: e.id.clone(),
                position: e.position.into(),
                embedding_id: e.embedding.clone(),
            })
            .collect(),
        oois: config
            .oois
            .iter()
            .map(|e| ObjectOfInterest {
                id: e.id.clone(),
                position: e.position.into(),
                embedding_id: e.embedding.clone(),
            })
            .collect(),
        lighting,
        bounds,
        pixel_to_meter: transform,
        scene_embedding_id: config.scene_embedding.clone(),
    })
}

fn build_lighting(config: &SceneConfig, image: &GrayImage) -> Result<LightingGrid> {
    match config.lighting.dims {
        Some(d) => build_lighting_grid_with_dims(image, d.cols, d.rows),
        None => build_lighting_grid(image, config.lighting.cell_px),
    }
}

/// Write `scene.toml` plus the lighting image into a directory.
pub fn save_scene(dir: impl AsRef<Path>, config: &SceneConfig, image: &GrayImage) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("scene.toml"), config.to_toml())?;
    write_pgm(dir.join(&config.lighting.image), image)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec2;

    fn base_config() -> SceneConfig {
        SceneConfig {
            bounds: BoundsConfig {
                min: [0.0, 0.0],
                max: [10.0, 4.0],
            },
            transform: TransformConfig {
                matrix: [[0.05, 0.0, 0.0], [0.0, 0.05, 0.0]],
            },
            lighting: LightingConfig {
                image: "lighting.pgm".into(),
                cell_px: 8,
                dims: None,
            },
            scene_embedding: "scene".into(),
            obstacles: vec![],
            oois: vec![],
        }
    }

    fn image() -> GrayImage {
        GrayImage::new(16, 8, vec![200; 16 * 8]).unwrap()
    }

    #[test]
    fn empty_entity_lists_are_valid() {
        let scene = build_scene(&base_config(), &image()).unwrap();
        assert!(scene.obstacles.is_empty());
        assert!(scene.oois.is_empty());
        assert_eq!(scene.lighting.cols, 2);
    }

    #[test]
    fn corner_entity_is_accepted() {
        let mut config = base_config();
        config.obstacles.push(EntityConfig {
            id: "o1".into(),
            position: [10.0, 4.0],
            embedding: "obs".into(),
        });
        assert!(build_scene(&config, &image()).is_ok());
    }

    #[test]
    fn outside_entity_is_rejected_by_name() {
        let mut config = base_config();
        config.oois.push(EntityConfig {
            id: "kiosk".into(),
            position: [11.0, 1.0],
            embedding: "ooi".into(),
        });
        let err = build_scene(&config, &image()).unwrap_err();
        assert!(err.to_string().contains("kiosk"));
    }

    #[test]
    fn degenerate_transform_is_rejected() {
        let mut config = base_config();
        config.transform.matrix = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]];
        assert!(build_scene(&config, &image()).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
            scene_embedding = "scene"
            mystery = 1
            [bounds]
            min = [0.0, 0.0]
            max = [1.0, 1.0]
            [transform]
            matrix = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
            [lighting]
            image = "l.pgm"
            cell_px = 4
        "#;
        assert!(SceneConfig::parse(text).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut config = base_config();
        config.lighting.dims = Some(DimsConfig { cols: 8, rows: 6 });
        config.obstacles.push(EntityConfig {
            id: "pillar".into(),
            position: [3.25, 1.5],
            embedding: "obs-pillar".into(),
        });
        config.oois.push(EntityConfig {
            id: "stand".into(),
            position: [7.0, 3.0],
            embedding: "ooi-stand".into(),
        });
        let text = config.to_toml();
        let back = SceneConfig::parse(&text).unwrap();
        assert_eq!(config, back);

        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), &config, &image()).unwrap();
        let scene = load_scene(dir.path().join("scene.toml"), None).unwrap();
        assert_eq!(scene.obstacles.len(), 1);
        assert_eq!(scene.oois[0].position, Vec2::new(7.0, 3.0));
        assert_eq!((scene.lighting.cols, scene.lighting.rows), (8, 6));
    }
}
