//! Domain types for pedestrians, episodes, and scene environments, plus the
//! loaders for trajectory files, scene configuration, and lighting images.

mod grids;
mod pgm;
mod scene_file;
mod trajectory;

pub use grids::{build_density_grid, build_lighting_grid, build_lighting_grid_with_dims};
pub use pgm::{read_pgm, write_pgm, GrayImage};
pub use scene_file::{
    build_scene, load_scene, save_scene, BoundsConfig, DimsConfig, EntityConfig, LightingConfig,
    SceneConfig, TransformConfig,
};
pub use trajectory::{load_trajectories, parse_trajectories, save_trajectories};

use crate::{Error, Result};

/// 2-vector in scene meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector, or zero when the norm vanishes.
    pub fn unit_or_zero(self) -> Vec2 {
        let n = self.norm();
        if n < 1e-12 {
            Vec2::ZERO
        } else {
            self * (1.0 / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Kinematic triple of one pedestrian at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PedestrianState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
}

impl PedestrianState {
    pub fn new(position: Vec2, velocity: Vec2, acceleration: Vec2) -> Self {
        PedestrianState {
            position,
            velocity,
            acceleration,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite() && self.acceleration.is_finite()
    }
}

/// Pedestrian-by-time grid of optional kinematic data.
///
/// Positions come from the source data; velocities (forward differences) and
/// accelerations (differences of velocities) are derived, so they are absent
/// near the ends of each pedestrian's valid interval. Valid position frames
/// form one contiguous interval per pedestrian.
#[derive(Clone, Debug)]
pub struct Episode {
    pub frame_interval: f64,
    pub ped_ids: Vec<u64>,
    positions: Vec<Vec<Option<Vec2>>>,
    velocities: Vec<Vec<Option<Vec2>>>,
    accelerations: Vec<Vec<Option<Vec2>>>,
    pub destinations: Vec<Option<Vec2>>,
    pub desired_speeds: Vec<Option<f64>>,
}

impl Episode {
    /// Build from a position grid, deriving velocities and accelerations by
    /// finite differences. Valid positions per pedestrian must be contiguous.
    pub fn from_positions(
        ped_ids: Vec<u64>,
        positions: Vec<Vec<Option<Vec2>>>,
        frame_interval: f64,
    ) -> Result<Self> {
        if frame_interval <= 0.0 {
            return Err(Error::invalid("frame_interval must be positive"));
        }
        let frames = positions.first().map_or(0, |row| row.len());
        for (p, row) in positions.iter().enumerate() {
            if row.len() != frames {
                return Err(Error::invalid("ragged position grid"));
            }
            let mut seen_valid = false;
            let mut seen_gap_after_valid = false;
            for cell in row {
                match cell {
                    Some(v) if !v.is_finite() => {
                        return Err(Error::NonFinite {
                            context: format!("position of pedestrian {}", ped_ids[p]),
                        })
                    }
                    Some(_) => {
                        if seen_gap_after_valid {
                            return Err(Error::invalid(format!(
                                "pedestrian {} has a gap in its valid frames",
                                ped_ids[p]
                            )));
                        }
                        seen_valid = true;
                    }
                    None => {
                        if seen_valid {
                            seen_gap_after_valid = true;
                        }
                    }
                }
            }
        }
        let n = positions.len();
        let dt = frame_interval;
        let mut velocities = vec![vec![None; frames]; n];
        let mut accelerations = vec![vec![None; frames]; n];
        for p in 0..n {
            for t in 0..frames {
                if let (Some(a), Some(b)) = (positions[p][t], pos_at(&positions, p, t + 1, frames)) {
                    velocities[p][t] = Some((b - a) * (1.0 / dt));
                }
            }
            for t in 0..frames {
                if let (Some(v0), Some(v1)) =
                    (velocities[p][t], vel_at(&velocities, p, t + 1, frames))
                {
                    accelerations[p][t] = Some((v1 - v0) * (1.0 / dt));
                }
            }
        }
        Ok(Episode {
            frame_interval,
            destinations: vec![None; n],
            desired_speeds: vec![None; n],
            ped_ids,
            positions,
            velocities,
            accelerations,
        })
    }

    /// An empty grid to be filled by a simulator (all channels stored
    /// directly, no finite-difference derivation).
    pub fn empty(ped_ids: Vec<u64>, frames: usize, frame_interval: f64) -> Self {
        let n = ped_ids.len();
        Episode {
            frame_interval,
            ped_ids,
            positions: vec![vec![None; frames]; n],
            velocities: vec![vec![None; frames]; n],
            accelerations: vec![vec![None; frames]; n],
            destinations: vec![None; n],
            desired_speeds: vec![None; n],
        }
    }

    pub fn num_pedestrians(&self) -> usize {
        self.ped_ids.len()
    }

    pub fn num_frames(&self) -> usize {
        self.positions.first().map_or(0, |r| r.len())
    }

    pub fn position(&self, ped: usize, frame: usize) -> Option<Vec2> {
        self.positions[ped][frame]
    }

    pub fn velocity(&self, ped: usize, frame: usize) -> Option<Vec2> {
        self.velocities[ped][frame]
    }

    pub fn acceleration(&self, ped: usize, frame: usize) -> Option<Vec2> {
        self.accelerations[ped][frame]
    }

    /// Full kinematic state; present only where all three channels are.
    pub fn state(&self, ped: usize, frame: usize) -> Option<PedestrianState> {
        Some(PedestrianState {
            position: self.positions[ped][frame]?,
            velocity: self.velocities[ped][frame]?,
            acceleration: self.accelerations[ped][frame]?,
        })
    }

    /// Store a full state (simulation output path).
    pub fn set_state(&mut self, ped: usize, frame: usize, state: PedestrianState) {
        self.positions[ped][frame] = Some(state.position);
        self.velocities[ped][frame] = Some(state.velocity);
        self.accelerations[ped][frame] = Some(state.acceleration);
    }

    /// Inclusive frame range of valid positions for one pedestrian.
    pub fn valid_range(&self, ped: usize) -> Option<(usize, usize)> {
        let row = &self.positions[ped];
        let first = row.iter().position(|c| c.is_some())?;
        let last = row.iter().rposition(|c| c.is_some())?;
        Some((first, last))
    }

    /// Last valid position of a pedestrian.
    pub fn last_position(&self, ped: usize) -> Option<Vec2> {
        let (_, last) = self.valid_range(ped)?;
        self.positions[ped][last]
    }

    /// Number of valid positions across the episode.
    pub fn num_valid_positions(&self) -> usize {
        self.positions
            .iter()
            .map(|row| row.iter().filter(|c| c.is_some()).count())
            .sum()
    }

    /// Valid positions at one frame, with pedestrian indices.
    pub fn frame_positions(&self, frame: usize) -> Vec<(usize, Vec2)> {
        (0..self.num_pedestrians())
            .filter_map(|p| self.positions[p][frame].map(|v| (p, v)))
            .collect()
    }
}

fn pos_at(grid: &[Vec<Option<Vec2>>], p: usize, t: usize, frames: usize) -> Option<Vec2> {
    if t >= frames {
        None
    } else {
        grid[p][t]
    }
}

fn vel_at(grid: &[Vec<Option<Vec2>>], p: usize, t: usize, frames: usize) -> Option<Vec2> {
    if t >= frames {
        None
    } else {
        grid[p][t]
    }
}

/// Static scene entity that pedestrians avoid.
#[derive(Clone, Debug, PartialEq)]
pub struct Obstacle {
    pub id: String,
    pub position: Vec2,
    pub embedding_id: String,
}

/// Static scene entity that attracts route choice (store, kiosk, bench).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectOfInterest {
    pub id: String,
    pub position: Vec2,
    pub embedding_id: String,
}

/// Per-cell brightness statistics over a partition of the scene image.
/// All stats are scaled to `[0, 1]`; `min <= mean <= max` holds per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LightingGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_px: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Row-major `(mean, max, min)` per cell.
    pub stats: Vec<(f64, f64, f64)>,
}

impl LightingGrid {
    /// Flatten to the MLP input layout: mean, max, min per cell in row-major
    /// order, or means only.
    pub fn flatten(&self, mean_only: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.stats.len() * if mean_only { 1 } else { 3 });
        for (mean, max, min) in &self.stats {
            out.push(*mean);
            if !mean_only {
                out.push(*max);
                out.push(*min);
            }
        }
        out
    }
}

/// Axis-aligned scene rectangle in meters (closed bounds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec2 {
        self.max - self.min
    }

    /// Map a point into `[-1, 1]^2` relative to these bounds.
    pub fn normalize(&self, p: Vec2) -> Vec2 {
        let c = self.center();
        let e = self.extent() * 0.5;
        Vec2::new(
            if e.x > 0.0 { (p.x - c.x) / e.x } else { 0.0 },
            if e.y > 0.0 { (p.y - c.y) / e.y } else { 0.0 },
        )
    }
}

/// Affine pixel-to-meter transform (row-major 2x3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelTransform(pub [[f64; 3]; 2]);

impl PixelTransform {
    pub fn identity() -> Self {
        PixelTransform([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    }

    pub fn determinant(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn is_invertible(&self) -> bool {
        self.determinant().abs() > 1e-12
    }

    pub fn apply(&self, px: Vec2) -> Vec2 {
        Vec2::new(
            self.0[0][0] * px.x + self.0[0][1] * px.y + self.0[0][2],
            self.0[1][0] * px.x + self.0[1][1] * px.y + self.0[1][2],
        )
    }
}

/// Everything static about a scene.
#[derive(Clone, Debug)]
pub struct SceneEnvironment {
    pub obstacles: Vec<Obstacle>,
    pub oois: Vec<ObjectOfInterest>,
    pub lighting: LightingGrid,
    pub bounds: Bounds,
    pub pixel_to_meter: PixelTransform,
    pub scene_embedding_id: String,
}

impl SceneEnvironment {
    /// Ids the embedding provider must know for this scene.
    pub fn embedding_ids(&self) -> Vec<String> {
        let mut ids = vec![self.scene_embedding_id.clone()];
        ids.extend(self.obstacles.iter().map(|o| o.embedding_id.clone()));
        ids.extend(self.oois.iter().map(|o| o.embedding_id.clone()));
        ids.sort();
        ids.dedup();
        ids
    }
}
