//! Scene descriptions for dataset generation.
//!
//! A scene is a TOML document naming the cloth (an OBJ file or a generated
//! grid), its handles, scripted obstacles, material parameters and timing.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::obj::load_obj;
use crate::sim::{ForceConfig, Obstacle, Shape, DEFAULT_DENSITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub width: f64,
    pub height: f64,
    pub cells_u: usize,
    pub cells_v: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            width: 1.5,
            height: 1.0,
            cells_u: 13,
            cells_v: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Material v axis along world +y (a hanging sheet).
    #[default]
    Vertical,
    /// Material v axis along world −z (a sheet lying flat).
    Horizontal,
}

/// Sinusoidal motion of an obstacle center: `c(t) = c₀ + a·sin(2πt/T + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub amplitude: [f64; 3],
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleConfig {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub trajectory: Option<Trajectory>,
}

impl ObstacleConfig {
    pub fn at(&self, t: f64) -> Obstacle {
        let (shift, vel) = match &self.trajectory {
            Some(tr) => {
                let a = Vec3::from(tr.amplitude);
                let w = TAU / tr.period;
                let arg = w * t + tr.phase;
                (a * arg.sin(), a * (w * arg.cos()))
            }
            None => (Vec3::zeros(), Vec3::zeros()),
        };
        let shape = match &self.shape {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: (Vec3::from(*center) + shift).into(),
                radius: *radius,
            },
            Shape::HalfSpace { point, normal } => Shape::HalfSpace {
                point: (Vec3::from(*point) + shift).into(),
                normal: *normal,
            },
        };
        Obstacle {
            shape,
            offset: self.offset,
            velocity: vel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    /// Virtual spring stiffness, N/m.
    pub stiffness: f64,
    pub two_level: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            stiffness: 10.0,
            two_level: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub name: String,
    /// OBJ file for the coarse cloth; a grid is generated when absent.
    pub mesh: Option<PathBuf>,
    pub grid: GridSpec,
    pub orientation: Orientation,
    pub origin: [f64; 3],
    /// Pinned coarse vertices.
    pub handles: Vec<usize>,
    /// Additionally pin one randomly chosen vertex of the top row.
    pub random_top_handle: bool,
    pub obstacles: Vec<ObstacleConfig>,
    pub forces: ForceConfig,
    /// Forces of the coarse overlay level; defaults to `forces`.
    pub coarse_forces: Option<ForceConfig>,
    /// kg/m²
    pub density: f64,
    /// Velocity drag proportional to vertex mass, 1/s.
    pub air_drag: f64,
    /// Amplitude of the seeded out-of-plane jitter of the initial state, m.
    pub perturbation: f64,
    pub frame_rate: f64,
    pub lr_substeps: usize,
    pub hr_substeps: usize,
    pub frames: usize,
    pub subdivision_levels: usize,
    pub seed: u64,
    pub tracking: TrackingConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            name: "scene".into(),
            mesh: None,
            grid: GridSpec::default(),
            orientation: Orientation::Vertical,
            origin: [0.0; 3],
            handles: Vec::new(),
            random_top_handle: false,
            obstacles: Vec::new(),
            forces: ForceConfig::default(),
            coarse_forces: None,
            density: DEFAULT_DENSITY,
            air_drag: 0.3,
            perturbation: 1e-3,
            frame_rate: 24.0,
            lr_substeps: 40,
            hr_substeps: 200,
            frames: 40,
            subdivision_levels: 2,
            seed: 0,
            tracking: TrackingConfig::default(),
        }
    }
}

impl SceneConfig {
    /// Hanging tablecloth released from all but one random top vertex.
    pub fn draping(seed: u64, frames: usize) -> Self {
        SceneConfig {
            name: format!("draping_{seed}"),
            random_top_handle: true,
            frames,
            seed,
            ..SceneConfig::default()
        }
    }

    /// Tablecloth pinned at its top corners, hit back and forth by a sphere.
    pub fn hitting(seed: u64, frames: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let grid = GridSpec::default();
        let radius = rng.random_range(0.12..0.22);
        let cx = rng.random_range(0.4..1.1);
        let cy = rng.random_range(0.35..0.7);
        let period = rng.random_range(1.2..2.0);
        let top_left = grid.cells_v * (grid.cells_u + 1);
        SceneConfig {
            name: format!("hitting_{seed}"),
            handles: vec![top_left, top_left + grid.cells_u],
            obstacles: vec![ObstacleConfig {
                shape: Shape::Sphere {
                    center: [cx, cy, -radius - 0.25],
                    radius,
                },
                offset: 0.005,
                trajectory: Some(Trajectory {
                    amplitude: [0.0, 0.0, 0.35],
                    period,
                    phase: 0.0,
                }),
            }],
            frames,
            seed,
            grid,
            ..SceneConfig::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: SceneConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // mesh paths are relative to the scene file
        if let (Some(mesh), Some(dir)) = (&cfg.mesh, path.parent()) {
            if mesh.is_relative() {
                cfg.mesh = Some(dir.join(mesh));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.forces.validate()?;
        if let Some(c) = &self.coarse_forces {
            c.validate()?;
        }
        let bad = |msg: &str| Err(Error::Config(format!("scene '{}': {msg}", self.name)));
        if !(self.frame_rate > 0.0) || self.lr_substeps == 0 || self.hr_substeps == 0 {
            return bad("frame rate and substep counts must be positive");
        }
        if self.frames == 0 {
            return bad("need at least one frame");
        }
        if self.subdivision_levels == 0 {
            return bad("subdivision_levels must be >= 1");
        }
        if !(self.density > 0.0) || !(self.air_drag >= 0.0) || !(self.tracking.stiffness >= 0.0) {
            return bad("density must be positive; drag and tracking stiffness non-negative");
        }
        for ob in &self.obstacles {
            ob.at(0.0).validate()?;
        }
        Ok(())
    }

    pub fn frame_dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn coarse_force_config(&self) -> ForceConfig {
        self.coarse_forces.clone().unwrap_or_else(|| self.forces.clone())
    }

    pub fn obstacles_at(&self, t: f64) -> Vec<Obstacle> {
        self.obstacles.iter().map(|o| o.at(t)).collect()
    }

    /// The coarse cloth placed in the world at its rest state, before the
    /// initial jitter.
    pub fn rest_mesh(&self) -> Result<TriMesh> {
        let mesh = match &self.mesh {
            Some(p) => load_obj(p)?,
            None => TriMesh::grid(self.grid.width, self.grid.height, self.grid.cells_u, self.grid.cells_v)?,
        };
        let origin = Vec3::from(self.origin);
        let place = |p: &Vec3| -> Vec3 {
            match self.orientation {
                Orientation::Vertical => origin + p,
                Orientation::Horizontal => origin + Vec3::new(p.x, p.z, -p.y),
            }
        };
        let rest: Vec<Vec3> = mesh.rest_positions.iter().map(place).collect();
        TriMesh::new(rest.clone(), mesh.faces, mesh.uvs, rest)
    }

    /// Coarse mesh at its initial (jittered) state plus resolved handles.
    pub fn initial_mesh(&self) -> Result<(TriMesh, Vec<usize>)> {
        let mut mesh = self.rest_mesh()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut handles = self.handles.clone();
        if self.random_top_handle {
            let top = mesh
                .rest_positions
                .iter()
                .map(|p| p.y)
                .fold(f64::NEG_INFINITY, f64::max);
            let row: Vec<usize> = (0..mesh.num_vertices())
                .filter(|&i| (mesh.rest_positions[i].y - top).abs() < 1e-9)
                .collect();
            handles.push(row[rng.random_range(0..row.len())]);
        }
        if let Some(&h) = handles.iter().find(|&&h| h >= mesh.num_vertices()) {
            return Err(Error::Config(format!("handle {h} out of range")));
        }
        let normal_axis = match self.orientation {
            Orientation::Vertical => Vec3::z(),
            Orientation::Horizontal => Vec3::y(),
        };
        for (i, p) in mesh.positions.iter_mut().enumerate() {
            let jitter: f64 = rng.random_range(-1.0..1.0);
            if !handles.contains(&i) {
                *p += normal_axis * (jitter * self.perturbation);
            }
        }
        handles.sort_unstable();
        handles.dedup();
        Ok((mesh, handles))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let s = SceneConfig::hitting(3, 12);
        let back: SceneConfig = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let s: SceneConfig = toml::from_str(
            "name = \"x\"\nframes = 5\n[[obstacles]]\nkind = \"sphere\"\ncenter = [0.0, 0.0, 0.0]\nradius = 0.1\n",
        )
        .unwrap();
        assert_eq!(s.frames, 5);
        assert_eq!(s.forces, ForceConfig::default());
        assert_eq!(s.obstacles.len(), 1);
        s.validate().unwrap();
    }

    #[test]
    fn draping_handle_is_on_top_row_and_seeded() {
        let a = SceneConfig::draping(5, 3).initial_mesh().unwrap();
        let b = SceneConfig::draping(5, 3).initial_mesh().unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.positions, b.0.positions);
        assert_eq!(a.1.len(), 1);
        assert!((a.0.rest_positions[a.1[0]].y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moving_obstacle_velocity_is_derivative() {
        let s = SceneConfig::hitting(1, 2);
        let h = 1e-6;
        let c = |t: f64| match s.obstacles[0].at(t).shape {
            Shape::Sphere { center, .. } => Vec3::from(center),
            _ => unreachable!(),
        };
        let fd = (c(0.3 + h) - c(0.3 - h)) / (2.0 * h);
        assert!((fd - s.obstacles[0].at(0.3).velocity).norm() < 1e-6);
    }

    #[test]
    fn invalid_scene_rejected() {
        let mut s = SceneConfig::default();
        s.frames = 0;
        assert!(s.validate().is_err());
    }
}
