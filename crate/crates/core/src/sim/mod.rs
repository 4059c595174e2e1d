//! Triangle-shell cloth simulator with semi-implicit Euler time stepping.

mod forces;

pub use forces::{ClothModel, Hinge, StretchElement};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

/// Default areal density of the cloth, kg/m².
pub const DEFAULT_DENSITY: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceConfig {
    /// N/m
    pub stretch_stiffness: f64,
    /// N·m
    pub bend_stiffness: f64,
    /// kg/s
    pub damping: f64,
    /// m/s²
    pub gravity: [f64; 3],
}

impl Default for ForceConfig {
    fn default() -> Self {
        ForceConfig {
            stretch_stiffness: 100.0,
            bend_stiffness: 1e-5,
            damping: 0.01,
            gravity: [0.0, -9.8, 0.0],
        }
    }
}

impl ForceConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.stretch_stiffness) || !ok(self.bend_stiffness) || !ok(self.damping) {
            return Err(Error::Config(format!(
                "force parameters must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    /// Same material with every internal term switched off.
    pub fn inert() -> Self {
        ForceConfig {
            stretch_stiffness: 0.0,
            bend_stiffness: 0.0,
            damping: 0.0,
            gravity: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub fixed: Vec<bool>,
    pub time: f64,
}

impl SimState {
    /// State at the mesh's current positions, at rest, with lumped masses of
    /// one third of the adjacent material-space area times `density`.
    pub fn from_mesh(mesh: &TriMesh, density: f64, fixed_vertices: &[usize]) -> Result<Self> {
        let n = mesh.num_vertices();
        let mut masses = vec![0.0; n];
        for fi in 0..mesh.num_faces() {
            let share = density * mesh.uv_area(fi) / 3.0;
            for &v in &mesh.faces[fi] {
                masses[v] += share;
            }
        }
        if let Some(v) = masses.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::InvalidMesh(format!("vertex {v} has no mass (isolated vertex?)")));
        }
        let mut fixed = vec![false; n];
        for &v in fixed_vertices {
            if v >= n {
                return Err(Error::Config(format!("handle vertex {v} out of range ({n} vertices)")));
            }
            fixed[v] = true;
        }
        Ok(SimState {
            positions: mesh.positions.clone(),
            velocities: vec![Vec3::zeros(); n],
            masses,
            fixed,
            time: 0.0,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn momentum(&self) -> Vec3 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, m)| v * *m)
            .sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, m)| 0.5 * m * v.norm_squared())
            .sum()
    }

    pub fn center_of_mass(&self) -> Vec3 {
        let total: f64 = self.masses.iter().sum();
        self.positions
            .iter()
            .zip(&self.masses)
            .map(|(p, m)| p * *m)
            .sum::<Vec3>()
            / total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub shape: Shape,
    /// Collision thickness, m.
    pub offset: f64,
    /// Velocity of the obstacle surface, used for contact response.
    pub velocity: Vec3,
}

impl Obstacle {
    pub fn sphere(center: Vec3, radius: f64, offset: f64) -> Self {
        Obstacle {
            shape: Shape::Sphere {
                center: center.into(),
                radius,
            },
            offset,
            velocity: Vec3::zeros(),
        }
    }

    pub fn half_space(point: Vec3, normal: Vec3, offset: f64) -> Self {
        Obstacle {
            shape: Shape::HalfSpace {
                point: point.into(),
                normal: normal.normalize().into(),
            },
            offset,
            velocity: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match &self.shape {
            Shape::Sphere { radius, .. } => !(*radius > 0.0),
            Shape::HalfSpace { normal, .. } => (Vec3::from(*normal).norm() - 1.0).abs() > 1e-9,
        };
        if bad || !(self.offset >= 0.0) {
            return Err(Error::Config(format!("invalid obstacle {self:?}")));
        }
        Ok(())
    }

    /// Signed distance to the obstacle surface and the outward normal there.
    pub fn signed_distance(&self, p: &Vec3) -> (f64, Vec3) {
        match &self.shape {
            Shape::Sphere { center, radius } => {
                let d = p - Vec3::from(*center);
                let len = d.norm();
                let n = if len > 0.0 { d / len } else { Vec3::y() };
                (len - radius, n)
            }
            Shape::HalfSpace { point, normal } => {
                let n = Vec3::from(*normal);
                ((p - Vec3::from(*point)).dot(&n), n)
            }
        }
    }

    /// Moves `p` onto the offset surface if it is closer than `offset`.
    /// Returns the outward normal when a correction was made.
    pub fn project(&self, p: &mut Vec3) -> Option<Vec3> {
        let (d, n) = self.signed_distance(p);
        if d < self.offset {
            match &self.shape {
                Shape::Sphere { center, radius } => {
                    *p = Vec3::from(*center) + n * (radius + self.offset);
                }
                Shape::HalfSpace { .. } => *p += n * (self.offset - d),
            }
            // rounding can leave the point an ulp short of the surface
            let mut nudge = f64::EPSILON * (1.0 + p.amax());
            while self.signed_distance(p).0 < self.offset {
                *p += n * nudge;
                nudge *= 2.0;
            }
            Some(n)
        } else {
            None
        }
    }
}

/// Sum of stretch and bend forces (with their damping) on every vertex.
pub fn internal_forces(model: &ClothModel, state: &SimState, cfg: &ForceConfig) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); state.num_vertices()];
    model.add_stretch_forces(&state.positions, &state.velocities, cfg, &mut out);
    model.add_bend_forces(&state.positions, &state.velocities, cfg, &mut out);
    out
}

pub fn stretch_forces(model: &ClothModel, state: &SimState, cfg: &ForceConfig) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); state.num_vertices()];
    model.add_stretch_forces(&state.positions, &state.velocities, cfg, &mut out);
    out
}

pub fn bend_forces(model: &ClothModel, state: &SimState, cfg: &ForceConfig) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); state.num_vertices()];
    model.add_bend_forces(&state.positions, &state.velocities, cfg, &mut out);
    out
}

/// One semi-implicit Euler step driven by the model's internal forces,
/// gravity and `external`.
pub fn step(
    model: &ClothModel,
    state: &SimState,
    cfg: &ForceConfig,
    obstacles: &[Obstacle],
    external: &[Vec3],
    dt: f64,
) -> Result<SimState> {
    let forces = internal_forces(model, state, cfg);
    integrate(state, &forces, cfg.gravity(), obstacles, external, dt)
}

/// Advances `state` given precomputed internal forces. Kept separate from
/// [`step`] so callers that combine several force models share one update.
pub fn integrate(
    state: &SimState,
    internal: &[Vec3],
    gravity: Vec3,
    obstacles: &[Obstacle],
    external: &[Vec3],
    dt: f64,
) -> Result<SimState> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("time step must be positive, got {dt}")));
    }
    let n = state.num_vertices();
    if internal.len() != n {
        return Err(Error::mismatch("internal force count", n, internal.len()));
    }
    if !external.is_empty() && external.len() != n {
        return Err(Error::mismatch("external force count", n, external.len()));
    }
    let mut next = state.clone();
    next.time = state.time + dt;
    for i in 0..n {
        if state.fixed[i] {
            next.velocities[i] = Vec3::zeros();
            continue;
        }
        let mut f = internal[i] + gravity * state.masses[i];
        if !external.is_empty() {
            f += external[i];
        }
        let v = state.velocities[i] + f * (dt / state.masses[i]);
        let mut p = state.positions[i] + v * dt;
        let mut v = v;
        for ob in obstacles {
            if let Some(normal) = ob.project(&mut p) {
                let vn = (v - ob.velocity).dot(&normal);
                if vn < 0.0 {
                    v -= normal * vn;
                }
            }
        }
        next.positions[i] = p;
        next.velocities[i] = v;
    }
    if let Some(bad) = (0..n).find(|&i| {
        !next.positions[i].iter().all(|x| x.is_finite())
            || !next.velocities[i].iter().all(|x| x.is_finite())
    }) {
        return Err(Error::StepFailure {
            vertex: bad,
            time: next.time,
        });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sheet() -> TriMesh {
        TriMesh::grid(0.4, 0.3, 4, 3).unwrap()
    }

    #[test]
    fn free_fall_matches_symplectic_closed_form() {
        let m = sheet();
        let model = ClothModel::from_mesh(&m).unwrap();
        let cfg = ForceConfig {
            gravity: [0.0, -9.8, 0.0],
            ..ForceConfig::inert()
        };
        let mut s = SimState::from_mesh(&m, DEFAULT_DENSITY, &[]).unwrap();
        let y0 = s.center_of_mass().y;
        let dt = 0.01;
        for _ in 0..100 {
            s = step(&model, &s, &cfg, &[], &[], dt).unwrap();
        }
        let expect: f64 = (1..=100).map(|k| dt * dt * -9.8 * k as f64).sum();
        assert!((s.center_of_mass().y - y0 - expect).abs() < 1e-9);
    }

    #[test]
    fn fixed_vertex_never_moves() {
        let m = sheet();
        let model = ClothModel::from_mesh(&m).unwrap();
        let mut s = SimState::from_mesh(&m, DEFAULT_DENSITY, &[3]).unwrap();
        let p3 = s.positions[3];
        let push = vec![Vec3::new(5.0, 1.0, -2.0); m.num_vertices()];
        for _ in 0..50 {
            s = step(&model, &s, &ForceConfig::default(), &[], &push, 1e-3).unwrap();
            assert_eq!(s.positions[3], p3);
            assert_eq!(s.velocities[3], Vec3::zeros());
        }
    }

    #[test]
    fn sphere_contact_projects_and_kills_inward_velocity() {
        let m = TriMesh::grid(0.1, 0.1, 1, 1).unwrap();
        let model = ClothModel::from_mesh(&m).unwrap();
        let mut s = SimState::from_mesh(&m, DEFAULT_DENSITY, &[]).unwrap();
        let sphere = Obstacle::sphere(Vec3::new(0.0, 0.0, -0.5), 0.5, 0.01);
        s.velocities[0] = Vec3::new(0.0, 0.0, -1.0);
        let s = step(&model, &s, &ForceConfig::inert(), &[sphere.clone()], &[], 1e-3).unwrap();
        let (d, n) = sphere.signed_distance(&s.positions[0]);
        assert!((d - 0.01).abs() < 1e-12);
        assert!(s.velocities[0].dot(&n) >= 0.0);
    }

    #[test]
    fn momentum_conserved_without_damping() {
        let mut m = sheet();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in &mut m.positions {
            *p += Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.02..0.02));
        }
        let model = ClothModel::from_mesh(&m).unwrap();
        let cfg = ForceConfig {
            bend_stiffness: 1e-3,
            stretch_stiffness: 50.0,
            damping: 0.0,
            gravity: [0.0; 3],
        };
        let mut s = SimState::from_mesh(&m, DEFAULT_DENSITY, &[]).unwrap();
        for v in &mut s.velocities {
            *v = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.3);
        }
        let p0 = s.momentum();
        for _ in 0..1000 {
            s = step(&model, &s, &cfg, &[], &[], 2e-4).unwrap();
        }
        assert!((s.momentum() - p0).norm() / p0.norm() < 1e-8);
    }

    #[test]
    fn nan_reports_vertex() {
        let m = sheet();
        let model = ClothModel::from_mesh(&m).unwrap();
        let s = SimState::from_mesh(&m, DEFAULT_DENSITY, &[]).unwrap();
        let mut ext = vec![Vec3::zeros(); m.num_vertices()];
        ext[5] = Vec3::new(f64::NAN, 0.0, 0.0);
        match step(&model, &s, &ForceConfig::default(), &[], &ext, 1e-3) {
            Err(Error::StepFailure { vertex, .. }) => assert_eq!(vertex, 5),
            other => panic!("expected step failure, got {other:?}"),
        }
        assert!(step(&model, &s, &ForceConfig::default(), &[], &[], 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ForceConfig::default().validate().is_ok());
        let bad = ForceConfig {
            damping: -1.0,
            ..ForceConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(Obstacle::sphere(Vec3::zeros(), 0.0, 0.0).validate().is_err());
    }
}
