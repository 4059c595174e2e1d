//! Synchronized dual-resolution simulation.
//!
//! The coarse cloth is simulated freely first. The fine cloth is then
//! simulated with virtual springs pulling each feature vertex toward the
//! recorded coarse position of the frame being advanced, plus a second force
//! level that applies the coarse element forces to the feature vertices.

use crate::error::{Error, Result};
use crate::mesh::{subdivide_midpoint, SubdivisionMap, TriMesh, Vec3};
use crate::scene::SceneConfig;
use crate::sim::{integrate, ClothModel, ForceConfig, SimState};

/// Output of the free coarse simulation.
#[derive(Debug, Clone)]
pub struct LrRun {
    pub mesh: TriMesh,
    pub handles: Vec<usize>,
    /// Frame 0 is the initial state.
    pub frames: Vec<Vec<Vec3>>,
    pub kinetic_energy: Vec<f64>,
}

fn drag_forces(state: &SimState, drag: f64, out: &mut [Vec3]) {
    if drag == 0.0 {
        return;
    }
    for ((o, v), m) in out.iter_mut().zip(&state.velocities).zip(&state.masses) {
        *o -= v * (drag * m);
    }
}

pub fn simulate_lr(scene: &SceneConfig) -> Result<LrRun> {
    scene.validate()?;
    let (mesh, handles) = scene.initial_mesh()?;
    let model = ClothModel::from_mesh(&mesh)?;
    let mut state = SimState::from_mesh(&mesh, scene.density, &handles)?;
    let dt = scene.frame_dt() / scene.lr_substeps as f64;
    let mut frames = Vec::with_capacity(scene.frames);
    let mut kinetic_energy = Vec::with_capacity(scene.frames);
    frames.push(state.positions.clone());
    kinetic_energy.push(state.kinetic_energy());
    let gravity = scene.forces.gravity();
    for frame in 1..scene.frames {
        for _ in 0..scene.lr_substeps {
            let mut forces = crate::sim::internal_forces(&model, &state, &scene.forces);
            drag_forces(&state, scene.air_drag, &mut forces);
            let obstacles = scene.obstacles_at(state.time);
            state = integrate(&state, &forces, gravity, &obstacles, &[], dt).map_err(|e| {
                Error::FrameFailure {
                    frame,
                    source: Box::new(e),
                }
            })?;
        }
        frames.push(state.positions.clone());
        kinetic_energy.push(state.kinetic_energy());
    }
    Ok(LrRun {
        mesh,
        handles,
        frames,
        kinetic_energy,
    })
}

/// Paired meshes and recorded coarse trajectory for tracked simulation.
#[derive(Debug, Clone)]
pub struct TrackRig {
    pub lr_mesh: TriMesh,
    pub hr_mesh: TriMesh,
    pub sub_map: SubdivisionMap,
    /// Coarse topology over the fine vertex array.
    pub h1_overlay: TriMesh,
    pub stiffness_c: f64,
    pub lr_frames: Vec<Vec<Vec3>>,
    fine_model: ClothModel,
    coarse_model: ClothModel,
}

impl TrackRig {
    pub fn new(lr_mesh: TriMesh, levels: usize, stiffness_c: f64, lr_frames: Vec<Vec<Vec3>>) -> Result<Self> {
        if !(stiffness_c >= 0.0) {
            return Err(Error::Config(format!("spring stiffness must be >= 0, got {stiffness_c}")));
        }
        if let Some(f) = lr_frames.iter().find(|f| f.len() != lr_mesh.num_vertices()) {
            return Err(Error::mismatch("coarse frame vertex count", lr_mesh.num_vertices(), f.len()));
        }
        let (mut hr_mesh, sub_map) = subdivide_midpoint(&lr_mesh, levels)?;
        // the fine cloth starts exactly on the upsampled coarse state
        hr_mesh.positions = sub_map.upsample(&lr_mesh.positions)?;
        let faces = lr_mesh
            .faces
            .iter()
            .map(|f| f.map(|v| sub_map.feature_vertices[v]))
            .collect();
        let h1_overlay = TriMesh::new(
            hr_mesh.positions.clone(),
            faces,
            hr_mesh.uvs.clone(),
            hr_mesh.rest_positions.clone(),
        )?;
        let fine_model = ClothModel::from_mesh(&hr_mesh)?;
        let coarse_model = ClothModel::from_mesh(&h1_overlay)?;
        Ok(TrackRig {
            lr_mesh,
            hr_mesh,
            sub_map,
            h1_overlay,
            stiffness_c,
            lr_frames,
            fine_model,
            coarse_model,
        })
    }

    pub fn from_lr_run(run: &LrRun, levels: usize, stiffness_c: f64) -> Result<Self> {
        Self::new(run.mesh.clone(), levels, stiffness_c, run.frames.clone())
    }

    pub fn fine_model(&self) -> &ClothModel {
        &self.fine_model
    }

    pub fn coarse_model(&self) -> &ClothModel {
        &self.coarse_model
    }
}

/// Hooke springs pulling each fine feature vertex toward its coarse target:
/// `f = c·(p_target − p_fine)` on feature vertices, zero elsewhere.
pub fn virtual_spring_forces(
    lr_targets: &[Vec3],
    hr_positions: &[Vec3],
    map: &SubdivisionMap,
    c: f64,
) -> Result<Vec<Vec3>> {
    if lr_targets.len() != map.num_coarse() {
        return Err(Error::mismatch("spring target count", map.num_coarse(), lr_targets.len()));
    }
    if hr_positions.len() != map.num_fine() {
        return Err(Error::mismatch("fine vertex count", map.num_fine(), hr_positions.len()));
    }
    let mut out = vec![Vec3::zeros(); hr_positions.len()];
    for (target, &fv) in lr_targets.iter().zip(&map.feature_vertices) {
        out[fv] = (target - hr_positions[fv]) * c;
    }
    Ok(out)
}

/// Fine-level forces on every vertex plus coarse-overlay forces, which by
/// construction only reach feature vertices.
pub fn two_level_forces(rig: &TrackRig, hr_state: &SimState, cfg0: &ForceConfig, cfg1: &ForceConfig) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); hr_state.num_vertices()];
    let (x, v) = (&hr_state.positions, &hr_state.velocities);
    rig.fine_model.add_stretch_forces(x, v, cfg0, &mut out);
    rig.fine_model.add_bend_forces(x, v, cfg0, &mut out);
    rig.coarse_model.add_stretch_forces(x, v, cfg1, &mut out);
    rig.coarse_model.add_bend_forces(x, v, cfg1, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub frame_index: usize,
    pub lr_positions: Vec<Vec3>,
    pub hr_positions: Vec<Vec3>,
    pub lr_velocities: Vec<Vec3>,
    pub hr_velocities: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct TrackedRun {
    pub pairs: Vec<FramePair>,
    /// `spring_log[k]` is the coarse frame the springs of fine frame `k`
    /// pointed at (`None` for the initial frame).
    pub spring_log: Vec<Option<usize>>,
}

impl TrackedRun {
    /// Mean distance between fine feature vertices and their coarse
    /// counterparts over all frames.
    pub fn tracking_error(&self, map: &SubdivisionMap) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in &self.pairs {
            for (i, &fv) in map.feature_vertices.iter().enumerate() {
                sum += (p.hr_positions[fv] - p.lr_positions[i]).norm();
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }
}

fn backward_velocities(cur: &[Vec3], prev: Option<&Vec<Vec3>>, frame_dt: f64) -> Vec<Vec3> {
    match prev {
        Some(prev) => cur.iter().zip(prev).map(|(c, p)| (c - p) / frame_dt).collect(),
        None => vec![Vec3::zeros(); cur.len()],
    }
}

/// Simulates the fine cloth tracked to `rig.lr_frames`, using the scene's
/// timing, obstacles, handles and fine substep count.
pub fn simulate_hr_tracked(rig: &TrackRig, scene: &SceneConfig) -> Result<TrackedRun> {
    let n_frames = rig.lr_frames.len();
    if n_frames == 0 {
        return Err(Error::Precondition("tracked simulation needs recorded coarse frames".into()));
    }
    let (_, handles) = scene.initial_mesh()?;
    let fine_handles: Vec<usize> = handles.iter().map(|&h| rig.sub_map.feature_vertices[h]).collect();
    let mut start = rig.hr_mesh.clone();
    start.positions = rig.sub_map.upsample(&rig.lr_frames[0])?;
    let mut state = SimState::from_mesh(&start, scene.density, &fine_handles)?;
    let cfg0 = &scene.forces;
    let cfg1 = if scene.tracking.two_level {
        scene.coarse_force_config()
    } else {
        ForceConfig::inert()
    };
    let dt = scene.frame_dt() / scene.hr_substeps as f64;
    let frame_dt = scene.frame_dt();
    let gravity = cfg0.gravity();

    let mut hr_frames: Vec<Vec<Vec3>> = vec![state.positions.clone()];
    let mut spring_log = vec![None];
    for k in 1..n_frames {
        let targets = &rig.lr_frames[k];
        spring_log.push(Some(k));
        for _ in 0..scene.hr_substeps {
            let mut forces = two_level_forces(rig, &state, cfg0, &cfg1);
            if rig.stiffness_c > 0.0 {
                let springs = virtual_spring_forces(targets, &state.positions, &rig.sub_map, rig.stiffness_c)?;
                for (f, s) in forces.iter_mut().zip(&springs) {
                    *f += s;
                }
            }
            drag_forces(&state, scene.air_drag, &mut forces);
            let obstacles = scene.obstacles_at(state.time);
            state = integrate(&state, &forces, gravity, &obstacles, &[], dt).map_err(|e| Error::FrameFailure {
                frame: k,
                source: Box::new(e),
            })?;
        }
        hr_frames.push(state.positions.clone());
    }

    let pairs = (0..n_frames)
        .map(|k| {
            let prev = k.checked_sub(1);
            FramePair {
                frame_index: k,
                lr_positions: rig.lr_frames[k].clone(),
                hr_positions: hr_frames[k].clone(),
                lr_velocities: backward_velocities(&rig.lr_frames[k], prev.map(|p| &rig.lr_frames[p]), frame_dt),
                hr_velocities: backward_velocities(&hr_frames[k], prev.map(|p| &hr_frames[p]), frame_dt),
            }
        })
        .collect();
    Ok(TrackedRun { pairs, spring_log })
}

/// Runs the coarse pass and the tracked fine pass of one scene.
pub fn simulate_scene(scene: &SceneConfig) -> Result<(TrackRig, TrackedRun)> {
    let lr = simulate_lr(scene)?;
    let rig = TrackRig::from_lr_run(&lr, scene.subdivision_levels, scene.tracking.stiffness)?;
    let run = simulate_hr_tracked(&rig, scene)?;
    Ok((rig, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GridSpec;

    fn small_scene(frames: usize) -> SceneConfig {
        SceneConfig {
            grid: GridSpec {
                width: 0.6,
                height: 0.4,
                cells_u: 4,
                cells_v: 3,
            },
            frames,
            lr_substeps: 20,
            hr_substeps: 60,
            ..SceneConfig::draping(1, frames)
        }
    }

    #[test]
    fn one_frame_run_echoes_initial_state() {
        let s = small_scene(1);
        let run = simulate_lr(&s).unwrap();
        assert_eq!(run.frames.len(), 1);
        assert_eq!(run.frames[0], s.initial_mesh().unwrap().0.positions);
    }

    #[test]
    fn lr_is_deterministic() {
        let s = small_scene(6);
        let a = simulate_lr(&s).unwrap();
        let b = simulate_lr(&s).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn springs_restore_toward_target() {
        let lr = TriMesh::grid(1.0, 1.0, 1, 1).unwrap();
        let (hr, map) = subdivide_midpoint(&lr, 1).unwrap();
        let mut targets = lr.positions.clone();
        let f0 = virtual_spring_forces(&targets, &hr.positions, &map, 10.0).unwrap();
        assert!(f0.iter().all(|f| *f == Vec3::zeros()));
        let mut p = hr.positions.clone();
        p[2] += Vec3::new(-1.0, 0.0, 0.0);
        let f = virtual_spring_forces(&targets, &p, &map, 10.0).unwrap();
        assert_eq!(f[2], Vec3::new(10.0, 0.0, 0.0));
        targets[0] += Vec3::new(0.0, 0.5, 0.0);
        let f = virtual_spring_forces(&targets, &p, &map, 10.0).unwrap();
        assert_eq!(f[0], Vec3::new(0.0, 5.0, 0.0));
        for v in map.num_coarse()..map.num_fine() {
            assert_eq!(f[v], Vec3::zeros());
        }
        assert!(virtual_spring_forces(&targets[..2], &p, &map, 1.0).is_err());
    }

    fn deformed_rig() -> (TrackRig, SimState) {
        let lr = TriMesh::grid(0.5, 0.4, 3, 2).unwrap();
        let rig = TrackRig::new(lr.clone(), 2, 10.0, vec![lr.positions.clone()]).unwrap();
        let mut state = SimState::from_mesh(&rig.hr_mesh, 0.15, &[]).unwrap();
        for (i, p) in state.positions.iter_mut().enumerate() {
            let t = i as f64;
            *p += Vec3::new(0.01 * (t * 0.7).sin(), 0.01 * (t * 1.3).cos(), 0.02 * (t * 0.4).sin());
        }
        for (i, v) in state.velocities.iter_mut().enumerate() {
            *v = Vec3::new(0.0, 0.1 * (i as f64).sin(), 0.05);
        }
        (rig, state)
    }

    #[test]
    fn two_level_reduces_to_fine_level() {
        let (rig, state) = deformed_rig();
        let cfg = ForceConfig::default();
        let a = two_level_forces(&rig, &state, &cfg, &ForceConfig::inert());
        let b = crate::sim::internal_forces(rig.fine_model(), &state, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn two_level_rest_is_zero() {
        let (rig, _) = deformed_rig();
        let state = SimState::from_mesh(&rig.hr_mesh, 0.15, &[]).unwrap();
        let f = two_level_forces(&rig, &state, &ForceConfig::default(), &ForceConfig::default());
        assert!(f.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn two_level_is_sum_of_levels() {
        let (rig, state) = deformed_rig();
        let cfg0 = ForceConfig::default();
        let cfg1 = ForceConfig {
            stretch_stiffness: 300.0,
            ..ForceConfig::default()
        };
        let both = two_level_forces(&rig, &state, &cfg0, &cfg1);
        let fine = crate::sim::internal_forces(rig.fine_model(), &state, &cfg0);
        // coarse level evaluated on an independent copy of the coarse mesh
        let lr_state = SimState {
            positions: state.positions[..rig.lr_mesh.num_vertices()].to_vec(),
            velocities: state.velocities[..rig.lr_mesh.num_vertices()].to_vec(),
            masses: vec![1.0; rig.lr_mesh.num_vertices()],
            fixed: vec![false; rig.lr_mesh.num_vertices()],
            time: 0.0,
        };
        let coarse = crate::sim::internal_forces(&ClothModel::from_mesh(&rig.lr_mesh).unwrap(), &lr_state, &cfg1);
        for (v, f) in both.iter().enumerate() {
            let expect = if v < rig.lr_mesh.num_vertices() {
                fine[v] + coarse[v]
            } else {
                fine[v]
            };
            assert!((f - expect).norm() < 1e-12 * (1.0 + expect.norm()));
        }
        // level 1 alone touches only feature vertices
        let only1 = two_level_forces(&rig, &state, &ForceConfig::inert(), &cfg1);
        for v in rig.lr_mesh.num_vertices()..only1.len() {
            assert_eq!(only1[v], Vec3::zeros());
        }
    }

    #[test]
    fn zero_tracking_equals_untracked_fine_simulation() {
        let mut s = small_scene(4);
        s.tracking = crate::scene::TrackingConfig {
            stiffness: 0.0,
            two_level: false,
        };
        let lr = simulate_lr(&s).unwrap();
        let rig = TrackRig::from_lr_run(&lr, 2, 0.0).unwrap();
        let tracked = simulate_hr_tracked(&rig, &s).unwrap();

        // plain fine simulation of the same start state
        let model = ClothModel::from_mesh(&rig.hr_mesh).unwrap();
        let handles: Vec<usize> = lr.handles.clone();
        let mut start = rig.hr_mesh.clone();
        start.positions = rig.sub_map.upsample(&lr.frames[0]).unwrap();
        let mut st = SimState::from_mesh(&start, s.density, &handles).unwrap();
        let dt = s.frame_dt() / s.hr_substeps as f64;
        for k in 1..4 {
            for _ in 0..s.hr_substeps {
                let mut f = crate::sim::internal_forces(&model, &st, &s.forces);
                drag_forces(&st, s.air_drag, &mut f);
                st = integrate(&st, &f, s.forces.gravity(), &s.obstacles_at(st.time), &[], dt).unwrap();
            }
            assert_eq!(tracked.pairs[k].hr_positions, st.positions);
        }
        assert_eq!(tracked.spring_log, vec![None, Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn frame_pair_velocities_are_backward_differences() {
        let s = small_scene(3);
        let (_, run) = simulate_scene(&s).unwrap();
        let dt = s.frame_dt();
        assert!(run.pairs[0].hr_velocities.iter().all(|v| *v == Vec3::zeros()));
        for k in 1..3 {
            let (a, b) = (&run.pairs[k], &run.pairs[k - 1]);
            for i in 0..a.hr_positions.len() {
                assert_eq!(a.hr_velocities[i], (a.hr_positions[i] - b.hr_positions[i]) / dt);
            }
        }
    }
}
