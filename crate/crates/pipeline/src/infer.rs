//! LR mesh sequence → refined HR mesh sequence.

use std::path::{Path, PathBuf};

use clothsr_core::obj::{format_obj, load_obj};
use clothsr_core::refine::{detect_self_collisions, push_out, resolve_zones};
use clothsr_core::scene::SceneConfig;
use clothsr_core::{TriMesh, Vec3};
use clothsr_net::model::{images_to_tensor, tensor_to_image};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RefineConfig;
use crate::error::{read_to_string, write, PipelineError, Result};
use crate::features::{finish, Imaging};
use crate::train::{predict, Model};

/// An LR input: rest mesh, per-frame positions and the scene the frames
/// came from (frame rate, subdivision depth, obstacles).
#[derive(Debug, Clone)]
pub struct LrSequence {
    pub scene: SceneConfig,
    pub rest: TriMesh,
    pub frames: Vec<Vec<Vec3>>,
}

impl LrSequence {
    /// Reads `scene.toml`, `lr_rest.obj` and `lr/frame_NNNN.obj` from `dir`.
    /// Dataset sequence directories have this layout.
    pub fn load(dir: &Path) -> Result<Self> {
        let scene_path = dir.join("scene.toml");
        let scene: SceneConfig = toml::from_str(&read_to_string(&scene_path)?)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", scene_path.display())))?;
        let rest = load_obj(dir.join("lr_rest.obj"))?;
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.join("lr"))
            .map_err(|e| PipelineError::io(dir.join("lr"), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "obj"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(PipelineError::Data(format!("no OBJ frames under {}", dir.join("lr").display())));
        }
        let frames = paths
            .iter()
            .map(|p| {
                let m = load_obj(p)?;
                if m.faces != rest.faces {
                    return Err(PipelineError::Data(format!("{} does not match the rest topology", p.display())));
                }
                Ok(m.positions)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LrSequence { scene, rest, frames })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub moved_by_push_out: usize,
    pub collisions_before: usize,
    pub collisions_after: usize,
    pub zones: usize,
    /// Set when zone resolution was skipped because the upsampled LR
    /// reference itself self-intersects.
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct InferredFrame {
    pub mesh: TriMesh,
    /// Reconstruction before any refinement.
    pub raw: Vec<Vec3>,
    pub report: FrameReport,
}

pub struct Inference {
    pub imaging: Imaging,
    pub frames: Vec<InferredFrame>,
}

/// Synthesizes and refines one frame. Uses only frames `k` and `k − 1`.
pub fn infer_frame(model: &Model, im: &Imaging, seq: &LrSequence, k: usize, refine: &RefineConfig) -> Result<InferredFrame> {
    let xf = im.transform(&seq.frames[k])?;
    let lr = finish(&im.lr_raw(&seq.frames, k, &xf)?, &model.norm)?;
    let [d, _, _] = predict(&model.net, images_to_tensor(&[&lr], 0..9)?)?;
    let raw = im.hr_positions(&tensor_to_image(&d, 0)?, &xf, &model.norm)?;
    let sr = im.hr_rest.with_positions(raw.clone())?;
    let obstacles = seq.scene.obstacles_at(k as f64 * seq.scene.frame_dt());
    let pushed = push_out(&sr, &obstacles)?;
    let moved = pushed.positions.iter().zip(&sr.positions).filter(|(a, b)| a != b).count();
    let reference = im.hr_rest.with_positions(im.upsample(&seq.frames[k])?)?;
    let (mesh, before, zones, warning) = match resolve_zones(&pushed, &reference, &refine.zone_config()) {
        Ok(r) => (r.mesh, r.collision_counts[0], r.zones.len(), None),
        Err(clothsr_core::Error::Precondition(m)) => {
            log::warn!("frame {k}: zone resolution skipped: {m}");
            let n = detect_self_collisions(&pushed).len();
            (pushed, n, 0, Some(m))
        }
        Err(e) => return Err(e.into()),
    };
    let after = detect_self_collisions(&mesh).len();
    Ok(InferredFrame {
        mesh,
        raw,
        report: FrameReport {
            frame: k,
            moved_by_push_out: moved,
            collisions_before: before,
            collisions_after: after,
            zones,
            warning,
        },
    })
}

/// Checks model/input compatibility. `lr_image`, when given, is the image
/// size the caller's configuration expects.
pub fn validate(model: &Model, seq: &LrSequence, lr_image: Option<[usize; 2]>) -> Result<()> {
    if let Some(dims) = lr_image {
        if dims != model.card.lr_image {
            return Err(PipelineError::Config(format!(
                "model was trained on {:?} LR images, configuration asks for {dims:?}",
                model.card.lr_image
            )));
        }
    }
    let cfg = &model.net.cfg;
    if cfg.in_channels != 9 || cfg.head_out_channels != 3 || cfg.scale != 4 {
        return Err(PipelineError::Config(format!(
            "model expects {} input channels, {} per head and ×{} scale; the pipeline needs 9, 3 and ×4",
            cfg.in_channels, cfg.head_out_channels, cfg.scale
        )));
    }
    if model.norm.channels() != 9 {
        return Err(PipelineError::Config("model normalization must have 9 channels".into()));
    }
    for (k, f) in seq.frames.iter().enumerate() {
        if f.len() != seq.rest.num_vertices() {
            return Err(PipelineError::Data(format!("LR frame {k} has the wrong vertex count")));
        }
    }
    Ok(())
}

/// Runs every frame in `order` (any permutation or subset of frame
/// indices). Results come back in `order`.
pub fn infer(
    model: &Model,
    seq: &LrSequence,
    order: &[usize],
    refine: &RefineConfig,
    lr_image: Option<[usize; 2]>,
) -> Result<Inference> {
    validate(model, seq, lr_image)?;
    if let Some(&k) = order.iter().find(|&&k| k >= seq.frames.len()) {
        return Err(PipelineError::Data(format!("frame {k} out of {}", seq.frames.len())));
    }
    let imaging = Imaging::new(
        &seq.rest,
        seq.scene.subdivision_levels,
        model.card.lr_image,
        seq.scene.frame_dt(),
    )?;
    let frames = order
        .par_iter()
        .map(|&k| infer_frame(model, &imaging, seq, k, refine))
        .collect::<Result<Vec<_>>>()?;
    Ok(Inference { imaging, frames })
}

/// Writes `frame_NNNN.obj` per inferred frame plus `infer_report.json`.
pub fn write_inference(inf: &Inference, out: &Path) -> Result<()> {
    for f in &inf.frames {
        write(&out.join(format!("frame_{:04}.obj", f.report.frame)), format_obj(&f.mesh))?;
    }
    let reports: Vec<&FrameReport> = inf.frames.iter().map(|f| &f.report).collect();
    let text = serde_json::to_string_pretty(&reports).map_err(|e| PipelineError::Data(e.to_string()))?;
    write(&out.join("infer_report.json"), text + "\n")
}
