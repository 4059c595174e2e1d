//! Per-frame timing of the pipeline stages against tracked HR simulation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use clothsr_core::refine::{push_out, resolve_zones};
use clothsr_core::scene::SceneConfig;
use clothsr_core::track::{simulate_hr_tracked, simulate_lr, TrackRig};
use clothsr_net::model::{images_to_tensor, tensor_to_image};

use crate::config::RefineConfig;
use crate::error::{write, PipelineError, Result};
use crate::features::{finish, Imaging};
use crate::train::{predict, Model};

pub const COLUMNS: [&str; 4] = ["Coarse Sim.", "Mesh/Image Conversion", "Synthesizing", "Refinement"];

/// Seconds per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub scene: String,
    pub frames: usize,
    pub lr_vertices: usize,
    pub hr_vertices: usize,
    pub coarse_sim: f64,
    pub conversion: f64,
    pub synthesizing: f64,
    pub refinement: f64,
    /// Measured with its own clock around the whole pipeline.
    pub total: f64,
    pub tracked_hr_sim: f64,
}

impl BenchRow {
    pub fn stages(&self) -> [f64; 4] {
        [self.coarse_sim, self.conversion, self.synthesizing, self.refinement]
    }

    pub fn stage_sum(&self) -> f64 {
        self.stages().iter().sum()
    }

    /// |Σ stages − total| / total
    pub fn accounting_error(&self) -> f64 {
        (self.stage_sum() - self.total).abs() / self.total
    }

    pub fn speedup(&self) -> f64 {
        self.tracked_hr_sim / self.total
    }
}

/// Times the pipeline (coarse simulation, conversion, synthesis,
/// refinement) and the tracked HR simulation of the same scene. Frames are
/// processed sequentially on the calling thread.
pub fn bench_scene(model: &Model, scene: &SceneConfig, refine: &RefineConfig) -> Result<BenchRow> {
    let frames = scene.frames;
    if frames == 0 {
        return Err(PipelineError::Config("bench scene has no frames".into()));
    }
    let mut conv = Duration::ZERO;
    let mut synth = Duration::ZERO;
    let mut refn = Duration::ZERO;
    let zc = refine.zone_config();

    let clock = Instant::now();
    let lr = simulate_lr(scene)?;
    let coarse = clock.elapsed();
    let t = Instant::now();
    let im = Imaging::new(&lr.mesh, scene.subdivision_levels, model.card.lr_image, scene.frame_dt())?;
    conv += t.elapsed();
    let mut collisions_left = 0;
    for k in 0..frames {
        let t = Instant::now();
        let xf = im.transform(&lr.frames[k])?;
        let input = images_to_tensor(&[&finish(&im.lr_raw(&lr.frames, k, &xf)?, &model.norm)?], 0..9)?;
        conv += t.elapsed();

        let t = Instant::now();
        let [d, _, _] = predict(&model.net, input)?;
        synth += t.elapsed();

        let t = Instant::now();
        let sr = im.hr_rest.with_positions(im.hr_positions(&tensor_to_image(&d, 0)?, &xf, &model.norm)?)?;
        conv += t.elapsed();

        let t = Instant::now();
        let pushed = push_out(&sr, &scene.obstacles_at(k as f64 * scene.frame_dt()))?;
        let reference = im.hr_rest.with_positions(im.upsample(&lr.frames[k])?)?;
        match resolve_zones(&pushed, &reference, &zc) {
            Ok(r) => collisions_left += clothsr_core::refine::detect_self_collisions(&r.mesh).len(),
            Err(clothsr_core::Error::Precondition(_)) => {}
            Err(e) => return Err(e.into()),
        }
        refn += t.elapsed();
    }
    let total = clock.elapsed();
    log::debug!("bench: {collisions_left} intersecting pairs left after refinement");

    let rig = TrackRig::from_lr_run(&lr, scene.subdivision_levels, scene.tracking.stiffness)?;
    let t = Instant::now();
    simulate_hr_tracked(&rig, scene)?;
    let tracked = t.elapsed();

    let per = |d: Duration| d.as_secs_f64() / frames as f64;
    Ok(BenchRow {
        scene: scene.name.clone(),
        frames,
        lr_vertices: im.lr_rest.num_vertices(),
        hr_vertices: im.hr_rest.num_vertices(),
        coarse_sim: per(coarse),
        conversion: per(conv),
        synthesizing: per(synth),
        refinement: per(refn),
        total: per(total),
        tracked_hr_sim: per(tracked),
    })
}

pub const CSV_HEADER: &str =
    "scene,frames,lr_vertices,hr_vertices,coarse_sim,mesh_image_conversion,synthesizing,refinement,total,tracked_hr_sim,speedup";

pub fn format_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3}",
            r.scene,
            r.frames,
            r.lr_vertices,
            r.hr_vertices,
            r.coarse_sim,
            r.conversion,
            r.synthesizing,
            r.refinement,
            r.total,
            r.tracked_hr_sim,
            r.speedup()
        );
    }
    s
}

/// Human-readable table in seconds per frame.
pub fn format_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("Timing (sec/frm), single thread\n");
    let _ = writeln!(
        s,
        "{:<14} {:>6} {:>6} {:>11} {:>21} {:>12} {:>10} {:>10} {:>14} {:>8}",
        "scene", "#LR", "#HR", COLUMNS[0], COLUMNS[1], COLUMNS[2], COLUMNS[3], "Total", "Tracked HR Sim", "Speedup"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>6} {:>11.4} {:>21.4} {:>12.4} {:>10.4} {:>10.4} {:>14.4} {:>7.2}x",
            r.scene,
            r.lr_vertices,
            r.hr_vertices,
            r.coarse_sim,
            r.conversion,
            r.synthesizing,
            r.refinement,
            r.total,
            r.tracked_hr_sim,
            r.speedup()
        );
    }
    s
}

pub fn write_bench(rows: &[BenchRow], out: &Path) -> Result<()> {
    write(&out.join("bench.csv"), format_csv(rows))?;
    write(&out.join("bench.txt"), format_table(rows))
}
