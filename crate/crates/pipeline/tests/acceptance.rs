//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. `ACCEPTANCE_ONLY=3,7` runs a subset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use clothsr_core::geom_image::{fit_normalization, ChannelAffine, FeatureImage};
use clothsr_core::mesh::TriMesh;
use clothsr_core::refine::{detect_self_collisions, fixtures::pinch, push_out, resolve_zones, ZoneConfig};
use clothsr_core::scene::SceneConfig;
use clothsr_core::sim::{step, ClothModel, ForceConfig, Shape, SimState};
use clothsr_core::track::{simulate_hr_tracked, simulate_lr, simulate_scene, TrackRig};
use clothsr_core::Vec3;
use clothsr_net::diagnostics::{mfsr_gradient_check, primitive_gradient_checks};
use clothsr_net::loss::{loss_kine, KineContext};
use clothsr_net::metrics::vmse;
use clothsr_net::model::images_to_tensor;
use clothsr_net::ABLATIONS;
use clothsr_pipeline::bench::{bench_scene, format_csv, COLUMNS};
use clothsr_pipeline::config::PipelineConfig;
use clothsr_pipeline::dataset::{gen_data, Dataset, Scope, Sequence};
use clothsr_pipeline::eval::{evaluate, EvalSplit};
use clothsr_pipeline::features::{finish, quantize, Imaging};
use clothsr_pipeline::train::{train, Model, TrainOptions};
use clothsr_tensor::Graph;
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

/// State shared between criteria that build on each other's artifacts.
struct Ctx {
    work: tempfile::TempDir,
    /// 40-frame desk sequences simulated for the round-trip check.
    desk: Vec<Sequence>,
    /// Trained toy model and its dataset.
    toy: Option<(PathBuf, PathBuf)>,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn desk_sequence(scene: SceneConfig, lr_image: [usize; 2]) -> Result<Sequence, String> {
    let (rig, run) = simulate_scene(&scene).map_err(err)?;
    let imaging = Imaging::new(&rig.lr_mesh, scene.subdivision_levels, lr_image, scene.frame_dt()).map_err(err)?;
    let (lr_frames, hr_frames) = run.pairs.into_iter().map(|p| (p.lr_positions, p.hr_positions)).unzip();
    Ok(Sequence {
        name: scene.name.clone(),
        scene,
        imaging,
        lr_frames,
        hr_frames,
    })
}

fn hr_norm(seq: &Sequence) -> Result<ChannelAffine, String> {
    let im = &seq.imaging;
    let raws = (0..seq.num_frames())
        .map(|k| {
            let xf = im.transform(&seq.lr_frames[k])?;
            im.hr_raw(&seq.hr_frames, k, &xf)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    fit_normalization(&raws).map_err(err)
}

fn c1_roundtrip(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let cfg = PipelineConfig::default();
    let mut worst: f64 = 0.0;
    let mut frames = 0;
    let mut dims = Vec::new();
    for scene in [SceneConfig::draping(1, 40), SceneConfig::hitting(2, 40)] {
        let seq = desk_sequence(scene, cfg.lr_image)?;
        let norm = hr_norm(&seq)?;
        let im = &seq.imaging;
        for k in 0..seq.num_frames() {
            let xf = im.transform(&seq.lr_frames[k]).map_err(err)?;
            let img = quantize(&finish(&im.hr_raw(&seq.hr_frames, k, &xf).map_err(err)?, &norm).map_err(err)?);
            let rec = im.hr_positions(&img, &xf, &norm).map_err(err)?;
            worst = worst.max(vmse(&rec, &seq.hr_frames[k]).map_err(err)?);
            frames += 1;
            if k == 0 && dims.is_empty() {
                dims.push(format!(
                    "{} LR/{} HR vertices, {}×{} HR image",
                    im.lr_rest.num_vertices(),
                    im.hr_rest.num_vertices(),
                    img.width,
                    img.height
                ));
            }
        }
        ctx.desk.push(seq);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 60.0;
    Ok((
        pass,
        format!(
            "worst HR VMSE {worst:.3e} m² < 1e-4 over {frames} frames ({}); {secs:.1} s < 60 s",
            dims.join("; ")
        ),
    ))
}

fn c2_kinematic(ctx: &mut Ctx) -> Outcome {
    if ctx.desk.is_empty() {
        ctx.desk.push(desk_sequence(SceneConfig::draping(1, 40), PipelineConfig::default().lr_image)?);
    }
    let n = 3;
    let mut worst: f64 = 0.0;
    let mut windows = 0;
    for seq in &ctx.desk {
        let norm = hr_norm(seq)?;
        let im = &seq.imaging;
        for base in 0..seq.num_frames() - n {
            let xf = im.transform(&seq.lr_frames[base]).map_err(err)?;
            let imgs = (base..=base + n)
                .map(|k| finish(&im.hr_raw(&seq.hr_frames, k, &xf)?, &norm))
                .collect::<Result<Vec<FeatureImage>, _>>()
                .map_err(err)?;
            let refs: Vec<&FeatureImage> = imgs.iter().collect();
            let mut g = Graph::<f64>::new();
            let d = g.input(images_to_tensor(&refs, 0..3).map_err(err)?);
            let v = g.input(images_to_tensor(&refs, 6..9).map_err(err)?);
            let r = xf.rotation;
            let ctxk = KineContext {
                rotations: vec![std::array::from_fn(|k| r[(k / 3, k % 3)])],
                frame_dt: im.frame_dt,
                d_norm: norm.slice(0..3),
                v_norm: norm.slice(6..9),
            };
            let l = loss_kine(&mut g, d, v, n + 1, &ctxk).map_err(err)?;
            worst = worst.max(g.value(l).item());
            windows += 1;
        }
    }
    Ok((worst < 1e-10, format!("max L_kine {worst:.3e} < 1e-10 over {windows} ground-truth windows (n=3)")))
}

fn c3_gradients(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let mut worst_prim = (0.0f64, "");
    let mut worst_net: f64 = 0.0;
    let mut ops = 0;
    for seed in 0..20 {
        for (name, rep) in primitive_gradient_checks(seed, 1e-6).map_err(err)? {
            ops += 1;
            if rep.max_rel_error > worst_prim.0 {
                worst_prim = (rep.max_rel_error, name);
            }
        }
        worst_net = worst_net.max(mfsr_gradient_check(seed, 6, 1e-6).map_err(err)?.max_rel_error);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_prim.0 < 1e-4 && worst_net < 1e-4 && secs < 300.0;
    Ok((
        pass,
        format!(
            "worst primitive {:.2e} ({}), worst MFSR+loss_all {worst_net:.2e}, both < 1e-4 relative (f64, h=1e-6, 20 seeds, {} primitive checks); {secs:.1} s < 300 s",
            worst_prim.0,
            worst_prim.1,
            ops
        ),
    ))
}

fn c4_tracking(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let scene = SceneConfig::draping(1, 100);
    let lr = simulate_lr(&scene).map_err(err)?;
    let mut errs = Vec::new();
    for c in [0.0, 1.0, 10.0, 100.0] {
        let rig = TrackRig::from_lr_run(&lr, scene.subdivision_levels, c).map_err(err)?;
        let run = simulate_hr_tracked(&rig, &scene).map_err(err)?;
        errs.push((c, run.tracking_error(&rig.sub_map)));
    }
    let secs = t.elapsed().as_secs_f64();
    let ratio = errs[0].1 / errs[2].1;
    let monotone = errs.windows(2).all(|w| w[1].1 <= w[0].1);
    let list: Vec<String> = errs.iter().map(|(c, e)| format!("c={c}: {e:.4e} m")).collect();
    Ok((
        ratio >= 5.0 && monotone && secs < 300.0,
        format!(
            "{}; c=0/c=10 ratio {ratio:.2} >= 5, monotone non-increasing: {monotone}; {secs:.1} s < 300 s",
            list.join(", ")
        ),
    ))
}

fn c5_rigid(ctx: &mut Ctx) -> Outcome {
    if ctx.desk.is_empty() {
        ctx.desk.push(desk_sequence(SceneConfig::draping(1, 40), PipelineConfig::default().lr_image)?);
    }
    let seq = &ctx.desk[0];
    let im = &seq.imaging;
    let norm = hr_norm(seq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let axis = Unit::new_normalize(Vec3::new(rng.random(), rng.random(), rng.random()));
    let rot = Rotation3::from_axis_angle(&axis, 2.1).into_inner();
    let shift = Vec3::new(3.0, -1.5, 0.7);
    let moved = |frames: &[Vec<Vec3>]| -> Vec<Vec<Vec3>> {
        frames.iter().map(|f| f.iter().map(|p| rot * p + shift).collect()).collect()
    };
    let (lr2, hr2) = (moved(&seq.lr_frames), moved(&seq.hr_frames));
    let mut worst_raw: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for k in 0..seq.num_frames() {
        let xa = im.transform(&seq.lr_frames[k]).map_err(err)?;
        let xb = im.transform(&lr2[k]).map_err(err)?;
        let pairs = [
            (im.lr_raw(&seq.lr_frames, k, &xa), im.lr_raw(&lr2, k, &xb)),
            (im.hr_raw(&seq.hr_frames, k, &xa), im.hr_raw(&hr2, k, &xb)),
        ];
        for (a, b) in pairs {
            let (a, b) = (a.map_err(err)?, b.map_err(err)?);
            // one normalization is shared by both resolutions
            let (na, nb) = (a.normalized(&norm).map_err(err)?, b.normalized(&norm).map_err(err)?);
            for i in 0..a.data.len() {
                worst_raw = worst_raw.max((a.data[i] - b.data[i]).abs());
                worst_norm = worst_norm.max((na.data[i] - nb.data[i]).abs());
            }
            if a.valid != b.valid {
                return Ok((false, "validity masks differ".into()));
            }
        }
    }
    Ok((
        worst_raw < 1e-5 && worst_norm < 1e-5,
        format!(
            "max |Δ| raw {worst_raw:.2e}, normalized {worst_norm:.2e}, both < 1e-5 over {} LR+HR frames",
            seq.num_frames()
        ),
    ))
}

fn c6_physics(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mesh = TriMesh::grid(1.5, 1.0, 13, 13).map_err(err)?;
    for p in &mut mesh.positions {
        *p += Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.02..0.02));
    }
    let model = ClothModel::from_mesh(&mesh).map_err(err)?;
    let dt = 1.0 / (24.0 * 200.0);
    let density = SceneConfig::default().density;
    let random_state = |rng: &mut ChaCha8Rng| -> Result<SimState, String> {
        let mut s = SimState::from_mesh(&mesh, density, &[]).map_err(err)?;
        for v in &mut s.velocities {
            *v = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.2 + rng.random_range(-0.1..0.1));
        }
        Ok(s)
    };

    let free = ForceConfig {
        damping: 0.0,
        gravity: [0.0; 3],
        ..ForceConfig::default()
    };
    let mut s = random_state(&mut rng)?;
    let p0 = s.momentum();
    for _ in 0..1000 {
        s = step(&model, &s, &free, &[], &[], dt).map_err(err)?;
    }
    let drift = (s.momentum() - p0).norm() / p0.norm();

    let fall = ForceConfig::default();
    let mut s = random_state(&mut rng)?;
    let total: f64 = s.masses.iter().sum();
    let v0: Vec3 = s.velocities.iter().zip(&s.masses).map(|(v, m)| v * *m).sum::<Vec3>() / total;
    let x0 = s.center_of_mass();
    let steps = 1000;
    for _ in 0..steps {
        s = step(&model, &s, &fall, &[], &[], dt).map_err(err)?;
    }
    // symplectic Euler: x_n = x_0 + n·dt·v_0 + g·dt²·n(n+1)/2
    let n = steps as f64;
    let expect = x0 + v0 * (n * dt) + fall.gravity() * (dt * dt * n * (n + 1.0) / 2.0);
    let com_err = (s.center_of_mass() - expect).norm();
    Ok((
        drift < 1e-8 && com_err < 1e-9,
        format!(
            "momentum drift {drift:.2e} < 1e-8 relative (1000 steps, no damping or gravity); free-fall COM error {com_err:.2e} m < 1e-9 m"
        ),
    ))
}

fn toy_config() -> Result<PipelineConfig, String> {
    PipelineConfig::load(repo_file("configs/toy.toml")).map_err(err)
}

fn ensure_toy_dataset(ctx: &mut Ctx) -> Result<PathBuf, String> {
    let data = ctx.work.path().join("toy/data");
    if !data.join("manifest.json").exists() {
        gen_data(&toy_config()?, &data, 1).map_err(err)?;
    }
    Ok(data)
}

fn c7_learning(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let cfg = toy_config()?;
    let data = ensure_toy_dataset(ctx)?;
    let model_dir = ctx.work.path().join("toy/model");
    let ds = Dataset::open(&data, Scope::TrainOnly).map_err(err)?;
    let opts = TrainOptions {
        loss_config: "L_all".into(),
        weights: cfg.loss.clone(),
        seed: cfg.seed,
        epochs: None,
    };
    let out = train(&cfg, &ds, &opts, &model_dir).map_err(err)?;
    ctx.toy = Some((data.clone(), model_dir.clone()));
    let ds = Dataset::open(&data, Scope::All).map_err(err)?;
    let rep = evaluate(
        &ds,
        &[("L_all".into(), out.model)],
        EvalSplit::Train,
        &ctx.work.path().join("toy/eval"),
    )
    .map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let (m, b) = (&rep.rows[0].score, &rep.baseline[0]);
    let gain = m.psnr_db - b.psnr_db;
    let frames = ds.manifest.entry(&m.sequence).map_or(0, |e| e.frames);
    Ok((
        gain >= 3.0 && m.vmse_m2 < b.vmse_m2 && secs < 1800.0,
        format!(
            "{frames}-frame training sequence: PSNR {:.2} dB vs bilinear {:.2} dB (gain {gain:.2} >= 3 dB); VMSE {:.3e} < {:.3e} m²; {secs:.0} s < 1800 s",
            m.psnr_db, b.psnr_db, m.vmse_m2, b.vmse_m2
        ),
    ))
}

fn c8_ablation(ctx: &mut Ctx) -> Outcome {
    let cfg = toy_config()?;
    let data = ensure_toy_dataset(ctx)?;
    let mut models = Vec::new();
    let mut train_finite = true;
    for name in ABLATIONS {
        let ds = Dataset::open(&data, Scope::TrainOnly).map_err(err)?;
        let opts = TrainOptions {
            loss_config: name.into(),
            weights: cfg.loss.ablation(name).map_err(err)?,
            seed: cfg.seed,
            epochs: Some(2),
        };
        let out = train(&cfg, &ds, &opts, &ctx.work.path().join("ablation").join(name)).map_err(err)?;
        train_finite &= out.log.iter().all(|e| e.total.is_finite());
        models.push((name.to_string(), out.model));
    }
    let ds = Dataset::open(&data, Scope::All).map_err(err)?;
    let eval_dir = ctx.work.path().join("ablation/eval");
    let rep = evaluate(&ds, &models, EvalSplit::Test, &eval_dir).map_err(err)?;
    let expected_rows = ds.manifest.split.test.len() * ABLATIONS.len();
    let csv = std::fs::read_to_string(eval_dir.join("report.csv")).map_err(err)?;
    let csv_rows = csv.lines().count() - 1;
    let finite = rep.rows.iter().all(|r| r.score.l_all.is_some_and(f64::is_finite));
    let summary = std::fs::read_to_string(eval_dir.join("summary.txt")).map_err(err)?;
    let ranking: Vec<&str> = summary.lines().skip(1).filter_map(|l| l.split_whitespace().next()).collect();
    // soft expectation, reported only
    let all_top2 = ranking.iter().filter(|c| **c != "bilinear").take(2).any(|c| *c == "L_all");
    Ok((
        train_finite && finite && rep.rows.len() == expected_rows && csv_rows == expected_rows,
        format!(
            "{csv_rows} report rows = {} test sequence(s) × {} configs; L_all finite in all configs: {finite}; PSNR ranking (logged): {}; L_all in top two (not asserted): {all_top2}",
            ds.manifest.split.test.len(),
            ABLATIONS.len(),
            ranking.join(" > ")
        ),
    ))
}

fn c9_refinement(_: &mut Ctx) -> Outcome {
    let (bumped, flat) = pinch(12, 0.05, &[(0.3, 0.3), (0.7, 0.62)]).map_err(err)?;
    let before = detect_self_collisions(&bumped).len();
    let res = resolve_zones(&bumped, &flat, &ZoneConfig::default()).map_err(err)?;
    let after = detect_self_collisions(&res.mesh).len();
    let mut in_zone = vec![false; bumped.num_vertices()];
    for z in &res.zones {
        for &v in &z.vertices {
            in_zone[v] = true;
        }
    }
    let untouched = (0..bumped.num_vertices())
        .filter(|&v| !in_zone[v])
        .all(|v| res.mesh.positions[v] == bumped.positions[v]);

    // a sheet driven through the sphere of a scripted hitting scene
    let scene = SceneConfig::hitting(3, 40);
    let t = 0.8;
    let obstacles = scene.obstacles_at(t);
    let sphere = &obstacles[0];
    let Shape::Sphere { center, radius } = &sphere.shape else {
        return Err("hitting scene has no sphere".into());
    };
    let mut sheet = TriMesh::grid(1.0, 1.0, 20, 20).map_err(err)?;
    for p in &mut sheet.positions {
        *p = Vec3::new(center[0] - 0.5 + p.x, center[1] - 0.5 + p.y, center[2] + 0.3 * radius);
    }
    let inside = sheet
        .positions
        .iter()
        .filter(|p| sphere.signed_distance(p).0 < sphere.offset)
        .count();
    let pushed = push_out(&sheet, &obstacles).map_err(err)?;
    let min_sd = pushed
        .positions
        .iter()
        .map(|p| sphere.signed_distance(p).0)
        .fold(f64::INFINITY, f64::min);
    Ok((
        after == 0 && untouched && before > 0 && inside > 0 && min_sd >= sphere.offset,
        format!(
            "pinch: {before} → {after} intersecting pairs over {} zones (counts {:?}), non-zone vertices bitwise unchanged: {untouched}; push_out: {inside} vertices inside, min signed distance {min_sd:.6} >= offset {}",
            res.zones.len(),
            res.collision_counts,
            sphere.offset
        ),
    ))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_clothsr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!("clothsr {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree_bytes(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).map_err(err)? {
            let p = e.map_err(err)?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).map_err(err)?.to_path_buf();
                out.insert(rel, std::fs::read(&p).map_err(err)?);
            }
        }
    }
    Ok(out)
}

fn c10_determinism(ctx: &mut Ctx) -> Outcome {
    let cfg = repo_file("configs/determinism.toml");
    let cfg = cfg.to_str().ok_or("non-UTF-8 path")?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let root = ctx.work.path().join("det").join(run);
        let p = |s: &str| root.join(s).display().to_string();
        let common = ["--config", cfg, "--seed", "11", "--deterministic"];
        run_cli(&[&["gen-data"][..], &common, &["--out", &p("data")]].concat())?;
        run_cli(&[&["train", "--data", &p("data"), "--epochs", "1"][..], &common, &["--out", &p("model")]].concat())?;
        let ds = Dataset::open(root.join("data"), Scope::All).map_err(err)?;
        let seq = ds.manifest.split.test[0].clone();
        run_cli(
            &[
                &["infer", "--model", &p("model"), "--data", &p("data"), "--sequence", &seq][..],
                &common,
                &["--out", &p("infer")],
            ]
            .concat(),
        )?;
        trees.push(tree_bytes(&root)?);
    }
    let (a, b) = (&trees[0], &trees[1]);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let frames = a.keys().filter(|k| k.starts_with("infer") && k.extension().is_some_and(|e| e == "obj")).count();
    Ok((
        differing.is_empty() && frames > 0,
        format!(
            "gen-data → train (1 epoch) → infer twice under --deterministic: {} files, {frames} inferred frames, {} differing{}",
            a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {differing:?}") }
        ),
    ))
}

fn c11_bench(ctx: &mut Ctx) -> Outcome {
    let desk = PipelineConfig::default();
    let model = match &ctx.toy {
        Some((_, m)) => Model::load(m).map_err(err)?,
        None => {
            let cfg = toy_config()?;
            let data = ensure_toy_dataset(ctx)?;
            let ds = Dataset::open(&data, Scope::TrainOnly).map_err(err)?;
            let opts = TrainOptions {
                loss_config: "L_all".into(),
                weights: cfg.loss.clone(),
                seed: cfg.seed,
                epochs: Some(1),
            };
            train(&cfg, &ds, &opts, &ctx.work.path().join("bench_model")).map_err(err)?.model
        }
    };
    let scene = desk.scenes[0].scene().map_err(err)?;
    let row = bench_scene(&model, &scene, &desk.refine).map_err(err)?;
    let csv = format_csv(std::slice::from_ref(&row));
    let header = csv.lines().next().unwrap_or_default().to_string();
    let has_columns = ["coarse_sim", "mesh_image_conversion", "synthesizing", "refinement", "total", "speedup"]
        .iter()
        .all(|c| header.split(',').any(|h| h == *c));
    let acct = row.accounting_error();
    let stages: Vec<String> = COLUMNS.iter().zip(row.stages()).map(|(c, s)| format!("{c} {s:.4}")).collect();
    Ok((
        has_columns && acct <= 0.05 && row.total < row.tracked_hr_sim,
        format!(
            "{} ({} frames): {} s/frm; stage sum {:.4} vs total {:.4} ({:.2}% <= 5%); total {:.4} < tracked HR sim {:.4} s/frm (speedup {:.2}×)",
            row.scene,
            row.frames,
            stages.join(", "),
            row.stage_sum(),
            row.total,
            100.0 * acct,
            row.total,
            row.tracked_hr_sim,
            row.speedup()
        ),
    ))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(&str, fn(&mut Ctx) -> Outcome); 11] = [
        ("round-trip bound", c1_roundtrip),
        ("kinematic identity", c2_kinematic),
        ("gradient suite", c3_gradients),
        ("tracking efficacy", c4_tracking),
        ("rigid invariance", c5_rigid),
        ("physics sanity", c6_physics),
        ("learning at toy scale", c7_learning),
        ("ablation harness", c8_ablation),
        ("refinement", c9_refinement),
        ("determinism", c10_determinism),
        ("benchmark accounting", c11_bench),
    ];
    let mut ctx = Ctx {
        work: tempfile::tempdir().expect("temp dir"),
        desk: Vec::new(),
        toy: None,
    };
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f(&mut ctx) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} [{id}] {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
