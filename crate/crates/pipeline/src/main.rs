use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clothsr_net::ABLATIONS;
use clothsr_pipeline::config::PipelineConfig;
use clothsr_pipeline::dataset::{gen_data, install_pool, seq_dir, Dataset, Scope};
use clothsr_pipeline::error::{PipelineError, Result};
use clothsr_pipeline::eval::{evaluate, EvalSplit};
use clothsr_pipeline::infer::{infer, write_inference, LrSequence};
use clothsr_pipeline::train::{train, Model, TrainOptions};
use clothsr_pipeline::{bench, convert};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "clothsr", version, about = "Cloth super-resolution via geometry images")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML); built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file stem for `convert to-image`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Single-threaded, bitwise reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate the configured scenes and write a dataset.
    GenData,
    /// Convert between meshes and geometry images.
    Convert {
        #[command(subcommand)]
        dir: ConvertDir,
    },
    /// Train on the dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// One of L_d, L_d+n, L_d+v, L_d+n+v, L_all; the configured weights
        /// when omitted.
        #[arg(long)]
        loss_config: Option<String>,
        /// Train every loss configuration into `<out>/<name>`.
        #[arg(long)]
        ablation: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Synthesize refined HR meshes for an LR sequence.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Directory with scene.toml, lr_rest.obj and lr/frame_NNNN.obj.
        #[arg(long, conflicts_with = "data")]
        input: Option<PathBuf>,
        /// Dataset root, used with --sequence.
        #[arg(long, requires = "sequence")]
        data: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Score models against ground truth and the bilinear baseline.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Model directory; repeatable.
        #[arg(long)]
        model: Vec<PathBuf>,
        /// Evaluate `<models>/<name>` for every loss configuration.
        #[arg(long)]
        ablation: bool,
        #[arg(long, requires = "ablation")]
        models: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Time pipeline stages against tracked HR simulation.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Index into the configured scenes.
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
}

#[derive(Subcommand)]
enum ConvertDir {
    ToImage {
        #[arg(long)]
        rest: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        prev: Option<PathBuf>,
        /// WIDTHxHEIGHT; the configured LR size when omitted.
        #[arg(long)]
        size: Option<String>,
        #[arg(long, default_value_t = 1.0 / 24.0)]
        frame_dt: f64,
        /// Image sidecar (.json) whose normalization is reused.
        #[arg(long)]
        norm_from: Option<PathBuf>,
    },
    ToMesh {
        #[arg(long)]
        rest: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Sidecar; `<image>.json` when omitted.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::GenData => "gen-data",
            Verb::Convert { .. } => "convert",
            Verb::Train { .. } => "train",
            Verb::Infer { .. } => "infer",
            Verb::Eval { .. } => "eval",
            Verb::Bench { .. } => "bench",
        }
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    c.out
        .as_deref()
        .ok_or_else(|| PipelineError::Config("--out is required".into()))
}

fn parse_size(s: &str) -> Result<[usize; 2]> {
    let bad = || PipelineError::Config(format!("size '{s}' is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok([w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?])
}

fn run(cli: &Cli) -> Result<Value> {
    let c = &cli.common;
    let threads = if c.deterministic { 1 } else { c.threads.max(1) };
    let mode = if threads == 1 { "deterministic" } else { "parallel" };
    match &cli.verb {
        Verb::GenData => {
            let cfg = load_config(c)?;
            let out = out_dir(c)?;
            let r = gen_data(&cfg, out, threads)?;
            Ok(json!({
                "out": out,
                "sequences": r.manifest.sequences.len(),
                "failed": r.manifest.sequences.iter().filter(|s| s.failure.is_some()).count(),
                "worst_roundtrip_vmse": r.worst_roundtrip_vmse,
            }))
        }
        Verb::Convert { dir } => {
            let out = out_dir(c)?;
            match dir {
                ConvertDir::ToImage {
                    rest,
                    mesh,
                    prev,
                    size,
                    frame_dt,
                    norm_from,
                } => {
                    let size = match size {
                        Some(s) => parse_size(s)?,
                        None => load_config(c)?.lr_image,
                    };
                    let r = convert::to_image(
                        &convert::ToImage {
                            rest: rest.clone(),
                            mesh: mesh.clone(),
                            prev: prev.clone(),
                            size,
                            frame_dt: *frame_dt,
                            norm_from: norm_from.clone(),
                        },
                        out,
                    )?;
                    Ok(serde_json::to_value(r).expect("report serializes"))
                }
                ConvertDir::ToMesh { rest, image, meta } => {
                    let meta = meta.clone().unwrap_or_else(|| image.with_extension("json"));
                    let m = convert::to_mesh(rest, image, &meta, out)?;
                    Ok(json!({"out": out, "vertices": m.num_vertices(), "faces": m.num_faces()}))
                }
            }
        }
        Verb::Train {
            data,
            loss_config,
            ablation,
            epochs,
        } => {
            let cfg = load_config(c)?;
            let out = out_dir(c)?;
            let runs: Vec<(String, clothsr_net::LossWeights, PathBuf)> = if *ablation {
                ABLATIONS
                    .iter()
                    .map(|&n| Ok((n.to_string(), cfg.loss.ablation(n)?, out.join(n))))
                    .collect::<Result<_>>()?
            } else {
                match loss_config {
                    Some(n) => vec![(n.clone(), cfg.loss.ablation(n)?, out.to_path_buf())],
                    None => vec![("configured".into(), cfg.loss.clone(), out.to_path_buf())],
                }
            };
            let mut results = Vec::new();
            for (name, weights, dir) in runs {
                let ds = Dataset::open(data, Scope::TrainOnly)?;
                let r = train(
                    &cfg,
                    &ds,
                    &TrainOptions {
                        loss_config: name.clone(),
                        weights,
                        seed: cfg.seed,
                        epochs: *epochs,
                    },
                    &dir,
                )?;
                let last = r.log.last().expect("at least one epoch");
                results.push(json!({
                    "loss_config": name,
                    "out": dir,
                    "epochs": r.log.len(),
                    "final_loss": last.total,
                    "final_psnr_d": clothsr_net::metrics::fmt_psnr(last.psnr_d),
                    "files_read": r.access_log.len(),
                }));
            }
            Ok(json!({"mode": mode, "runs": results}))
        }
        Verb::Infer {
            model,
            input,
            data,
            sequence,
        } => {
            let out = out_dir(c)?;
            let m = Model::load(model)?;
            let dir = match (input, data, sequence) {
                (Some(i), _, _) => i.clone(),
                (None, Some(d), Some(s)) => d.join(seq_dir(s)),
                _ => return Err(PipelineError::Config("give --input or --data with --sequence".into())),
            };
            let seq = LrSequence::load(&dir)?;
            let lr_image = c.config.as_ref().map(|_| load_config(c).map(|cfg| cfg.lr_image)).transpose()?;
            let refine = match &c.config {
                Some(_) => load_config(c)?.refine,
                None => Default::default(),
            };
            let order: Vec<usize> = (0..seq.frames.len()).collect();
            let pool = install_pool(threads)?;
            let inf = pool.install(|| infer(&m, &seq, &order, &refine, lr_image))?;
            write_inference(&inf, out)?;
            let left: usize = inf.frames.iter().map(|f| f.report.collisions_after).sum();
            let warnings = inf.frames.iter().filter(|f| f.report.warning.is_some()).count();
            Ok(json!({"mode": mode, "out": out, "frames": inf.frames.len(), "collisions_left": left, "warnings": warnings}))
        }
        Verb::Eval {
            data,
            model,
            ablation,
            models,
            split,
        } => {
            let out = out_dir(c)?;
            let ds = Dataset::open(data, Scope::All)?;
            let mut loaded = Vec::new();
            for p in model {
                let m = Model::load(p)?;
                loaded.push((m.card.loss_config.clone(), m));
            }
            if *ablation {
                let root = models
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("--ablation needs --models".into()))?;
                for n in ABLATIONS {
                    loaded.push((n.to_string(), Model::load(&root.join(n))?));
                }
            }
            if loaded.is_empty() {
                return Err(PipelineError::Config("give --model or --ablation --models".into()));
            }
            let split = match split {
                SplitArg::Train => EvalSplit::Train,
                SplitArg::Test => EvalSplit::Test,
            };
            let r = evaluate(&ds, &loaded, split, out)?;
            Ok(json!({"out": out, "rows": r.rows.len(), "baseline_rows": r.baseline.len()}))
        }
        Verb::Bench { model, scene } => {
            let cfg = load_config(c)?;
            let out = out_dir(c)?;
            let spec = cfg
                .scenes
                .get(*scene)
                .ok_or_else(|| PipelineError::Config(format!("no scene {scene}")))?;
            let m = Model::load(model)?;
            let row = bench::bench_scene(&m, &spec.scene()?, &cfg.refine)?;
            bench::write_bench(std::slice::from_ref(&row), out)?;
            Ok(json!({
                "out": out,
                "total_s_per_frame": row.total,
                "tracked_hr_sim_s_per_frame": row.tracked_hr_sim,
                "speedup": row.speedup(),
                "accounting_error": row.accounting_error(),
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", json!({"status": "error", "verb": null, "kind": "usage", "message": msg.trim()}));
            return ExitCode::from(2);
        }
    };
    let verb = cli.verb.name();
    match run(&cli) {
        Ok(mut v) => {
            v["status"] = json!("ok");
            v["verb"] = json!(verb);
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.error_line(verb));
            ExitCode::FAILURE
        }
    }
}
