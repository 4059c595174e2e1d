//! Training on frame windows of the training split.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clothsr_core::geom_image::ChannelAffine;
use clothsr_net::loss::{loss_all, KineContext, Targets};
use clothsr_net::model::images_to_tensor;
use clothsr_net::{forward, init_params, LossWeights, Mfsr, NetConfig};
use clothsr_tensor::{Adam, AdamConfig, Checkpoint, Graph, NamedAffine, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{sha256_hex, Dataset, Sequence};
use crate::error::{read_to_string, write, PipelineError, Result};
use crate::features::finish;

pub const CHECKPOINT: &str = "model.ckpt";
pub const CARD: &str = "model.toml";
pub const NORM_NAME: &str = "features";

/// Structured description stored next to the checkpoint so inference can
/// validate compatibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub net: NetConfig,
    pub lr_image: [usize; 2],
    pub loss_config: String,
    pub loss: LossWeights,
    pub epochs: usize,
    pub seed: u64,
    /// SHA-256 of the dataset manifest the model was trained on.
    pub dataset_manifest: String,
}

/// A trained network with its normalization.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Mfsr,
    pub norm: ChannelAffine,
    pub card: ModelCard,
}

impl Model {
    pub fn save(&self, dir: &Path, optimizer: Option<&Adam<f32>>) -> Result<()> {
        let mut ck = self.net.to_checkpoint();
        ck.optimizer = optimizer.cloned();
        ck.norms.push(NamedAffine {
            name: NORM_NAME.into(),
            min: self.norm.min.clone(),
            max: self.norm.max.clone(),
        });
        write(&dir.join(CHECKPOINT), ck.encode())?;
        write(&dir.join(CARD), toml::to_string(&self.card).expect("card serializes"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let card: ModelCard = toml::from_str(&read_to_string(&dir.join(CARD))?)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", dir.join(CARD).display())))?;
        let ck = Checkpoint::load(dir.join(CHECKPOINT))?;
        let net = Mfsr::from_checkpoint(&card.net, &ck)?;
        let n = ck
            .norm(NORM_NAME)
            .ok_or_else(|| PipelineError::Data("checkpoint carries no feature normalization".into()))?;
        Ok(Model {
            net,
            norm: ChannelAffine {
                min: n.min.clone(),
                max: n.max.clone(),
            },
            card,
        })
    }
}

/// `n + 1` consecutive frames of one sequence, all under the base frame's
/// rigid transform, as normalized padded images.
#[derive(Debug, Clone)]
pub struct Window {
    pub sequence: String,
    pub base: usize,
    /// `[n+1, 9, h, w]`
    pub lr: Tensor<f32>,
    /// `[n+1, 9, 4h, 4w]`
    pub hr: Tensor<f32>,
    pub rotation: [f64; 9],
}

pub fn build_windows(seqs: &[Sequence], norm: &ChannelAffine, n: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for seq in seqs {
        let im = &seq.imaging;
        for base in 0..seq.num_frames().saturating_sub(n) {
            let xf = im.transform(&seq.lr_frames[base])?;
            let mut lr = Vec::with_capacity(n + 1);
            let mut hr = Vec::with_capacity(n + 1);
            for k in base..=base + n {
                lr.push(finish(&im.lr_raw(&seq.lr_frames, k, &xf)?, norm)?);
                hr.push(finish(&im.hr_raw(&seq.hr_frames, k, &xf)?, norm)?);
            }
            let r = xf.rotation;
            out.push(Window {
                sequence: seq.name.clone(),
                base,
                lr: images_to_tensor(&lr.iter().collect::<Vec<_>>(), 0..9)?,
                hr: images_to_tensor(&hr.iter().collect::<Vec<_>>(), 0..9)?,
                rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
            });
        }
    }
    Ok(out)
}

/// Copies a `side`×`side` patch at `(y, x)` of channels `ch` of frame `f`.
fn crop_into(t: &Tensor<f32>, f: usize, ch: std::ops::Range<usize>, y: usize, x: usize, side_h: usize, side_w: usize, out: &mut Vec<f32>) {
    let [_, c, h, w] = [t.shape[0], t.shape[1], t.shape[2], t.shape[3]];
    for ci in ch {
        let plane = &t.data[(f * c + ci) * h * w..(f * c + ci + 1) * h * w];
        for row in y..y + side_h {
            out.extend_from_slice(&plane[row * w + x..row * w + x + side_w]);
        }
    }
}

/// A stacked, frame-major batch of windows.
pub struct Batch {
    pub input: Tensor<f32>,
    pub d: Tensor<f32>,
    pub n: Tensor<f32>,
    pub v: Tensor<f32>,
    pub rotations: Vec<[f64; 9]>,
}

/// Cuts the same patch location from every frame of each window. `patch`
/// 0 takes whole images.
pub fn make_batch(windows: &[&Window], patch: usize, rng: &mut ChaCha8Rng) -> Batch {
    let [frames, _, h, w] = [windows[0].lr.shape[0], 9, windows[0].lr.shape[2], windows[0].lr.shape[3]];
    let (ph, pw) = if patch == 0 { (h, w) } else { (patch, patch) };
    let offsets: Vec<(usize, usize)> = windows
        .iter()
        .map(|_| (rng.random_range(0..=h - ph), rng.random_range(0..=w - pw)))
        .collect();
    let b = windows.len();
    let mut input = Vec::with_capacity(frames * b * 9 * ph * pw);
    let mut heads: [Vec<f32>; 3] = Default::default();
    for f in 0..frames {
        for (win, &(y, x)) in windows.iter().zip(&offsets) {
            crop_into(&win.lr, f, 0..9, y, x, ph, pw, &mut input);
            for (hd, out) in heads.iter_mut().enumerate() {
                crop_into(&win.hr, f, 3 * hd..3 * hd + 3, 4 * y, 4 * x, 4 * ph, 4 * pw, out);
            }
        }
    }
    let hr_shape = vec![frames * b, 3, 4 * ph, 4 * pw];
    let [d, n, v] = heads.map(|data| Tensor { shape: hr_shape.clone(), data });
    Batch {
        input: Tensor {
            shape: vec![frames * b, 9, ph, pw],
            data: input,
        },
        d,
        n,
        v,
        rotations: windows.iter().map(|w| w.rotation).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub l_d: f64,
    pub l_n: f64,
    pub l_v: f64,
    pub l_kine: f64,
    /// Displacement PSNR of whole base frames of up to four windows.
    pub psnr_d: f64,
}

pub struct StepLoss {
    pub terms: [f64; 5],
}

/// One forward/backward/update. Returns `[total, d, n, v, kine]`, or a
/// numeric error (parameters untouched) on a non-finite loss.
pub fn train_step(
    model: &mut Mfsr,
    opt: &mut Adam<f32>,
    batch: &Batch,
    frames: usize,
    ctx: &KineContext,
    weights: &LossWeights,
    lr: f64,
) -> Result<StepLoss> {
    let mut g = Graph::<f32>::new();
    let params = model.bind(&mut g, true);
    let x = g.input(batch.input.clone());
    let pred = forward(&mut g, &params, &model.cfg, x)?;
    let t = Targets {
        d: g.input(batch.d.clone()),
        n: g.input(batch.n.clone()),
        v: g.input(batch.v.clone()),
    };
    let terms = loss_all(&mut g, &pred, &t, frames, ctx, weights)?;
    let vals = [terms.total, terms.d, terms.n, terms.v, terms.kine].map(|v| g.value(v).item() as f64);
    if !vals[0].is_finite() {
        return Err(PipelineError::Numeric(format!("non-finite training loss {}", vals[0])));
    }
    g.backward(terms.total)?;
    let grads: Vec<Option<&[f32]>> = params.iter().map(|&p| g.grad(p)).collect();
    if grads.iter().flatten().any(|gr| gr.iter().any(|x| !x.is_finite())) {
        return Err(PipelineError::Numeric("non-finite gradient".into()));
    }
    opt.step(&mut model.params, &grads, lr);
    Ok(StepLoss { terms: vals })
}

/// Runs the network on whole LR images `[N,9,h,w]`.
pub fn predict(model: &Mfsr, input: Tensor<f32>) -> Result<[Tensor<f32>; 3]> {
    let mut g = Graph::<f32>::new();
    let params = model.bind(&mut g, false);
    let x = g.input(input);
    let p = forward(&mut g, &params, &model.cfg, x)?;
    Ok([p.d, p.n, p.v].map(|v| g.value(v).clone()))
}

fn window_psnr(model: &Mfsr, windows: &[Window]) -> Result<f64> {
    let mut se = 0.0;
    let mut count = 0usize;
    for w in windows.iter().take(4) {
        let [_, c, h, wd] = w.lr.dims4("window")?;
        let input = Tensor::new(vec![1, c, h, wd], w.lr.data[..c * h * wd].to_vec())?;
        let [d, _, _] = predict(model, input)?;
        let (hh, hw) = (4 * h, 4 * wd);
        for ch in 0..3 {
            let target = &w.hr.data[ch * hh * hw..(ch + 1) * hh * hw];
            let pred = &d.data[ch * hh * hw..(ch + 1) * hh * hw];
            for (p, t) in pred.iter().zip(target) {
                let e = p.clamp(0.0, 1.0) as f64 - *t as f64;
                se += e * e;
                count += 1;
            }
        }
    }
    let mse = se / count.max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub loss_config: String,
    pub weights: LossWeights,
    pub seed: u64,
    /// Overrides `train.epochs` when set.
    pub epochs: Option<usize>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub out: PathBuf,
    pub access_log: Vec<String>,
}

/// Trains on the dataset's training split and writes the checkpoint, model
/// card, per-epoch log and access log to `out`.
pub fn train(cfg: &PipelineConfig, ds: &Dataset, opts: &TrainOptions, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    opts.weights.validate()?;
    if ds.manifest.lr_image != cfg.lr_image {
        return Err(PipelineError::Config(format!(
            "config lr_image {:?} differs from the dataset's {:?}",
            cfg.lr_image, ds.manifest.lr_image
        )));
    }
    let sched = &cfg.train;
    let epochs = opts.epochs.unwrap_or(sched.epochs);
    let n = opts.weights.window_n;
    let frames = n + 1;
    let norm = ds.manifest.norm.clone();
    let seqs = ds
        .manifest
        .split
        .train
        .iter()
        .map(|name| ds.load_sequence(name))
        .collect::<Result<Vec<_>>>()?;
    let windows = build_windows(&seqs, &norm, n)?;
    if windows.is_empty() {
        return Err(PipelineError::Data("training split has no complete windows".into()));
    }
    let frame_dt = seqs[0].imaging.frame_dt;
    if seqs.iter().any(|s| s.imaging.frame_dt != frame_dt) {
        return Err(PipelineError::Data("training sequences disagree on frame rate".into()));
    }
    let manifest_path = ds.root.join(crate::dataset::MANIFEST);
    let manifest_hash = sha256_hex(&std::fs::read(&manifest_path).map_err(|e| PipelineError::io(&manifest_path, e))?);

    let mut net = init_params(&cfg.net, opts.seed)?;
    let mut opt = Adam::new(AdamConfig::default(), &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7a11);
    let batch = sched.batch.min(windows.len());
    let iters = if sched.iters_per_epoch > 0 {
        sched.iters_per_epoch
    } else {
        windows.len().div_ceil(batch)
    };
    let card = ModelCard {
        net: cfg.net.clone(),
        lr_image: cfg.lr_image,
        loss_config: opts.loss_config.clone(),
        loss: opts.weights.clone(),
        epochs,
        seed: opts.seed,
        dataset_manifest: manifest_hash,
    };
    let d_norm = norm.slice(0..3);
    let v_norm = norm.slice(6..9);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(epochs);
    std::fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;

    for epoch in 1..=epochs {
        let lr = sched.lr_at(epoch);
        let mut acc = [0.0f64; 5];
        for _ in 0..iters {
            let mut pick = Vec::with_capacity(batch);
            while pick.len() < batch {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                pick.push(&windows[order[cursor]]);
                cursor += 1;
            }
            let b = make_batch(&pick, sched.lr_patch, &mut rng);
            let ctx = KineContext {
                rotations: b.rotations.clone(),
                frame_dt,
                d_norm: d_norm.clone(),
                v_norm: v_norm.clone(),
            };
            match train_step(&mut net, &mut opt, &b, frames, &ctx, &opts.weights, lr) {
                Ok(s) => {
                    for (a, t) in acc.iter_mut().zip(s.terms) {
                        *a += t / iters as f64;
                    }
                }
                Err(e @ PipelineError::Numeric(_)) => {
                    let model = Model {
                        net,
                        norm,
                        card: ModelCard { epochs: epoch - 1, ..card },
                    };
                    model.save(out, Some(&opt))?;
                    return Err(PipelineError::Numeric(format!(
                        "{e} at epoch {epoch}; last good parameters saved to {}",
                        out.display()
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        let entry = EpochLog {
            epoch,
            lr,
            total: acc[0],
            l_d: acc[1],
            l_n: acc[2],
            l_v: acc[3],
            l_kine: acc[4],
            psnr_d: window_psnr(&net, &windows)?,
        };
        log::info!(
            "epoch {epoch} lr {lr:.1e} loss {:.4e} (d {:.3e} n {:.3e} v {:.3e} kine {:.3e}) psnr_d {:.2}",
            entry.total,
            entry.l_d,
            entry.l_n,
            entry.l_v,
            entry.l_kine,
            entry.psnr_d
        );
        log.push(entry);
        if sched.checkpoint_every > 0 && epoch % sched.checkpoint_every == 0 && epoch < epochs {
            let snap = Model {
                net: net.clone(),
                norm: norm.clone(),
                card: ModelCard { epochs: epoch, ..card.clone() },
            };
            snap.save(&out.join(format!("epoch_{epoch:04}")), Some(&opt))?;
        }
    }

    let violations = ds.audit_violations();
    let access_log = ds.access_log();
    write(&out.join("access_log.txt"), access_log.join("\n") + "\n")?;
    if !violations.is_empty() {
        return Err(PipelineError::Data(format!("training read test-split files: {violations:?}")));
    }
    write(&out.join("train_log.csv"), format_log(&log))?;
    let model = Model { net, norm, card };
    model.save(out, Some(&opt))?;
    Ok(TrainOutcome {
        model,
        log,
        out: out.to_path_buf(),
        access_log,
    })
}

pub fn format_log(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,total,l_d,l_n,l_v,l_kine,psnr_d\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            e.epoch,
            e.lr,
            e.total,
            e.l_d,
            e.l_n,
            e.l_v,
            e.l_kine,
            clothsr_net::metrics::fmt_psnr(e.psnr_d)
        );
    }
    s
}
