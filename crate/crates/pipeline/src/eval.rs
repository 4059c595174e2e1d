//! Displacement-image PSNR and mesh VMSE against a bilinear baseline.

use std::fmt::Write as _;
use std::path::Path;

use clothsr_core::geom_image::{ChannelAffine, FeatureImage};
use clothsr_core::Vec3;
use clothsr_net::loss::{loss_all, KineContext, Targets};
use clothsr_net::metrics::{fmt_psnr, vmse};
use clothsr_net::model::{images_to_tensor, tensor_to_image};
use clothsr_net::{forward, LossWeights};
use clothsr_tensor::{Graph, Tensor};

use crate::dataset::{Dataset, Sequence};
use crate::error::{write, PipelineError, Result};
use crate::features::finish;
use crate::train::{build_windows, predict, Model};

/// Squared-error accumulator over valid HR pixels of the displacement
/// channels, in normalized units (peak 1).
#[derive(Debug, Clone, Copy, Default)]
struct SqErr {
    sum: f64,
    count: usize,
}

impl SqErr {
    fn add(&mut self, pred: &FeatureImage, target: &FeatureImage, mask: &[bool]) {
        for (k, &ok) in mask.iter().enumerate() {
            if ok {
                for c in 0..3 {
                    let e = pred.data[k * pred.channels + c].clamp(0.0, 1.0) - target.data[k * target.channels + c];
                    self.sum += e * e;
                    self.count += 1;
                }
            }
        }
    }

    fn psnr(&self) -> f64 {
        let mse = self.sum / self.count.max(1) as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }
}

/// Bilinear ×4 upsampling of the displacement channels of a normalized LR
/// image, with the same alignment as the network's upsampler.
pub fn bilinear_d(lr: &FeatureImage) -> Result<FeatureImage> {
    let mut g = Graph::<f64>::new();
    let x = g.input(images_to_tensor(&[lr], 0..3)?);
    let up = g.upsample_bilinear(x, 4)?;
    Ok(tensor_to_image(g.value(up), 0)?)
}

/// What to compare against the ground truth.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a Model),
    Bilinear,
    /// The HR target itself; gives the ∞ / 0 sentinels.
    Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub sequence: String,
    pub psnr_db: f64,
    pub vmse_m2: f64,
    /// Mean over windows of the full weighted loss, for models only.
    pub l_all: Option<f64>,
}

/// Predicted normalized HR displacement images for every frame.
pub fn predict_d(pred: Predictor<'_>, seq: &Sequence, norm: &ChannelAffine) -> Result<Vec<FeatureImage>> {
    let im = &seq.imaging;
    (0..seq.num_frames())
        .map(|k| {
            let xf = im.transform(&seq.lr_frames[k])?;
            match pred {
                Predictor::Model(m) => {
                    let lr = finish(&im.lr_raw(&seq.lr_frames, k, &xf)?, norm)?;
                    let [d, _, _] = predict(&m.net, images_to_tensor(&[&lr], 0..9)?)?;
                    Ok(tensor_to_image(&d, 0)?)
                }
                Predictor::Bilinear => bilinear_d(&finish(&im.lr_raw(&seq.lr_frames, k, &xf)?, norm)?),
                Predictor::Truth => Ok(finish(&im.hr_raw(&seq.hr_frames, k, &xf)?, norm)?.select_channels(0..3)),
            }
        })
        .collect()
}

/// Positions reconstructed from a normalized displacement image; no
/// clamping and no refinement.
pub fn reconstruct(seq: &Sequence, k: usize, d: &FeatureImage, norm: &ChannelAffine) -> Result<Vec<Vec3>> {
    let xf = seq.imaging.transform(&seq.lr_frames[k])?;
    seq.imaging.hr_positions(d, &xf, norm)
}

pub fn score_sequence(pred: Predictor<'_>, seq: &Sequence, norm: &ChannelAffine) -> Result<SequenceScore> {
    let im = &seq.imaging;
    let mask = im.hr_map.valid_mask();
    let ds = predict_d(pred, seq, norm)?;
    let mut se = SqErr::default();
    let mut vm = 0.0;
    for (k, d) in ds.iter().enumerate() {
        let xf = im.transform(&seq.lr_frames[k])?;
        let target = finish(&im.hr_raw(&seq.hr_frames, k, &xf)?, norm)?;
        se.add(d, &target, &mask);
        vm += vmse(&reconstruct(seq, k, d, norm)?, &seq.hr_frames[k])?;
    }
    let l_all = match pred {
        Predictor::Model(m) => Some(mean_window_loss(m, seq, norm, &LossWeights::default())?),
        _ => None,
    };
    Ok(SequenceScore {
        sequence: seq.name.clone(),
        psnr_db: se.psnr(),
        vmse_m2: vm / ds.len().max(1) as f64,
        l_all,
    })
}

/// Mean weighted loss over all windows of a sequence.
pub fn mean_window_loss(m: &Model, seq: &Sequence, norm: &ChannelAffine, w: &LossWeights) -> Result<f64> {
    let windows = build_windows(std::slice::from_ref(seq), norm, w.window_n)?;
    if windows.is_empty() {
        return Err(PipelineError::Data(format!("{} is shorter than one window", seq.name)));
    }
    let mut total = 0.0;
    for win in &windows {
        let mut g = Graph::<f32>::new();
        let params = m.net.bind(&mut g, false);
        let x = g.input(win.lr.clone());
        let p = forward(&mut g, &params, &m.net.cfg, x)?;
        let [d, n, v] = [0, 1, 2].map(|h| g.input(channel_block(&win.hr, 3 * h)));
        let ctx = KineContext {
            rotations: vec![win.rotation],
            frame_dt: seq.imaging.frame_dt,
            d_norm: norm.slice(0..3),
            v_norm: norm.slice(6..9),
        };
        let terms = loss_all(&mut g, &p, &Targets { d, n, v }, w.window_n + 1, &ctx, w)?;
        total += g.value(terms.total).item() as f64;
    }
    Ok(total / windows.len() as f64)
}

fn channel_block(t: &Tensor<f32>, start: usize) -> Tensor<f32> {
    let [nb, c, h, w] = [t.shape[0], t.shape[1], t.shape[2], t.shape[3]];
    let plane = h * w;
    let mut data = Vec::with_capacity(nb * 3 * plane);
    for b in 0..nb {
        data.extend_from_slice(&t.data[(b * c + start) * plane..(b * c + start + 3) * plane]);
    }
    Tensor {
        shape: vec![nb, 3, h, w],
        data,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub loss_config: String,
    pub score: SequenceScore,
}

pub const REPORT_HEADER: &str = "dataset,loss_config,sequence,psnr_db,vmse_m2,l_all";

pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        let l = r.score.l_all.map_or_else(String::new, |x| format!("{x:e}"));
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{}",
            r.dataset,
            r.loss_config,
            r.score.sequence,
            fmt_psnr(r.score.psnr_db),
            r.score.vmse_m2,
            l
        );
    }
    s
}

/// Which split of the manifest to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
}

pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub baseline: Vec<SequenceScore>,
}

fn dataset_name(ds: &Dataset) -> String {
    ds.root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Scores each `(loss_config, model)` on every sequence of `split`, plus
/// the bilinear baseline, and writes `report.csv` and `summary.txt`.
pub fn evaluate(ds: &Dataset, models: &[(String, Model)], split: EvalSplit, out: &Path) -> Result<EvalReport> {
    let names = match split {
        EvalSplit::Train => &ds.manifest.split.train,
        EvalSplit::Test => &ds.manifest.split.test,
    };
    if names.is_empty() {
        return Err(PipelineError::Data("split has no sequences".into()));
    }
    let norm = &ds.manifest.norm;
    for (label, m) in models {
        if m.card.lr_image != ds.manifest.lr_image {
            return Err(PipelineError::Config(format!(
                "model {label} expects lr_image {:?}, dataset has {:?}",
                m.card.lr_image, ds.manifest.lr_image
            )));
        }
    }
    let dataset = dataset_name(ds);
    let mut rows = Vec::new();
    let mut baseline = Vec::new();
    for name in names {
        let seq = ds.load_sequence(name)?;
        baseline.push(score_sequence(Predictor::Bilinear, &seq, norm)?);
        for (label, m) in models {
            rows.push(ReportRow {
                dataset: dataset.clone(),
                loss_config: label.clone(),
                score: score_sequence(Predictor::Model(m), &seq, norm)?,
            });
        }
    }
    write(&out.join("report.csv"), format_report(&rows))?;
    let base_rows: Vec<ReportRow> = baseline
        .iter()
        .map(|s| ReportRow {
            dataset: dataset.clone(),
            loss_config: "bilinear".into(),
            score: s.clone(),
        })
        .collect();
    write(&out.join("baseline.csv"), format_report(&base_rows))?;
    write(&out.join("summary.txt"), summary(&rows, &baseline))?;
    Ok(EvalReport { rows, baseline })
}

/// Per-config means, sorted by PSNR for the logged ranking.
pub fn summary(rows: &[ReportRow], baseline: &[SequenceScore]) -> String {
    let mut configs: Vec<&str> = Vec::new();
    for r in rows {
        if !configs.contains(&r.loss_config.as_str()) {
            configs.push(&r.loss_config);
        }
    }
    let mean = |xs: &[&SequenceScore]| -> (f64, f64) {
        let n = xs.len().max(1) as f64;
        (xs.iter().map(|s| s.psnr_db).sum::<f64>() / n, xs.iter().map(|s| s.vmse_m2).sum::<f64>() / n)
    };
    let mut table: Vec<(String, f64, f64)> = configs
        .iter()
        .map(|c| {
            let xs: Vec<&SequenceScore> = rows.iter().filter(|r| r.loss_config == *c).map(|r| &r.score).collect();
            let (p, v) = mean(&xs);
            (c.to_string(), p, v)
        })
        .collect();
    let (bp, bv) = mean(&baseline.iter().collect::<Vec<_>>());
    table.push(("bilinear".into(), bp, bv));
    table.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut s = String::from("loss_config            psnr_db    vmse_m2\n");
    for (c, p, v) in table {
        let _ = writeln!(s, "{c:<20} {:>9} {v:>10.3e}", fmt_psnr(p));
    }
    s
}
