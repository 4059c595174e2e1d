//! Training losses over a window of `n + 1` frames. Predictions and targets
//! for a window batch are stacked frame-major: batch row `k·B + b` holds
//! frame `k` of window `b`.

use clothsr_core::geom_image::ChannelAffine;
use clothsr_tensor::{Graph, Scalar, Var};

use crate::config::LossWeights;
use crate::error::{NetError, Result};
use crate::model::Prediction;

/// Displacement, normal and velocity images for a stacked window batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Targets {
    pub d: Var,
    pub n: Var,
    pub v: Var,
}

impl From<&Prediction> for Targets {
    fn from(p: &Prediction) -> Self {
        Targets { d: p.d, n: p.n, v: p.v }
    }
}

/// What the kinematic term needs besides the images.
#[derive(Debug, Clone, PartialEq)]
pub struct KineContext {
    /// Base-frame rotation of each window, row-major.
    pub rotations: Vec<[f64; 9]>,
    pub frame_dt: f64,
    /// Affines of the displacement and velocity channels.
    pub d_norm: ChannelAffine,
    pub v_norm: ChannelAffine,
}

pub fn loss_d<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    Ok(g.mse(pred, target)?)
}

pub fn loss_n<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    Ok(g.mse(pred, target)?)
}

pub fn loss_v<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    Ok(g.mse(pred, target)?)
}

fn denormalize<T: Scalar>(g: &mut Graph<T>, x: Var, norm: &ChannelAffine) -> Result<Var> {
    if norm.channels() != 3 {
        return Err(NetError::Precondition("kinematic affines need 3 channels".into()));
    }
    let scale: Vec<T> = (0..3).map(|c| T::from_f64(norm.scale(c))).collect();
    let offset: Vec<T> = norm.min.iter().map(|&m| T::from_f64(m)).collect();
    Ok(g.affine_channels(x, &scale, &offset)?)
}

/// `Σ_k mean ‖R⁻¹(d_k − d_0 − Δt·(v_1 + … + v_k))‖²` in physical units,
/// averaged over windows. With backward-difference velocities this
/// vanishes on simulated data.
pub fn loss_kine<T: Scalar>(g: &mut Graph<T>, d: Var, v: Var, frames: usize, ctx: &KineContext) -> Result<Var> {
    let [rows, c, _, _] = g.value(d).dims4("loss_kine displacement")?;
    if g.shape(v) != g.shape(d) || c != 3 {
        return Err(NetError::Precondition("displacement and velocity must both be [N,3,H,W]".into()));
    }
    let batch = ctx.rotations.len();
    if frames < 2 || batch == 0 || rows != frames * batch {
        return Err(NetError::Precondition(format!(
            "kinematic loss needs {frames} frames × {batch} windows (at least 2 frames), got {rows} rows"
        )));
    }
    let d = denormalize(g, d, &ctx.d_norm)?;
    let v = denormalize(g, v, &ctx.v_norm)?;
    let inv: Vec<Vec<T>> = ctx
        .rotations
        .iter()
        .map(|r| (0..9).map(|k| T::from_f64(r[(k % 3) * 3 + k / 3])).collect())
        .collect();
    let dt = T::from_f64(ctx.frame_dt);
    let per_window = T::from_f64(1.0 / batch as f64);
    let d0 = g.slice_batch(d, 0, batch)?;
    let mut vsum: Option<Var> = None;
    let mut total: Option<Var> = None;
    for k in 1..frames {
        let vk = g.slice_batch(v, k * batch, batch)?;
        let s = match vsum {
            None => vk,
            Some(s) => g.add(s, vk)?,
        };
        vsum = Some(s);
        let dk = g.slice_batch(d, k * batch, batch)?;
        let delta = g.sub(dk, d0)?;
        let step = g.scale(s, dt);
        let r = g.sub(delta, step)?;
        for (b, m) in inv.iter().enumerate() {
            let rb = if batch == 1 { r } else { g.slice_batch(r, b, 1)? };
            let world = g.mix_channels(rb, m, 3)?;
            let ms = g.mean_square(world);
            let term = g.scale(ms, per_window);
            total = Some(match total {
                None => term,
                Some(t) => g.add(t, term)?,
            });
        }
    }
    Ok(total.expect("at least one frame pair"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub d: Var,
    pub n: Var,
    pub v: Var,
    pub kine: Var,
    pub total: Var,
}

/// All four terms plus their weighted sum. Terms with zero weight are
/// still evaluated for logging but kept out of the sum, so no gradient
/// reaches them.
pub fn loss_all<T: Scalar>(
    g: &mut Graph<T>,
    pred: &Prediction,
    target: &Targets,
    frames: usize,
    ctx: &KineContext,
    w: &LossWeights,
) -> Result<LossTerms> {
    let d = loss_d(g, pred.d, target.d)?;
    let n = loss_n(g, pred.n, target.n)?;
    let v = loss_v(g, pred.v, target.v)?;
    let kine = loss_kine(g, pred.d, pred.v, frames, ctx)?;
    let mut total: Option<Var> = None;
    for (term, weight) in [(d, w.w_d), (n, w.w_n), (v, w.w_v), (kine, w.w_kine)] {
        if weight == 0.0 {
            continue;
        }
        let t = g.scale(term, T::from_f64(weight));
        total = Some(match total {
            None => t,
            Some(acc) => g.add(acc, t)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.scale(d, T::zero()),
    };
    Ok(LossTerms { d, n, v, kine, total })
}

/// The weighted combination on plain numbers, `[L_d, L_n, L_v, L_kine]`.
pub fn combine(components: [f64; 4], w: &LossWeights) -> f64 {
    w.w_d * components[0] + w.w_n * components[1] + w.w_v * components[2] + w.w_kine * components[3]
}
