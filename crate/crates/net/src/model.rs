use clothsr_core::geom_image::FeatureImage;
use clothsr_tensor::{Checkpoint, Graph, Padding, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::NetConfig;
use crate::error::{NetError, Result};

/// Smallest LR input side the trunk accepts.
pub const MIN_INPUT_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn is_bias(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn fan_in(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

fn conv_specs(out: &mut Vec<ParamSpec>, name: &str, cout: usize, cin: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{name}.w"),
        shape: vec![cout, cin, k, k],
    });
    out.push(ParamSpec {
        name: format!("{name}.b"),
        shape: vec![cout],
    });
}

/// Every parameter tensor in the order [`forward`] consumes them.
pub fn param_specs(cfg: &NetConfig) -> Vec<ParamSpec> {
    let g0 = cfg.base_channels;
    let mut s = Vec::new();
    conv_specs(&mut s, "sfe1", g0, cfg.in_channels, 3);
    conv_specs(&mut s, "sfe2", g0, g0, 3);
    for b in 0..cfg.num_rdb {
        for j in 0..cfg.layers_per_rdb {
            conv_specs(&mut s, &format!("rdb{b}.conv{j}"), cfg.growth, cfg.dense_in(j), 3);
        }
        conv_specs(&mut s, &format!("rdb{b}.fuse"), g0, cfg.dense_in(cfg.layers_per_rdb), 1);
    }
    conv_specs(&mut s, "gff1", g0, cfg.num_rdb * g0, 1);
    conv_specs(&mut s, "gff2", g0, g0, 3);
    for h in ["head_d", "head_n", "head_v"] {
        conv_specs(&mut s, h, cfg.head_out_channels, g0, 3);
    }
    s
}

/// Network weights in `f32`, in [`param_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mfsr {
    pub cfg: NetConfig,
    pub specs: Vec<ParamSpec>,
    pub params: Vec<Tensor<f32>>,
}

/// He-normal weights (`σ² = 2/fan_in`), zero biases.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<Mfsr> {
    cfg.validate()?;
    let specs = param_specs(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = specs
        .iter()
        .map(|s| {
            if s.is_bias() {
                return Tensor::zeros(&s.shape);
            }
            let normal = Normal::new(0.0, (2.0 / s.fan_in() as f64).sqrt()).expect("positive sigma");
            let n = s.shape.iter().product();
            Tensor {
                shape: s.shape.clone(),
                data: (0..n).map(|_| normal.sample(&mut rng) as f32).collect(),
            }
        })
        .collect();
    Ok(Mfsr {
        cfg: cfg.clone(),
        specs,
        params,
    })
}

impl Mfsr {
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Records every parameter on `g`, as trainable leaves or constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let t = p.cast();
                if trainable {
                    g.param(t)
                } else {
                    g.input(t)
                }
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            params: self.params.clone(),
            optimizer: None,
            norms: Vec::new(),
        }
    }

    /// Rebuilds the model from `ck`, checking every tensor against `cfg`.
    pub fn from_checkpoint(cfg: &NetConfig, ck: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        if ck.params.len() != specs.len() {
            return Err(NetError::Precondition(format!(
                "checkpoint has {} tensors, config needs {}",
                ck.params.len(),
                specs.len()
            )));
        }
        for ((s, name), p) in specs.iter().zip(&ck.names).zip(&ck.params) {
            if &s.name != name || s.shape != p.shape {
                return Err(NetError::Precondition(format!(
                    "checkpoint tensor {name} {:?} does not match config tensor {} {:?}",
                    p.shape, s.name, s.shape
                )));
            }
        }
        Ok(Mfsr {
            cfg: cfg.clone(),
            specs,
            params: ck.params.clone(),
        })
    }
}

/// Head outputs `[N,3,4H,4W]` plus the pre-upsampling trunk features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub d: Var,
    pub n: Var,
    pub v: Var,
    pub trunk: Var,
}

struct Cursor<'a> {
    params: &'a [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn conv<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (w, b) = (self.params[self.pos], self.params[self.pos + 1]);
        self.pos += 2;
        Ok(g.conv2d(x, w, Some(b), Padding::Same)?)
    }
}

/// Number of parameter tensors in one residual dense block.
pub fn rdb_param_count(cfg: &NetConfig) -> usize {
    2 * cfg.layers_per_rdb + 2
}

/// Residual dense block: densely connected conv+ReLU layers, a 1×1
/// fusion back to the block width and a local residual.
pub fn rdb_forward<T: Scalar>(g: &mut Graph<T>, block: &[Var], cfg: &NetConfig, x: Var) -> Result<Var> {
    if block.len() != rdb_param_count(cfg) {
        return Err(NetError::Precondition(format!(
            "block needs {} parameter tensors, got {}",
            rdb_param_count(cfg),
            block.len()
        )));
    }
    let c = g.shape(x).get(1).copied().unwrap_or(0);
    if c != cfg.base_channels {
        return Err(NetError::Precondition(format!(
            "block input has {c} channels, block width is {}",
            cfg.base_channels
        )));
    }
    let mut cur = Cursor { params: block, pos: 0 };
    let mut feats = vec![x];
    for _ in 0..cfg.layers_per_rdb {
        let inp = if feats.len() == 1 { x } else { g.concat_channels(&feats)? };
        let y = cur.conv(g, inp)?;
        feats.push(g.relu(y));
    }
    let all = g.concat_channels(&feats)?;
    let fused = cur.conv(g, all)?;
    Ok(g.add(fused, x)?)
}

/// One pass over an LR batch `[N,9,H,W]`.
pub fn forward<T: Scalar>(g: &mut Graph<T>, params: &[Var], cfg: &NetConfig, x: Var) -> Result<Prediction> {
    let expected = param_specs(cfg).len();
    if params.len() != expected {
        return Err(NetError::Precondition(format!("{} parameters bound, network needs {expected}", params.len())));
    }
    let [_, c, h, w] = g.value(x).dims4("mfsr input")?;
    if c != cfg.in_channels {
        return Err(NetError::Precondition(format!("input has {c} channels, network expects {}", cfg.in_channels)));
    }
    if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
        return Err(NetError::Precondition(format!("input {h}×{w} is below the {MIN_INPUT_SIDE}×{MIN_INPUT_SIDE} minimum")));
    }
    let mut cur = Cursor { params, pos: 0 };
    let f_shallow = cur.conv(g, x)?;
    let mut f = cur.conv(g, f_shallow)?;
    let mut outs = Vec::with_capacity(cfg.num_rdb);
    let per = rdb_param_count(cfg);
    for _ in 0..cfg.num_rdb {
        f = rdb_forward(g, &params[cur.pos..cur.pos + per], cfg, f)?;
        cur.pos += per;
        outs.push(f);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat_channels(&outs)? };
    let fused = cur.conv(g, cat)?;
    let fused = cur.conv(g, fused)?;
    let trunk = g.add(fused, f_shallow)?;
    let up = g.upsample_bilinear(trunk, cfg.scale)?;
    let d = cur.conv(g, up)?;
    let n = cur.conv(g, up)?;
    let v = cur.conv(g, up)?;
    Ok(Prediction { d, n, v, trunk })
}

/// Stacks `channels` of each image into an NCHW batch.
pub fn images_to_tensor<T: Scalar>(images: &[&FeatureImage], channels: std::ops::Range<usize>) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(NetError::Precondition("empty image batch".into()));
    };
    let (w, h, c) = (first.width, first.height, channels.len());
    let mut data = Vec::with_capacity(images.len() * c * w * h);
    for img in images {
        if img.width != w || img.height != h || channels.end > img.channels {
            return Err(NetError::Precondition("images in a batch must share dimensions".into()));
        }
        for ch in channels.clone() {
            data.extend(img.data.chunks_exact(img.channels).map(|px| T::from_f64(px[ch])));
        }
    }
    Ok(Tensor::new(vec![images.len(), c, h, w], data)?)
}

/// Sample `n` of an NCHW batch as an all-valid image.
pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<FeatureImage> {
    let [nb, c, h, w] = t.dims4("tensor_to_image")?;
    if n >= nb {
        return Err(NetError::Precondition(format!("sample {n} out of a batch of {nb}")));
    }
    let mut img = FeatureImage::zeros(w, h, c);
    let plane = h * w;
    for ch in 0..c {
        let src = &t.data[(n * c + ch) * plane..(n * c + ch + 1) * plane];
        for (k, &x) in src.iter().enumerate() {
            img.data[k * c + ch] = x.as_f64();
        }
    }
    img.valid.iter_mut().for_each(|v| *v = true);
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_tensor_round_trip() {
        let mut img = FeatureImage::zeros(3, 2, 9);
        for (i, x) in img.data.iter_mut().enumerate() {
            *x = i as f64;
        }
        img.valid.iter_mut().for_each(|v| *v = true);
        let t: Tensor<f64> = images_to_tensor(&[&img, &img], 0..9).unwrap();
        assert_eq!(t.shape, vec![2, 9, 2, 3]);
        // channel 1 plane holds pixel-major index ×9 + 1
        assert_eq!(&t.data[6..12], &[1.0, 10.0, 19.0, 28.0, 37.0, 46.0]);
        assert_eq!(tensor_to_image(&t, 1).unwrap(), img);
        let d: Tensor<f64> = images_to_tensor(&[&img], 6..9).unwrap();
        assert_eq!(d.data[0], 6.0);
    }

    #[test]
    fn checkpoint_validation() {
        let cfg = NetConfig::toy();
        let m = init_params(&cfg, 3).unwrap();
        let ck = m.to_checkpoint();
        assert_eq!(Mfsr::from_checkpoint(&cfg, &ck).unwrap(), m);
        let other = NetConfig { growth: 4, ..cfg };
        assert!(Mfsr::from_checkpoint(&other, &ck).is_err());
    }
}
