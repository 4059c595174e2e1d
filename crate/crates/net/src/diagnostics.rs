//! Finite-difference checks of every tape primitive and of the whole
//! network plus the combined loss, shared by the test suites.

use clothsr_core::geom_image::ChannelAffine;
use clothsr_tensor::gradcheck::{check_gradients, GradCheck};
use clothsr_tensor::{Graph, Padding, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LossWeights, NetConfig};
use crate::error::Result;
use crate::loss::{loss_all, KineContext, Targets};
use crate::model::{forward, init_params};

/// Smallest network that still has every kind of layer.
pub fn gradcheck_config() -> NetConfig {
    NetConfig {
        num_rdb: 2,
        layers_per_rdb: 2,
        growth: 4,
        base_channels: 4,
        ..NetConfig::default()
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 9] {
    // Gram-Schmidt on two random vectors
    let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let dot = |x: &[f64; 3], y: &[f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let na = dot(&a, &a).sqrt();
    let e1 = a.map(|x| x / na);
    let p = dot(&b, &e1);
    let b2: [f64; 3] = std::array::from_fn(|i| b[i] - p * e1[i]);
    let nb = dot(&b2, &b2).sqrt();
    let e2 = b2.map(|x| x / nb);
    let e3 = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    [e1[0], e1[1], e1[2], e2[0], e2[1], e2[2], e3[0], e3[1], e3[2]]
}

fn random_affine(rng: &mut ChaCha8Rng) -> ChannelAffine {
    let min: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..0.0)).collect();
    let max = min.iter().map(|m| m + rng.random_range(0.2..2.0)).collect();
    ChannelAffine { min, max }
}

/// Central differences (step `h`) of `loss_all ∘ forward` with respect to
/// every parameter tensor and the LR input, on random data for `seed`.
pub fn mfsr_gradient_check(seed: u64, probes_per_tensor: usize, h: f64) -> Result<GradCheck> {
    let cfg = gradcheck_config();
    let weights = LossWeights::default();
    let frames = weights.window_n + 1;
    let model = init_params(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let side = 8;
    let rnd = |rng: &mut ChaCha8Rng, shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).expect("shape")
    };
    let mut inputs: Vec<Tensor<f64>> = model.params.iter().map(|p| p.cast()).collect();
    // small random biases so every bias enters through a non-trivial value
    for (s, t) in model.specs.iter().zip(&mut inputs) {
        if s.is_bias() {
            t.data.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    inputs.push(rnd(&mut rng, &[frames, 9, side, side]));
    let hr = [frames, 3, 4 * side, 4 * side];
    let targets = [rnd(&mut rng, &hr), rnd(&mut rng, &hr), rnd(&mut rng, &hr)];
    let ctx = KineContext {
        rotations: vec![random_rotation(&mut rng)],
        frame_dt: 1.0 / 24.0,
        d_norm: random_affine(&mut rng),
        v_norm: random_affine(&mut rng),
    };
    let np = model.params.len();
    let report = check_gradients(&inputs, probes_per_tensor, h, |g: &mut Graph<f64>, v| {
        let pred = forward(g, &v[..np], &cfg, v[np]).map_err(to_tensor_err)?;
        let t = Targets {
            d: g.input(targets[0].clone()),
            n: g.input(targets[1].clone()),
            v: g.input(targets[2].clone()),
        };
        let terms = loss_all(g, &pred, &t, frames, &ctx, &weights).map_err(to_tensor_err)?;
        Ok(terms.total)
    })?;
    Ok(report)
}

fn to_tensor_err(e: crate::error::NetError) -> clothsr_tensor::TensorError {
    match e {
        crate::error::NetError::Tensor(t) => t,
        other => clothsr_tensor::TensorError::Format(other.to_string()),
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Uniform in ±1 but at least 0.1 away from zero, so no ReLU kink falls
/// inside the difference stencil.
fn uniform_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape);
    for x in &mut t.data {
        if x.abs() < 0.1 {
            *x += 0.1_f64.copysign(*x);
        }
    }
    t
}

type Op = fn(&mut Graph<f64>, &[Var]) -> clothsr_tensor::Result<Var>;

/// `(name, input shapes, op)`; ops with a tensor output are scored through
/// an mse against a random target so every output entry matters.
fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Op, bool)> {
    vec![
        ("conv3x3_same", vec![vec![2, 3, 5, 4], vec![4, 3, 3, 3], vec![4]], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), Padding::Same)
        }, false),
        ("conv3x3_valid", vec![vec![1, 2, 5, 6], vec![3, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1], None, Padding::Valid), false),
        ("conv1x1", vec![vec![2, 5, 3, 3], vec![2, 5, 1, 1], vec![2]], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), Padding::Same)
        }, false),
        ("relu", vec![vec![2, 3, 4, 4]], |g, v| Ok(g.relu(v[0])), true),
        ("add", vec![vec![2, 3, 2, 2], vec![2, 3, 2, 2]], |g, v| g.add(v[0], v[1]), false),
        ("sub", vec![vec![2, 3, 2, 2], vec![2, 3, 2, 2]], |g, v| g.sub(v[0], v[1]), false),
        ("scale", vec![vec![3, 4]], |g, v| Ok(g.scale(v[0], -2.5)), false),
        ("concat_channels", vec![vec![2, 2, 3, 3], vec![2, 3, 3, 3]], |g, v| g.concat_channels(&[v[0], v[1], v[0]]), false),
        ("slice_channels", vec![vec![2, 9, 3, 2]], |g, v| g.slice_channels(v[0], 3, 3), false),
        ("slice_batch", vec![vec![4, 2, 3, 2]], |g, v| g.slice_batch(v[0], 1, 2), false),
        ("upsample_bilinear_x4", vec![vec![1, 2, 3, 4]], |g, v| g.upsample_bilinear(v[0], 4), false),
        ("upsample_bilinear_x2", vec![vec![2, 1, 2, 3]], |g, v| g.upsample_bilinear(v[0], 2), false),
        ("affine_channels", vec![vec![2, 3, 2, 2]], |g, v| {
            g.affine_channels(v[0], &[0.5, -2.0, 3.0], &[1.0, 0.0, -0.3])
        }, false),
        ("mix_channels", vec![vec![2, 3, 2, 3]], |g, v| {
            g.mix_channels(v[0], &[0.1, 0.2, 0.3, -1.0, 0.5, 0.0, 0.7, -0.7, 2.0], 3)
        }, false),
    ]
}

/// Gradient check of every primitive on random inputs for `seed`. The
/// scalar reductions are checked directly.
pub fn primitive_gradient_checks(seed: u64, h: f64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51c3_0e2d);
    let mut out = Vec::new();
    for (name, shapes, op, nonzero) in primitive_cases() {
        let mut inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| if nonzero { uniform_nonzero(&mut rng, s) } else { uniform(&mut rng, s) })
            .collect();
        let shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            let y = op(&mut g, &vars)?;
            g.shape(y).to_vec()
        };
        inputs.push(uniform(&mut rng, &shape));
        let rep = check_gradients(&inputs, 64, h, |g, v| {
            let y = op(g, &v[..v.len() - 1])?;
            g.mse(y, v[v.len() - 1])
        })?;
        out.push((name, rep));
    }
    let pair = [uniform(&mut rng, &[2, 3, 2, 2]), uniform(&mut rng, &[2, 3, 2, 2])];
    let reductions: [(&'static str, Op); 4] = [
        ("mse", |g, v| g.mse(v[0], v[1])),
        ("mean_square", |g, v| Ok(g.mean_square(v[0]))),
        ("sum", |g, v| {
            let y = g.mean_square(v[0]);
            let s = g.sum(v[1]);
            let s2 = g.scale(s, 0.1);
            let t = g.add(y, s2)?;
            Ok(g.sum(t))
        }),
        ("mean", |g, v| {
            let m = g.mean(v[0]);
            let sq = g.mse(v[1], v[0])?;
            let t = g.scale(m, 3.0);
            g.add(t, sq)
        }),
    ];
    for (name, op) in reductions {
        out.push((name, check_gradients(&pair, 64, h, op)?));
    }
    Ok(out)
}
