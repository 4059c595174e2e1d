use clothsr_tensor::gradcheck::check_gradients;
use clothsr_tensor::{Graph, Padding, Result, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks never fall inside the stencil.
fn random_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = random(rng, shape);
    for x in &mut t.data {
        if x.abs() < 0.1 {
            *x = 0.1_f64.copysign(*x) + *x;
        }
    }
    t
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Tensor<f64> {
    let [n, c, h, wd] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let [k, _, kh, kw] = [w.shape[0], w.shape[1], w.shape[2], w.shape[3]];
    let ho = h + 2 * pad + 1 - kh;
    let wo = wd + 2 * pad + 1 - kw;
    let mut out = Tensor::zeros(&[n, k, ho, wo]);
    for bi in 0..n {
        for ko in 0..k {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b[ko];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = oy as isize + ki as isize - pad as isize;
                                let ix = ox as isize + kj as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((bi * c + ci) * h + iy as usize) * wd + ix as usize];
                                s += xv * w.data[((ko * c + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out.data[((bi * k + ko) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    out
}

fn run<F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>(inputs: Vec<Tensor<f64>>, f: F) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.into_iter().map(|t| g.input(t)).collect();
    let out = f(&mut g, &vars).unwrap();
    g.value(out).clone()
}

#[test]
fn conv_matches_loop_nest() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, pad, padding) in [(3, 1, Padding::Same), (3, 0, Padding::Valid), (1, 0, Padding::Same)] {
        let x = random(&mut rng, &[2, 3, 6, 5]);
        let w = random(&mut rng, &[4, 3, k, k]);
        let b = random(&mut rng, &[4]);
        let want = naive_conv(&x, &w, &b.data, pad);
        let got = run(vec![x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), padding));
        assert_eq!(got.shape, want.shape);
        for (a, e) in got.data.iter().zip(&want.data) {
            assert!((a - e).abs() <= 1e-5 * e.abs().max(1.0));
        }
    }
}

#[test]
fn conv_identity_and_box_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[1, 3, 4, 4]);
    let mut w = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        w.data[c * 3 + c] = 1.0;
    }
    let out = run(vec![x.clone(), w, Tensor::zeros(&[3])], |g, v| g.conv2d(v[0], v[1], Some(v[2]), Padding::Same));
    assert_eq!(out, x);

    let ones = Tensor::full(&[1, 1, 5, 5], 1.0);
    let k = Tensor::full(&[1, 1, 3, 3], 1.0);
    let out = run(vec![ones, k], |g, v| g.conv2d(v[0], v[1], None, Padding::Same));
    for y in 1..4 {
        for x in 1..4 {
            assert_eq!(out.data[y * 5 + x], 9.0);
        }
    }
    assert_eq!(out.data[0], 4.0);
}

#[test]
fn conv_shape_errors_name_dimension() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::zeros(&[1, 3, 4, 4]));
    let w = g.input(Tensor::zeros(&[2, 4, 3, 3]));
    match g.conv2d(x, w, None, Padding::Same) {
        Err(TensorError::Shape { detail, .. }) => assert!(detail.contains("channels"), "{detail}"),
        other => panic!("unexpected {other:?}"),
    }
    let b = g.input(Tensor::zeros(&[3]));
    let w2 = g.input(Tensor::zeros(&[2, 3, 3, 3]));
    assert!(g.conv2d(x, w2, Some(b), Padding::Same).is_err());
}

#[test]
fn small_ops_contracts() {
    let r = run(vec![Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap()], |g, v| Ok(g.relu(v[0])));
    assert_eq!(r.data, vec![0.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 4, 3, 3]);
    let m = run(vec![x.clone()], |g, v| g.mse(v[0], v[0]));
    assert_eq!(m.item(), 0.0);
    let a = random(&mut rng, &[1, 32, 2, 2]);
    let b = random(&mut rng, &[1, 32, 2, 2]);
    let c = run(vec![a.clone(), b.clone()], |g, v| g.concat_channels(&[v[0], v[1]]));
    assert_eq!(c.shape, vec![1, 64, 2, 2]);
    assert_eq!(&c.data[..128], &a.data[..]);
    assert_eq!(&c.data[128..], &b.data[..]);
    let mut g = Graph::<f64>::new();
    let p = g.input(Tensor::zeros(&[1, 2, 2, 2]));
    let q = g.input(Tensor::zeros(&[1, 2, 3, 2]));
    assert!(g.add(p, q).is_err());
    assert!(g.concat_channels(&[p, q]).is_err());
}

#[test]
fn upsample_constant_and_ramp() {
    let c = run(vec![Tensor::full(&[1, 2, 3, 4], 0.7)], |g, v| g.upsample_bilinear(v[0], 4));
    assert_eq!(c.shape, vec![1, 2, 12, 16]);
    assert!(c.data.iter().all(|&x| (x - 0.7).abs() < 1e-12));

    let w = 6;
    let ramp = Tensor::new(vec![1, 1, 2, w], (0..2 * w).map(|i| (i % w) as f64).collect()).unwrap();
    let up = run(vec![ramp], |g, v| g.upsample_bilinear(v[0], 4));
    // interior outputs lie on the ramp x_in = (o + 0.5)/4 − 0.5
    for o in 2..4 * w - 2 {
        let want = (o as f64 + 0.5) / 4.0 - 0.5;
        assert!((up.data[o] - want).abs() < 1e-6);
    }
}

#[test]
fn upsample_two_by_two_closed_form() {
    let a = [0.3, -1.2, 2.0, 0.5];
    let up = run(vec![Tensor::new(vec![1, 1, 2, 2], a.to_vec()).unwrap()], |g, v| g.upsample_bilinear(v[0], 4));
    assert_eq!(up.shape, vec![1, 1, 8, 8]);
    for oy in 0..8 {
        for ox in 0..8 {
            let fy = ((oy as f64 + 0.5) / 4.0 - 0.5).clamp(0.0, 1.0);
            let fx = ((ox as f64 + 0.5) / 4.0 - 0.5).clamp(0.0, 1.0);
            let want = a[0] * (1.0 - fx) * (1.0 - fy) + a[1] * fx * (1.0 - fy) + a[2] * (1.0 - fx) * fy + a[3] * fx * fy;
            assert!((up.data[oy * 8 + ox] - want).abs() < 1e-12);
        }
    }
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(g.upsample_bilinear(x, 1).is_err());
}

#[test]
fn backward_contracts() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    assert!(matches!(g.backward(s), Err(TensorError::BackwardTwice)));

    // mse(w·x, y) on scalars: d/dw = 2x(wx − y)
    let (w0, x0, y0) = (0.7, 1.5, -0.4);
    let mut g = Graph::<f64>::new();
    let w = g.param(Tensor::new(vec![1], vec![w0]).unwrap());
    let wx = g.scale(w, x0);
    let y = g.input(Tensor::new(vec![1], vec![y0]).unwrap());
    let l = g.mse(wx, y).unwrap();
    g.backward(l).unwrap();
    assert!((g.grad(w).unwrap()[0] - 2.0 * x0 * (w0 * x0 - y0)).abs() < 1e-12);

    let mut g = Graph::<f64>::new();
    let v = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(v), Err(TensorError::NotScalar(_))));
}

fn grad_suite(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Copy) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut inputs = make(&mut rng);
        // loss against a random target so every output entry matters
        let out = run(inputs.clone(), f);
        let target = random(&mut rng, &out.shape);
        inputs.push(target);
        let rep = check_gradients(&inputs, 64, STEP, |g, v| {
            let y = f(g, &v[..v.len() - 1])?;
            g.mse(y, v[v.len() - 1])
        })
        .unwrap();
        assert!(rep.max_rel_error < TOL, "{name} seed {seed}: {rep:?}");
    }
}

#[test]
fn grad_conv_same() {
    grad_suite(
        "conv3x3 same",
        |r| vec![random(r, &[2, 3, 5, 4]), random(r, &[4, 3, 3, 3]), random(r, &[4])],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), Padding::Same),
    );
}

#[test]
fn grad_conv_valid_and_pointwise() {
    grad_suite(
        "conv3x3 valid",
        |r| vec![random(r, &[1, 2, 5, 6]), random(r, &[3, 2, 3, 3])],
        |g, v| g.conv2d(v[0], v[1], None, Padding::Valid),
    );
    grad_suite(
        "conv1x1",
        |r| vec![random(r, &[2, 5, 3, 3]), random(r, &[2, 5, 1, 1]), random(r, &[2])],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), Padding::Same),
    );
}

#[test]
fn grad_elementwise() {
    grad_suite("relu", |r| vec![random_nonzero(r, &[2, 3, 4, 4])], |g, v| Ok(g.relu(v[0])));
    grad_suite("add", |r| vec![random(r, &[2, 3, 2, 2]), random(r, &[2, 3, 2, 2])], |g, v| g.add(v[0], v[1]));
    grad_suite("sub", |r| vec![random(r, &[2, 3, 2, 2]), random(r, &[2, 3, 2, 2])], |g, v| g.sub(v[0], v[1]));
    grad_suite("scale", |r| vec![random(r, &[3, 4])], |g, v| Ok(g.scale(v[0], -2.5)));
}

#[test]
fn grad_structural() {
    grad_suite(
        "concat",
        |r| vec![random(r, &[2, 2, 3, 3]), random(r, &[2, 3, 3, 3])],
        |g, v| g.concat_channels(&[v[0], v[1], v[0]]),
    );
    grad_suite("slice_channels", |r| vec![random(r, &[2, 9, 3, 2])], |g, v| g.slice_channels(v[0], 3, 3));
    grad_suite("slice_batch", |r| vec![random(r, &[4, 2, 3, 2])], |g, v| g.slice_batch(v[0], 1, 2));
    grad_suite("upsample x4", |r| vec![random(r, &[1, 2, 3, 4])], |g, v| g.upsample_bilinear(v[0], 4));
    grad_suite("upsample x2", |r| vec![random(r, &[2, 1, 2, 3])], |g, v| g.upsample_bilinear(v[0], 2));
}

#[test]
fn grad_channel_maps() {
    grad_suite(
        "affine",
        |r| vec![random(r, &[2, 3, 2, 2])],
        |g, v| g.affine_channels(v[0], &[0.5, -2.0, 3.0], &[1.0, 0.0, -0.3]),
    );
    grad_suite(
        "mix",
        |r| vec![random(r, &[2, 3, 2, 3])],
        |g, v| g.mix_channels(v[0], &[0.1, 0.2, 0.3, -1.0, 0.5, 0.0, 0.7, -0.7, 2.0], 3),
    );
}

#[test]
fn grad_reductions() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let a = random(&mut rng, &[2, 3, 2, 2]);
        let b = random(&mut rng, &[2, 3, 2, 2]);
        let inputs = [a, b];
        let checks: [(&str, fn(&mut Graph<f64>, &[Var]) -> Result<Var>); 4] = [
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
        for (name, f) in checks {
            let rep = check_gradients(&inputs, 64, STEP, f).unwrap();
            assert!(rep.max_rel_error < TOL, "{name} seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Tensor<f32> = random(&mut rng, &[2, 4, 9, 7]).cast();
    let w: Tensor<f32> = random(&mut rng, &[8, 4, 3, 3]).cast();
    let eval = || {
        let mut g = Graph::<f32>::new();
        let xv = g.input(x.clone());
        let wv = g.input(w.clone());
        let y = g.conv2d(xv, wv, None, Padding::Same).unwrap();
        let u = g.upsample_bilinear(y, 4).unwrap();
        g.value(u).data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(eval(), eval());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, 2, 5, 5]);
        let y = random(&mut rng, &[1, 2, 5, 5]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let conv = |t: Tensor<f64>| run(vec![t, w.clone()], |g, v| g.conv2d(v[0], v[1], None, Padding::Same));
        let mix = Tensor::new(x.shape.clone(), x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv(mix);
        let (cx, cy) = (conv(x), conv(y));
        for i in 0..lhs.len() {
            let rhs = a * cx.data[i] + b * cy.data[i];
            prop_assert!((lhs.data[i] - rhs).abs() <= 1e-5 * rhs.abs().max(1.0));
        }
    }
}
