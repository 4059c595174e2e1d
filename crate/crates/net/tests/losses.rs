use clothsr_core::geom_image::{fit_normalization, mesh_to_image_raw, pad, rigid_align, ChannelAffine, SamplingMap};
use clothsr_core::scene::SceneConfig;
use clothsr_core::track::simulate_lr;
use clothsr_net::diagnostics::mfsr_gradient_check;
use clothsr_net::loss::{loss_d, loss_kine, KineContext};
use clothsr_net::model::images_to_tensor;
use clothsr_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 3;

/// Normalized, padded d and v tensors for every window of a simulated
/// coarse sequence, each under its base frame's rigid transform.
fn simulated_windows() -> Vec<(Tensor<f64>, Tensor<f64>, KineContext)> {
    let scene = SceneConfig::draping(3, 9);
    let run = simulate_lr(&scene).unwrap();
    let rest = &run.mesh;
    let map = SamplingMap::build(rest, 24, 24).unwrap();
    let dt = scene.frame_dt();
    let mut out = Vec::new();
    for base in 1..run.frames.len() - N {
        let xf = rigid_align(&run.frames[base], &rest.rest_positions).unwrap();
        let raws: Vec<_> = (base..=base + N)
            .map(|k| mesh_to_image_raw(&run.frames[k], Some(&run.frames[k - 1]), rest, &map, &xf, dt).unwrap())
            .collect();
        let norm = fit_normalization(&raws).unwrap();
        let imgs: Vec<_> = raws.iter().map(|r| pad(&r.normalized(&norm).unwrap()).unwrap()).collect();
        let refs: Vec<_> = imgs.iter().collect();
        let d = images_to_tensor(&refs, 0..3).unwrap();
        let v = images_to_tensor(&refs, 6..9).unwrap();
        let r = xf.rotation;
        let ctx = KineContext {
            rotations: vec![std::array::from_fn(|k| r[(k / 3, k % 3)])],
            frame_dt: dt,
            d_norm: norm.slice(0..3),
            v_norm: norm.slice(6..9),
        };
        out.push((d, v, ctx));
    }
    out
}

fn kine(d: &Tensor<f64>, v: &Tensor<f64>, ctx: &KineContext) -> f64 {
    let mut g = Graph::<f64>::new();
    let (dv, vv) = (g.input(d.clone()), g.input(v.clone()));
    let l = loss_kine(&mut g, dv, vv, N + 1, ctx).unwrap();
    g.value(l).item()
}

#[test]
fn kinematic_loss_vanishes_on_simulated_windows() {
    let windows = simulated_windows();
    assert!(windows.len() >= 4);
    for (d, v, ctx) in &windows {
        let l = kine(d, v, ctx);
        assert!(l < 1e-10, "{l:e}");
        // the data must move, or the check is empty
        assert!(v.data.iter().zip(&v.data[1..]).any(|(a, b)| a != b));
    }
}

#[test]
fn kinematic_loss_quadratic_in_velocity_error() {
    let (d, v, ctx) = simulated_windows().swap_remove(0);
    let base = kine(&d, &v, &ctx);
    let plane = d.len() / (N + 1) / 3;
    let frame = 2;
    for delta in [1e-3, 1e-2, 1e-1] {
        let mut bad = v.clone();
        // add delta metres/second to the x velocity of one frame
        let off = (frame * 3) * plane;
        for x in &mut bad.data[off..off + plane] {
            *x += delta / ctx.v_norm.scale(0);
        }
        // frames frame..=N each pick up delta·Δt in one of three channels
        let want = (N - frame + 1) as f64 * (delta * ctx.frame_dt).powi(2) / 3.0;
        let got = kine(&d, &bad, &ctx) - base;
        assert!((got / want - 1.0).abs() < 1e-3, "{got:e} vs {want:e}");
    }
}

#[test]
fn kinematic_loss_static_scene_and_errors() {
    let ctx = KineContext {
        rotations: vec![[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]],
        frame_dt: 0.04,
        d_norm: ChannelAffine { min: vec![-1.0; 3], max: vec![1.0; 3] },
        v_norm: ChannelAffine { min: vec![-2.0; 3], max: vec![2.0; 3] },
    };
    let d = Tensor::full(&[N + 1, 3, 4, 4], 0.3);
    // normalized 0.5 is physical zero velocity
    let v = Tensor::full(&[N + 1, 3, 4, 4], 0.5);
    assert_eq!(kine(&d, &v, &ctx), 0.0);
    let mut g = Graph::<f64>::new();
    let short = g.input(Tensor::zeros(&[2, 3, 4, 4]));
    assert!(loss_kine(&mut g, short, short, N + 1, &ctx).is_err());
}

#[test]
fn reconstruction_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::new(vec![2, 3, 5, 4], (0..120).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let shifted = a.map(|x| x + 0.1);
    let mut g = Graph::<f64>::new();
    let (av, sv) = (g.input(a.clone()), g.input(shifted));
    let zero = loss_d(&mut g, av, av).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
    let off = loss_d(&mut g, av, sv).unwrap();
    assert!((g.value(off).item() - 0.01).abs() < 1e-12);

    let b = Tensor::new(a.shape.clone(), (0..120).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let bv = g.input(b.clone());
    let l = loss_d(&mut g, av, bv).unwrap();
    let direct = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 120.0;
    assert!((g.value(l).item() - direct).abs() < 1e-7);

    let odd = g.input(Tensor::zeros(&[2, 3, 5, 5]));
    assert!(loss_d(&mut g, av, odd).is_err());
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let rep = mfsr_gradient_check(seed, 6, 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-4, "seed {seed}: {rep:?}");
        worst = worst.max(rep.max_rel_error);
    }
    eprintln!("worst relative error {worst:e}");
}
