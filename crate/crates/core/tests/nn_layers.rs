use cellsurrogate::nn::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Straight quadruple loop, zero outside the image.
fn conv_reference(x: &Tensor, k: &Tensor, b: &Tensor, pad: usize) -> Vec<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, ks) = (k.shape()[0], k.shape()[2]);
    let oh = h + 2 * pad + 1 - ks;
    let ow = w + 2 * pad + 1 - ks;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = b.data()[o];
                for c in 0..ci {
                    for dy in 0..ks {
                        for dx in 0..ks {
                            let sy = y as isize + dy as isize - pad as isize;
                            let sx = xx as isize + dx as isize - pad as isize;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            s += x.data()[(c * h + sy as usize) * w + sx as usize]
                                * k.data()[((o * ci + c) * ks + dy) * ks + dx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

#[test]
fn conv_matches_quadruple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (padding, pad) in [(Padding::Valid, 0), (Padding::Same, 1)] {
        let x = random(&mut rng, &[2, 6, 6]);
        let k = random(&mut rng, &[2, 2, 3, 3]);
        let b = random(&mut rng, &[2]);
        let y = conv2d(&x, &k, &b, padding).unwrap();
        let r = conv_reference(&x, &k, &b, pad);
        assert_eq!(y.len(), r.len());
        for (a, e) in y.data().iter().zip(&r) {
            assert!((a - e).abs() < 1e-12);
        }
    }
    // the surrogate's largest layer shape
    let x = random(&mut rng, &[2, 20, 20]);
    let k = random(&mut rng, &[3, 2, 7, 7]);
    let b = random(&mut rng, &[3]);
    let y = conv2d(&x, &k, &b, Padding::Same).unwrap();
    for (a, e) in y.data().iter().zip(&conv_reference(&x, &k, &b, 3)) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn maxpool_matches_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&mut rng, &[2, 9, 9]);
    let p = maxpool3(&x).unwrap();
    for c in 0..2 {
        for py in 0..3 {
            for px in 0..3 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..3 {
                    for dx in 0..3 {
                        best = best.max(x.data()[(c * 9 + py * 3 + dy) * 9 + px * 3 + dx]);
                    }
                }
                assert_eq!(p.output.data()[(c * 3 + py) * 3 + px], best);
            }
        }
    }
}

const INSTANCES: u64 = 50;

fn opts(seed: u64) -> CheckOptions {
    CheckOptions {
        seed,
        ..CheckOptions::default()
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let padding = if seed % 2 == 0 { Padding::Valid } else { Padding::Same };
        let x = random(&mut rng, &[2, 6, 5]);
        let k = random(&mut rng, &[3, 2, 3, 3]);
        let b = random(&mut rng, &[3]);
        let y = conv2d(&x, &k, &b, padding).unwrap();
        let probe = random(&mut rng, y.shape());
        let g = conv2d_backward(&x, &k, &probe, padding).unwrap();
        let f = |t: &[Tensor]| dot(&conv2d(&t[0], &t[1], &t[2], padding).unwrap(), &probe);
        let report = grad_check(
            f,
            &[x, k, b],
            &["input", "kernel", "bias"],
            &[g.input, g.kernel, g.bias],
            opts(seed),
        );
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn pool_gradients_match_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = random(&mut rng, &[2, 7, 9]);
        let p = maxpool3(&x).unwrap();
        let probe = random(&mut rng, p.output.shape());
        let g = maxpool3_backward(&p, &probe).unwrap();
        let f = |t: &[Tensor]| dot(&maxpool3(&t[0]).unwrap().output, &probe);
        let report = grad_check(f, &[x], &["input"], &[g], opts(seed));
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = random(&mut rng, &[8]);
        let w = random(&mut rng, &[5, 8]);
        let b = random(&mut rng, &[5]);
        let probe = random(&mut rng, &[5]);
        let (gx, gw, gb) = dense_backward(&x, &w, &probe).unwrap();
        let f = |t: &[Tensor]| dot(&dense(&t[0], &t[1], &t[2]).unwrap(), &probe);
        let report = grad_check(f, &[x, w, b], &["input", "weight", "bias"], &[gx, gw, gb], opts(seed));
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn activation_gradients_match_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = random(&mut rng, &[16]);
        let probe = random(&mut rng, &[16]);
        let gr = relu_backward(&x, &probe);
        let report = grad_check(
            |t| dot(&relu(&t[0]), &probe),
            std::slice::from_ref(&x),
            &["relu"],
            &[gr],
            opts(seed),
        );
        assert!(report.passed, "{report:?}");
        let gs = sigmoid_backward(&sigmoid(&x), &probe);
        let report = grad_check(|t| dot(&sigmoid(&t[0]), &probe), &[x], &["sigmoid"], &[gs], opts(seed));
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn composed_fragment_gradients_match_finite_differences() {
    // conv -> relu -> pool -> dense -> sigmoid, every piece chained by hand
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let x = random(&mut rng, &[2, 6, 6]);
        let k = random(&mut rng, &[2, 2, 3, 3]);
        let b = random(&mut rng, &[2]);
        let w = random(&mut rng, &[3, 8]);
        let wb = random(&mut rng, &[3]);
        let probe = random(&mut rng, &[3]);
        let run = |t: &[Tensor]| {
            let z = conv2d(&t[0], &t[1], &t[2], Padding::Same).unwrap();
            let a = relu(&z);
            let p = maxpool3(&a).unwrap();
            let flat = Tensor::new(&[8], p.output.data().to_vec()).unwrap();
            let h = dense(&flat, &t[3], &t[4]).unwrap();
            (z, p, flat, sigmoid(&h))
        };
        let params = [x, k, b, w, wb];
        let (z, p, flat, s) = run(&params);
        let gh = sigmoid_backward(&s, &probe);
        let (gflat, gw, gwb) = dense_backward(&flat, &params[3], &gh).unwrap();
        let gp = Tensor::new(p.output.shape(), gflat.into_data()).unwrap();
        let ga = maxpool3_backward(&p, &gp).unwrap();
        let gz = relu_backward(&z, &ga);
        let gc = conv2d_backward(&params[0], &params[1], &gz, Padding::Same).unwrap();
        let report = grad_check(
            |t| dot(&run(t).3, &probe),
            &params,
            &["x", "kernel", "conv bias", "weight", "dense bias"],
            &[gc.input, gc.kernel, gc.bias, gw, gwb],
            opts(seed),
        );
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn pool_backward_conserves_gradient_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let x = random(&mut rng, &[3, 10, 8]);
        let p = maxpool3(&x).unwrap();
        let g = random(&mut rng, p.output.shape());
        let back = maxpool3_backward(&p, &g).unwrap();
        let a: f64 = g.data().iter().sum();
        let b: f64 = back.data().iter().sum();
        assert!((a - b).abs() < 1e-12);
        // each output lands on exactly one input position
        assert_eq!(back.data().iter().filter(|v| **v != 0.0).count(), g.len());
    }
}

#[test]
fn adam_first_step_is_bounded_by_learning_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = random(&mut rng, &[50]);
    let start = random(&mut rng, &[50]);
    let mut p = vec![start.clone()];
    let mut s = AdamState::new(&p, AdamConfig::default());
    let lr = s.config.lr;
    adam_step(&mut p, std::slice::from_ref(&g), &["w"], &mut s).unwrap();
    for ((after, before), gi) in p[0].data().iter().zip(start.data()).zip(g.data()) {
        let delta = after - before;
        assert!(delta.abs() <= lr * (1.0 + 1e-12));
        if gi.abs() > 1e-4 {
            assert!(delta.abs() >= 0.99 * lr);
            assert_eq!(delta.signum(), -gi.signum());
        }
    }
}

#[test]
fn adam_two_steps_match_hand_recurrence() {
    let config = AdamConfig::default();
    let mut p = vec![Tensor::new(&[1], vec![1.0]).unwrap()];
    let mut s = AdamState::new(&p, config);
    let (g1, g2) = (0.5, -0.2);
    adam_step(&mut p, &[Tensor::new(&[1], vec![g1]).unwrap()], &["w"], &mut s).unwrap();
    adam_step(&mut p, &[Tensor::new(&[1], vec![g2]).unwrap()], &["w"], &mut s).unwrap();
    // step 1: m = 0.05, v = 2.5e-4, bias corrections 0.1 and 0.001
    let theta1 = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
    // step 2: m = 0.045 - 0.02, v = 2.4975e-4 + 4e-5, corrections 0.19 and 0.001999
    let m_hat = 0.025 / 0.19;
    let v_hat: f64 = 2.8975e-4 / 0.001999;
    let theta2 = theta1 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((p[0].data()[0] - theta2).abs() < 1e-15);
    assert!((s.m[0].data()[0] - 0.025).abs() < 1e-15);
    assert!((s.v[0].data()[0] - 2.8975e-4).abs() < 1e-15);
    assert!(s.v[0].data()[0] >= 0.0);
}

proptest! {
    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 7, 6]);
        let y = random(&mut rng, &[2, 7, 6]);
        let k = random(&mut rng, &[3, 2, 5, 5]);
        let zero = Tensor::zeros(&[3]);
        let mut mix = x.clone();
        for (m, (xi, yi)) in mix.data_mut().iter_mut().zip(x.data().iter().zip(y.data())) {
            *m = a * xi + b * yi;
        }
        for padding in [Padding::Valid, Padding::Same] {
            let lhs = conv2d(&mix, &k, &zero, padding).unwrap();
            let fx = conv2d(&x, &k, &zero, padding).unwrap();
            let fy = conv2d(&y, &k, &zero, padding).unwrap();
            for ((l, u), v) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
                prop_assert!((l - (a * u + b * v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_first_update_never_exceeds_lr(g in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let n = g.len();
        let mut p = vec![Tensor::zeros(&[n])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[Tensor::new(&[n], g).unwrap()], &["w"], &mut s).unwrap();
        for d in p[0].data() {
            prop_assert!(d.abs() <= 1e-3 * (1.0 + 1e-12));
        }
    }
}
