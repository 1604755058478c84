use cellsurrogate::cycles::Sample;
use cellsurrogate::nn::{grad_check, CheckOptions, Tensor};
use cellsurrogate::surrogate::*;
use cellsurrogate::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NORM: Normalization = Normalization {
    v_cut: 3.41,
    v_full: 3.85,
    current_scale: 6.0,
    current_max: 1.5,
};

fn tiny() -> Architecture {
    Architecture {
        c1: 3,
        c2: 4,
        c3: 5,
        regression_hidden: [6, 7],
        failure_hidden: [5, 4],
        residual: false,
        voltage_to_failure: true,
    }
}

fn random_sample(rng: &mut ChaCha8Rng) -> Sample {
    let grid = |rng: &mut ChaCha8Rng| (0..400).map(|_| rng.gen_range(0.0f32..1.0)).collect::<Vec<_>>();
    Sample {
        c_n: grid(rng),
        c_p: grid(rng),
        v_t: rng.gen_range(3.45..3.85),
        i_t: rng.gen_range(0.0..6.0),
        i_t100: rng.gen_range(0.0..6.0),
        fail: if rng.gen_bool(0.3) { 1.0 } else { 0.0 },
        next_c_n: grid(rng),
        next_c_p: grid(rng),
        v_t100: rng.gen_range(3.41..3.85),
    }
}

fn samples(seed: u64, n: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_sample(&mut rng)).collect()
}

/// The target as a prediction, for exact-match loss checks.
fn as_prediction(s: &Sample) -> Prediction {
    Prediction {
        voltage: s.v_t100 as f64,
        c_n: s.next_c_n.iter().map(|&v| v as f64).collect(),
        c_p: s.next_c_p.iter().map(|&v| v as f64).collect(),
        p_fail: s.fail as f64,
        clamped: 0,
    }
}

#[test]
fn architecture_arithmetic() {
    let a = Architecture::default();
    assert_eq!(FINAL_SIDE, 2);
    assert_eq!(a.flat_len(), DEFAULT_FLAT_LEN);
    assert_eq!(a.feature_len(), DEFAULT_FLAT_LEN + EXTRA_FEATURES);
    let shapes = a.shapes();
    assert_eq!(shapes.len(), TENSOR_NAMES.len());
    assert_eq!(shapes[10], vec![REGRESSION_OUTPUTS, 256]);
    assert_eq!(shapes[16], vec![1, 16]);
    assert_eq!(shapes[6], vec![256, 259]);
    assert_eq!(shapes[12], vec![64, 260]);
    let plain = Architecture {
        voltage_to_failure: false,
        ..a
    };
    assert_eq!(plain.shapes()[12], vec![64, 259]);
}

#[test]
fn forward_contract() {
    let w = SurrogateWeights::init(Architecture::default(), NORM, 5).unwrap();
    for s in samples(1, 5) {
        let input = SurrogateInput::from_sample(&s);
        let p = w.predict(&input).unwrap();
        assert!(p.p_fail > 0.0 && p.p_fail < 1.0);
        assert_eq!(1 + p.c_n.len() + p.c_p.len(), REGRESSION_OUTPUTS);
        assert_eq!(p, w.predict(&input).unwrap());
        assert_eq!(p.clamped, 0);
    }
}

#[test]
fn inputs_out_of_range_are_clamped_and_counted() {
    let w = SurrogateWeights::init(tiny(), NORM, 5).unwrap();
    let s = &samples(2, 1)[0];
    let mut input = SurrogateInput::from_sample(s);
    input.c_n[0] = 1.2;
    input.c_p[3] = -0.1;
    input.i_t = 12.0;
    let p = w.predict(&input).unwrap();
    assert_eq!(p.clamped, 3);
    let mut fixed = input.clone();
    fixed.c_n[0] = 1.0;
    fixed.c_p[3] = 0.0;
    fixed.i_t = 9.0;
    let q = w.predict(&fixed).unwrap();
    assert_eq!(p.voltage, q.voltage);
    assert_eq!(q.clamped, 0);
}

#[test]
fn packed_handle_matches_plain_forward_bitwise() {
    let mut w = SurrogateWeights::init(Architecture::default(), NORM, 9).unwrap();
    let unrounded = Surrogate::new(w.clone()).unwrap();
    assert!(!unrounded.is_packed());
    w.round_to_f32();
    let h = Surrogate::new(w.clone()).unwrap();
    assert!(h.is_packed());
    for s in samples(3, 4) {
        let input = SurrogateInput::from_sample(&s);
        assert_eq!(h.predict(&input).unwrap(), w.predict(&input).unwrap());
    }
}

#[test]
fn training_forward_matches_inference_forward() {
    let w = SurrogateWeights::init(Architecture::default(), NORM, 4).unwrap();
    let data = samples(4, 11);
    let refs: Vec<&Sample> = data.iter().collect();
    let lw = LossWeights::default();
    let (from_grad, _) = batch_gradient(&w, &refs, lw).unwrap();
    let from_eval = batch_loss(&w, &refs, lw).unwrap();
    assert!((from_grad.total() - from_eval.total()).abs() < 1e-12 * from_eval.total());
}

#[test]
fn loss_is_zero_on_exact_prediction() {
    for s in samples(5, 3) {
        let l = loss(&as_prediction(&s), &s, LossWeights::default());
        assert_eq!(l.total(), 0.0);
    }
}

#[test]
fn voltage_only_error_is_weighted_by_ten() {
    let s = &samples(6, 1)[0];
    let mut p = as_prediction(s);
    let delta = 0.013;
    p.voltage += delta;
    let l = loss(&p, s, LossWeights::default());
    assert_eq!(l.concentration, 0.0);
    assert_eq!(l.failure, 0.0);
    assert!((l.total() - 10.0 * delta * delta).abs() < 1e-15);
}

#[test]
fn loss_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for s in samples(7, 10) {
        let p = Prediction {
            voltage: rng.gen_range(3.0..4.0),
            c_n: (0..400).map(|_| rng.gen_range(-0.1..1.1)).collect(),
            c_p: (0..400).map(|_| rng.gen_range(-0.1..1.1)).collect(),
            p_fail: rng.gen_range(0.0..1.0),
            clamped: 0,
        };
        let mut conc = 0.0;
        for i in 0..400 {
            conc += (p.c_n[i] - s.next_c_n[i] as f64).powi(2);
        }
        for i in 0..400 {
            conc += (p.c_p[i] - s.next_c_p[i] as f64).powi(2);
        }
        let expected = conc / 800.0 + 10.0 * (p.voltage - s.v_t100 as f64).powi(2) + (p.p_fail - s.fail as f64).powi(2);
        let l = loss(&p, &s, LossWeights::default());
        assert!((l.total() - expected).abs() < 1e-12);
        assert!((l.total() - (l.concentration + l.voltage + l.failure)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn voltage_weight_scales_only_voltage_component(seed in any::<u64>(), c in 0.1f64..50.0) {
        let s = &samples(seed, 1)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut p = as_prediction(s);
        p.voltage += rng.gen_range(-0.2..0.2);
        p.c_n[5] += 0.1;
        p.p_fail = 0.5;
        let base = LossWeights::default();
        let scaled = LossWeights { voltage: base.voltage * c, ..base };
        let a = loss(&p, s, base);
        let b = loss(&p, s, scaled);
        prop_assert_eq!(a.concentration, b.concentration);
        prop_assert_eq!(a.failure, b.failure);
        prop_assert!((b.voltage - c * a.voltage).abs() <= 1e-12 * b.voltage.abs().max(1e-300));
    }
}

fn check_network(arch: Architecture, seed: u64, max_entries: Option<usize>) {
    let mut arch = arch;
    arch.residual = seed % 2 == 1;
    arch.voltage_to_failure = seed % 4 < 2;
    let mut w = SurrogateWeights::init(arch, NORM, seed).unwrap();
    // zero biases put dead-layer pre-activations exactly on the ReLU kink
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (t, name) in w.tensors.iter_mut().zip(TENSOR_NAMES) {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let data = samples(100 + seed, 2);
    let refs: Vec<&Sample> = data.iter().collect();
    let lw = LossWeights::default();
    let (_, grads) = batch_gradient(&w, &refs, lw).unwrap();
    let f = |t: &[Tensor]| {
        let mut probe = w.clone();
        probe.tensors = t.to_vec();
        batch_loss(&probe, &refs, lw).unwrap().total()
    };
    let report = grad_check(
        f,
        &w.tensors,
        &TENSOR_NAMES,
        &grads,
        CheckOptions {
            step: 1e-6,
            tolerance: 1e-4,
            max_entries,
            seed,
        },
    );
    assert!(report.passed, "seed {seed}: {report:?}");
}

#[test]
fn full_network_gradient_small_widths() {
    for seed in 0..10 {
        check_network(tiny(), seed, None);
    }
}

#[test]
fn full_network_gradient_default_widths() {
    check_network(Architecture::default(), 42, Some(12));
}

#[test]
fn one_epoch_on_64_samples_is_one_step() {
    let data = samples(8, 64);
    let refs: Vec<&Sample> = data.iter().collect();
    let config = TrainConfig {
        epochs: 1,
        architecture: tiny(),
        ..TrainConfig::default()
    };
    let (_, history) = train_samples(&refs, NORM, &config).unwrap();
    assert_eq!(history.steps, 1);
    assert_eq!(history.epochs.len(), 1);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 30,
        ..config
    };
    let (_, history) = train_samples(&refs, NORM, &config).unwrap();
    assert_eq!(history.steps, 6);
    assert_eq!(history.epochs[1].learning_rate, 0.5 * config.learning_rate);
}

#[test]
fn training_is_deterministic_across_runs_and_workers() {
    let data = samples(9, 50);
    let refs: Vec<&Sample> = data.iter().collect();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 3,
        architecture: tiny(),
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_samples(&refs, NORM, &config).unwrap())
    };
    let (a, ha) = run(1);
    let (b, hb) = run(1);
    let (c, hc) = run(4);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(ha, hb);
    assert_eq!(ha, hc);
    // a different seed gives a different model
    let other = TrainConfig { seed: 4, ..config };
    let (d, _) = train_samples(&refs, NORM, &other).unwrap();
    assert_ne!(a, d);
}

#[test]
fn invalid_train_config_is_rejected() {
    let data = samples(10, 4);
    let refs: Vec<&Sample> = data.iter().collect();
    for bad in [
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr_decay: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            voltage_weight: 0.0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(train_samples(&refs, NORM, &bad), Err(Error::Invalid(_))));
    }
    assert!(train_samples(&[], NORM, &TrainConfig::default()).is_err());
}

#[test]
fn divergence_reports_coordinates() {
    let mut data = samples(11, 8);
    data[3].v_t100 = f32::MAX;
    let refs: Vec<&Sample> = data.iter().collect();
    let config = TrainConfig {
        batch_size: 4,
        architecture: tiny(),
        voltage_weight: 1e300,
        ..TrainConfig::default()
    };
    match train_samples(&refs, NORM, &config) {
        Err(Error::Diverged { epoch, lr, .. }) => {
            assert_eq!(epoch, 0);
            assert_eq!(lr, config.learning_rate);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn trained_tiny() -> SurrogateWeights {
    let data = samples(12, 16);
    let refs: Vec<&Sample> = data.iter().collect();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 8,
        architecture: tiny(),
        ..TrainConfig::default()
    };
    train_samples(&refs, NORM, &config).unwrap().0
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let w = trained_tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&w, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, w);
    for s in samples(13, 3) {
        let input = SurrogateInput::from_sample(&s);
        assert_eq!(back.predict(&input).unwrap(), w.predict(&input).unwrap());
    }
    // unrounded weights lose at most single-precision rounding
    let raw = SurrogateWeights::init(Architecture::default(), NORM, 1).unwrap();
    let back = parse_checkpoint(&checkpoint_bytes(&raw).unwrap()).unwrap();
    for s in samples(14, 3) {
        let input = SurrogateInput::from_sample(&s);
        let (a, b) = (raw.predict(&input).unwrap(), back.predict(&input).unwrap());
        assert!((a.voltage - b.voltage).abs() <= 1e-6 * a.voltage.abs());
        for (x, y) in a.c_n.iter().zip(&b.c_n) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-2));
        }
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let w = trained_tiny();
    let good = checkpoint_bytes(&w).unwrap();
    let check = |bytes: &[u8]| assert!(matches!(parse_checkpoint(bytes), Err(Error::Checkpoint(_))));

    let mut header = good.clone();
    header[0] ^= 0xff;
    check(&header);
    let mut version = good.clone();
    version[8] = 9;
    check(&version);
    check(&good[..10]);
    check(&good[..good.len() - 4]);
    let mut payload = good.clone();
    let last = payload.len() - 1;
    payload[last] ^= 1;
    check(&payload);
    let mut len = good.clone();
    len[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
    check(&len);

    // edit a shape in the manifest while keeping the JSON length unchanged
    let json_len = u32::from_le_bytes(good[12..16].try_into().unwrap()) as usize;
    let text = String::from_utf8(good[16..16 + json_len].to_vec()).unwrap();
    let edited = text.replacen("\"c1\": 3", "\"c1\": 4", 1);
    assert_ne!(edited, text);
    let mut shape = good[..16].to_vec();
    shape.extend_from_slice(edited.as_bytes());
    shape.extend_from_slice(&good[16 + json_len..]);
    check(&shape);
    let edited = text.replacen("[\n        3,\n        2,", "[\n        3,\n        1,", 1);
    assert_ne!(edited, text);
    let mut shape = good[..16].to_vec();
    shape.extend_from_slice(edited.as_bytes());
    shape.extend_from_slice(&good[16 + json_len..]);
    check(&shape);
}
