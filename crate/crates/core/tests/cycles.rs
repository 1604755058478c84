use cellsurrogate::cycles::*;
use cellsurrogate::electrochem::{run_cycle, ParameterSet, Simulator, DEFAULT_DT};
use cellsurrogate::Error;
use proptest::prelude::*;

fn small(n_train: usize, n_test: usize, windows: usize, threads: usize) -> Dataset {
    build_dataset(
        &ParameterSet::bundled(),
        n_train,
        n_test,
        42,
        GenConfig {
            n_windows: windows,
            threads,
        },
    )
    .unwrap()
}

#[test]
fn cycle_failing_in_window_13_gives_14_samples_one_failed() {
    let p = ParameterSet::bundled();
    let sim = Simulator::new(p.clone()).unwrap();
    // constant-current failure time falls with current; bisect onto window 13
    let (mut lo, mut hi) = (1.0, 6.0);
    let mut found = None;
    for _ in 0..40 {
        let c = 0.5 * (lo + hi);
        let cycle = DriveCycle::constant(c, 20);
        let out = run_cycle(&sim, &cycle, DEFAULT_DT).unwrap();
        match out.failure_window {
            Some(13) => {
                found = Some((cycle, out));
                break;
            }
            Some(w) if w < 13 => hi = c,
            _ => lo = c,
        }
    }
    let (cycle, out) = found.expect("a constant current failing in window 13");
    let samples = samples_from_outcome(&out, &cycle.currents);
    assert_eq!(samples.len(), 14);
    assert_eq!(samples.iter().filter(|s| s.failed()).count(), 1);
    let last = samples.last().unwrap();
    assert!(last.failed());
    assert_eq!(last.v_t100, p.V_cut as f32);
}

#[test]
fn manifest_counts_match_payload() {
    let d = small(1, 1, 6, 1);
    let m = &d.manifest;
    assert_eq!((m.n_train_cycles, m.n_test_cycles), (1, 1));
    assert_eq!(m.n_train_samples, d.samples_in(Split::Train).len());
    assert_eq!(m.n_test_samples, d.samples_in(Split::Test).len());
    assert_eq!(m.total_samples(), d.samples.len());
    assert_eq!(m.skipped_cycles, 0);
}

#[test]
fn pilot_failure_fraction_below_ten_percent() {
    let d = small(80, 20, 40, 1);
    let fraction = d.failure_fraction();
    assert!(fraction < 0.10, "failure fraction {fraction}");
    assert!(d.manifest.n_failure_samples > 0);
}

#[test]
fn chains_splits_and_failure_rows_are_consistent() {
    let d = small(4, 2, 40, 1);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (record, samples) in d.cycles() {
        match record.split {
            Split::Train => train_ids.push(record.id),
            Split::Test => test_ids.push(record.id),
        }
        for pair in samples.windows(2) {
            assert_eq!(pair[1].c_n, pair[0].next_c_n);
            assert_eq!(pair[1].c_p, pair[0].next_c_p);
            assert_eq!(pair[1].v_t, pair[0].v_t100);
            assert_eq!(pair[1].i_t, pair[0].i_t100);
        }
        for (k, s) in samples.iter().enumerate() {
            assert_eq!(s.i_t, record.currents[k] as f32);
            assert_eq!(s.failed(), record.failure_window == Some(k));
        }
    }
    assert!(train_ids.iter().all(|id| !test_ids.contains(id)));
}

#[test]
fn output_does_not_depend_on_worker_count() {
    let one = small(3, 2, 12, 1);
    let four = small(3, 2, 12, 4);
    assert_eq!(one.payload_bytes(), four.payload_bytes());
    assert_eq!(one.manifest_json(), four.manifest_json());
}

#[test]
fn constant_current_datasets() {
    let p = ParameterSet::bundled();
    let cfg = GenConfig::default();
    let one = constant_current_dataset(&p, &[1.0], 1, cfg).unwrap();
    let n1 = one.samples.len();
    assert!((33..=38).contains(&n1), "1C gives {n1} samples");
    let six = constant_current_dataset(&p, &[6.0], 1, cfg).unwrap();
    assert!(six.samples.len() * 4 < n1);
    for s in one.samples.iter().chain(&six.samples) {
        assert_eq!(s.i_t, s.i_t100);
    }
    let twice = constant_current_dataset(&p, &[6.0], 2, cfg).unwrap();
    assert_eq!(twice.samples.len(), 2 * six.samples.len());
    assert!(constant_current_dataset(&p, &[7.0], 1, cfg).is_err());
    assert!(constant_current_dataset(&p, &[0.0], 1, cfg).is_err());
}

#[test]
fn write_read_round_trip_and_corruption() {
    let d = small(1, 1, 5, 1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&d, dir.path()).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), d);

    let payload = d.payload_bytes();
    let manifest = d.manifest_json();
    let truncated = Dataset::from_parts(manifest.as_bytes(), &payload[..payload.len() - 7]);
    assert!(matches!(truncated, Err(Error::Integrity(_))));
    let missing = Dataset::from_parts(manifest.as_bytes(), &payload[..payload.len() - RECORD_BYTES]);
    assert!(matches!(missing, Err(Error::Integrity(_))));
    match Dataset::from_parts(&manifest.as_bytes()[..40], &payload) {
        Err(Error::Format { offset, .. }) => assert!(offset <= 40),
        other => panic!("expected a format error, got {other:?}"),
    }
    let mut nan = payload.clone();
    nan[RECORD_BYTES + 8..RECORD_BYTES + 12].copy_from_slice(&f32::NAN.to_le_bytes());
    match Dataset::from_parts(manifest.as_bytes(), &nan) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, RECORD_BYTES + 8),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn empty_dataset_is_a_valid_file() {
    let mut d = small(1, 1, 3, 1);
    d.samples.clear();
    let m = &mut d.manifest;
    m.cycles.clear();
    m.n_train_cycles = 0;
    m.n_test_cycles = 0;
    m.n_train_samples = 0;
    m.n_test_samples = 0;
    m.n_failure_samples = 0;
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&d, dir.path()).unwrap();
    assert_eq!(std::fs::metadata(dir.path().join(PAYLOAD_FILE)).unwrap().len(), 0);
    let back = read_dataset(dir.path()).unwrap();
    assert!(back.samples.is_empty());
    assert_eq!(back, d);
}

fn template() -> Dataset {
    small(1, 1, 2, 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_in_range_records_round_trip(values in proptest::collection::vec(0.0f32..=1.0, RECORD_VALUES), v in 2.0f32..5.0, i in 0.0f32..9.0) {
        let mut d = template();
        for s in d.samples.iter_mut().filter(|s| !s.failed()) {
            s.c_n.copy_from_slice(&values[..400]);
            s.next_c_p.copy_from_slice(&values[400..800]);
            s.v_t = v;
            s.i_t100 = i;
        }
        let back = Dataset::from_parts(d.manifest_json().as_bytes(), &d.payload_bytes()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn random_cycles_stay_in_range(seed in any::<u64>(), n in 2usize..60) {
        let c = random_cycle(seed, n).unwrap();
        prop_assert_eq!(c.currents.len(), n + 1);
        prop_assert!(c.currents.iter().all(|&x| (0.0..=MAX_CYCLE_CRATE).contains(&x)));
        prop_assert_eq!(c, random_cycle(seed, n).unwrap());
    }
}
