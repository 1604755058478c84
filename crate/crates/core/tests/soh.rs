use cellsurrogate::cycles::{random_cycle, DriveCycle};
use cellsurrogate::electrochem::{init_full_charge, simulate_cycle, ParameterSet};
use cellsurrogate::eval::{rollout, RolloutStart};
use cellsurrogate::soh::*;
use cellsurrogate::surrogate::{Architecture, Normalization, SurrogateWeights};
use cellsurrogate::Error;
use proptest::prelude::*;

/// An untrained network whose failure head never fires.
fn never_failing() -> SurrogateWeights {
    let mut w = SurrogateWeights::init(Architecture::default(), Normalization::new(3.41, 3.85), 8).unwrap();
    w.tensors[17].data_mut()[0] = -20.0;
    w
}

fn start() -> RolloutStart {
    RolloutStart::from_state(&init_full_charge(&ParameterSet::bundled()).unwrap())
}

fn self_measured(w: &SurrogateWeights, cycle: &DriveCycle, gamma: f64) -> Measured {
    let s = start();
    let r = rollout(w, &cycle.scaled(gamma), &s).unwrap();
    let mut voltages = vec![s.voltage];
    voltages.extend(&r.voltages);
    Measured {
        voltages,
        failure_window: r.failure_window,
    }
}

#[test]
fn unit_gamma_is_the_plain_simulation() {
    let p = ParameterSet::bundled();
    let cycle = random_cycle(4, 12).unwrap();
    let aged = simulate_aged(&p, &cycle, 1.0).unwrap();
    let plain = simulate_cycle(&p, &cycle).unwrap();
    assert_eq!(aged.voltages, plain.voltages());
    assert_eq!(aged.failure_window, plain.failure_window);
    assert!(simulate_aged(&p, &cycle, 1.2).is_err());
    assert!(simulate_aged(&p, &cycle, 0.0).is_err());
}

#[test]
fn aged_cell_at_4c_behaves_like_a_new_cell_at_5c() {
    let p = ParameterSet::bundled();
    let aged = simulate_aged(&p, &DriveCycle::constant(4.0, 20), 0.8).unwrap();
    let five = simulate_cycle(&p, &DriveCycle::constant(5.0, 20)).unwrap();
    let four = simulate_cycle(&p, &DriveCycle::constant(4.0, 20)).unwrap();
    assert_eq!(aged.voltages, five.voltages());
    assert!(aged.failure_window.unwrap() <= four.failure_window.unwrap());
}

#[test]
fn more_aging_means_lower_voltage() {
    let p = ParameterSet::bundled();
    let cycle = random_cycle(21, 40).unwrap();
    let new = simulate_aged(&p, &cycle, 1.0).unwrap();
    let aged = simulate_aged(&p, &cycle, 0.9).unwrap();
    let n = new.voltages.len().min(aged.voltages.len());
    for k in 0..n {
        assert!(aged.voltages[k] <= new.voltages[k] + 1e-12, "window {k}");
    }
}

#[test]
fn objective_branches() {
    let w = never_failing();
    let cycle = random_cycle(2, 8).unwrap();
    let s = start();
    let measured = self_measured(&w, &cycle, 0.9);
    assert_eq!(measured.failure_window, None);
    assert_eq!(soh_objective(&w, &cycle, &s, &measured, 0.9).unwrap(), 0.0);

    let shifted = Measured {
        voltages: measured.voltages.iter().map(|v| v + 0.02).collect(),
        failure_window: None,
    };
    let f = soh_objective(&w, &cycle, &s, &shifted, 0.9).unwrap();
    assert!((f - 0.02).abs() < 1e-12);

    let wrong = Measured {
        failure_window: Some(3),
        ..measured.clone()
    };
    assert_eq!(soh_objective(&w, &cycle, &s, &wrong, 0.9).unwrap(), MISMATCH_PENALTY);
}

#[test]
fn self_consistent_measurements_recover_the_grid_point() {
    let w = never_failing();
    let s = start();
    for (seed, gamma) in [(1, 0.8), (2, 0.85), (3, 0.9), (4, 1.05)] {
        let cycle = random_cycle(seed, 10).unwrap();
        let measured = self_measured(&w, &cycle, gamma);
        let est = search_gamma(&w, &cycle, &s, &measured).unwrap();
        assert_eq!(est.estimate, Some(gamma));
        assert_eq!(est.trace.len(), 71);
        let range = measured.voltages.iter().fold(0.0f64, |m, v| m.max(*v))
            - measured.voltages.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        for &(_, f) in &est.trace {
            assert!(f >= 0.0 && f <= MISMATCH_PENALTY.max(range));
        }
    }
}

#[test]
fn too_few_valid_cycles_is_an_estimation_error() {
    let invalid = CycleEstimate {
        seed: 0,
        measured_failure_window: Some(2),
        estimate: None,
        trace: vec![],
    };
    let valid = CycleEstimate {
        estimate: Some(0.9),
        ..invalid.clone()
    };
    let err = aggregate(None, vec![valid.clone(), valid.clone(), invalid.clone(), invalid]).unwrap_err();
    assert!(matches!(err, Error::Estimation(_)));
    let ok = aggregate(Some(0.9), vec![valid.clone(), valid.clone(), valid]).unwrap();
    assert_eq!(ok.final_estimate, 0.9);
}

#[test]
fn estimation_is_deterministic() {
    let w = never_failing();
    let p = ParameterSet::bundled();
    let a = estimate_gamma(&w, &p, 4, 3, 0.9, 5).unwrap();
    let b = estimate_gamma(&w, &p, 4, 3, 0.9, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cycles.len(), 4);
    assert!(a
        .per_cycle_estimates
        .iter()
        .all(|g| (GAMMA_MIN..=GAMMA_MAX).contains(g)));
    assert!(estimate_gamma(&w, &p, 4, 3, 0.5, 5).is_err());
}

proptest! {
    #[test]
    fn trimmed_mean_lies_within_the_data(values in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
        let m = trimmed_mean(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
    }
}
