use cellsurrogate::cycles::{random_cycle, DriveCycle};
use cellsurrogate::electrochem::*;

fn negative_lithium_ah(p: &ParameterSet, s: &CellState) -> f64 {
    let moles =
        p.solid_fraction(Electrode::Negative) * p.L_n * p.area * p.c_max_n * s.mean_stoichiometry(Electrode::Negative);
    moles * FARADAY / 3600.0
}

#[test]
fn one_c_for_100_s_moves_a_36th_of_capacity() {
    let p = ParameterSet::bundled();
    let out = simulate_cycle(&p, &DriveCycle::constant(1.0, 1)).unwrap();
    let moved = negative_lithium_ah(&p, &out.trajectory[0]) - negative_lithium_ah(&p, &out.trajectory[1]);
    let expected = p.Q / 36.0;
    assert!(
        (moved - expected).abs() <= 1e-3 * expected,
        "moved {moved} A·h, expected {expected}"
    );
}

#[test]
fn lithium_is_conserved_over_a_forty_window_cycle() {
    let p = ParameterSet::bundled();
    let sim = Simulator::new(p.clone()).unwrap();
    for seed in [3, 17] {
        let out = run_cycle(&sim, &random_cycle(seed, 40).unwrap(), DEFAULT_DT).unwrap();
        let start = sim.lithium_inventory(&out.trajectory[0]);
        for s in &out.trajectory {
            let drift = (sim.lithium_inventory(s) - start).abs() / start;
            assert!(drift < 1e-6, "seed {seed}: drift {drift:e} at t = {}", s.time);
        }
    }
}

fn spread(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    hi - lo
}

#[test]
fn rest_after_discharge_relaxes_to_ocv() {
    let p = ParameterSet::bundled();
    let sim = Simulator::new(p.clone()).unwrap();
    let mut currents = vec![0.5, 0.5, 0.0];
    currents.extend(std::iter::repeat_n(0.0, 60));
    let out = run_cycle_from(&sim, sim.init_full_charge(), &currents, DEFAULT_DT).unwrap();
    assert!(!out.failed);
    // after 1000 s of rest the terminal voltage sits on the OCV of the mean stoichiometries
    let rested = &out.trajectory[12];
    let ocv = p.ocv(
        rested.mean_stoichiometry(Electrode::Negative),
        rested.mean_stoichiometry(Electrode::Positive),
    );
    assert!(
        (rested.voltage - ocv).abs() < 1e-3,
        "|V - OCV| = {}",
        (rested.voltage - ocv).abs()
    );
    // the spread only ever shrinks at rest and is gone after a long rest
    let spreads: Vec<f64> = out.trajectory[2..].iter().map(|s| spread(&s.c_n)).collect();
    for pair in spreads.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12);
    }
    assert!(*spreads.last().unwrap() < 1e-3, "spread {}", spreads.last().unwrap());
}

#[test]
fn state_of_charge_never_increases_under_discharge() {
    let p = ParameterSet::bundled();
    let out = simulate_cycle(&p, &random_cycle(5, 40).unwrap()).unwrap();
    let soc: Vec<f64> = out
        .trajectory
        .iter()
        .map(|s| s.mean_stoichiometry(Electrode::Negative))
        .collect();
    for pair in soc.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12);
    }
}

#[test]
fn halving_the_substep_barely_moves_voltage_samples() {
    let p = ParameterSet::bundled();
    let sim = Simulator::new(p).unwrap();
    let cycle = DriveCycle::constant(1.0, 40);
    let coarse = run_cycle(&sim, &cycle, 1.0).unwrap();
    let fine = run_cycle(&sim, &cycle, 0.5).unwrap();
    assert!(coarse.windows() >= 30);
    let n = coarse.trajectory.len().min(fine.trajectory.len());
    // compare full 100-s samples only; a final cutoff entry has no counterpart
    let full = |o: &SimOutcome| o.trajectory.len() - usize::from(o.failed);
    for k in 0..n.min(full(&coarse)).min(full(&fine)) {
        let d = (coarse.trajectory[k].voltage - fine.trajectory[k].voltage).abs();
        assert!(d < 1e-4, "window {k}: {d:e} V");
    }
}

#[test]
fn identical_inputs_give_identical_outcomes() {
    let p = ParameterSet::bundled();
    let cycle = random_cycle(11, 40).unwrap();
    assert_eq!(simulate_cycle(&p, &cycle).unwrap(), simulate_cycle(&p, &cycle).unwrap());
}

#[test]
fn failure_near_seven_c_and_at_the_ceiling() {
    let p = ParameterSet::bundled();
    let ceiling = max_sustained_crate(&p, 100.0).unwrap();
    assert!((6.0..=8.0).contains(&ceiling), "ceiling {ceiling}");
    let above = simulate_cycle(&p, &DriveCycle::constant(ceiling + 0.05, 3)).unwrap();
    assert_eq!(above.failure_window, Some(0));
    assert!(above.failure_time.unwrap() > 90.0);
    let seven = simulate_cycle(&p, &DriveCycle::constant(7.0, 3)).unwrap();
    let t = seven.failure_time.unwrap();
    assert!((80.0..=150.0).contains(&t), "7C fails at {t} s");
}

#[test]
fn survivable_current_falls_with_duration() {
    let p = ParameterSet::bundled();
    let hundred = max_sustained_crate(&p, 100.0).unwrap();
    let one = max_sustained_crate(&p, 1.0).unwrap();
    let hour = max_sustained_crate(&p, 3600.0).unwrap();
    assert!(one > hundred);
    assert!(hour <= 1.05, "one-hour rate {hour}");
    assert!(max_sustained_crate(&p, 0.0).is_err());
}

#[test]
fn parameter_json_round_trip_and_validation() {
    let p = ParameterSet::bundled();
    let back = ParameterSet::from_json(&p.to_json()).unwrap();
    assert_eq!(back, p);
    let mut bad = p.clone();
    bad.t_plus = 1.5;
    let err = Simulator::new(bad).unwrap_err().to_string();
    assert!(err.contains("t_plus"), "{err}");
}
