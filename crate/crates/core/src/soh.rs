//! State-of-health estimation: an aged cell behaves like a new one driven at
//! `I / γ`; γ is recovered by grid search over surrogate rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycles::{random_cycle, DriveCycle};
use crate::electrochem::{run_cycle, ParameterSet, Simulator, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::eval::{rollout, Predictor, RolloutStart};

/// Search interval for γ.
pub const GAMMA_MIN: f64 = 0.75;
pub const GAMMA_MAX: f64 = 1.1;
/// Objective value when the predicted failure window is wrong.
pub const MISMATCH_PENALTY: f64 = 0.5;

/// The 71 candidates 0.750, 0.755, ..., 1.100.
pub fn gamma_grid() -> Vec<f64> {
    (0..=70).map(|i| (750 + 5 * i) as f64 / 1000.0).collect()
}

/// Mean after dropping `⌊n/5⌋` values from each tail.
pub fn trimmed_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Estimation("trimmed mean of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 5;
    let kept = &v[cut..v.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Voltages of an aged cell at t = 0, 100, 200, ... and its failure window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub voltages: Vec<f64>,
    pub failure_window: Option<usize>,
}

/// Runs the simulator with every current divided by `gamma`.
pub fn simulate_aged(params: &ParameterSet, cycle: &DriveCycle, gamma: f64) -> Result<Measured> {
    if !(gamma > 0.0 && gamma <= GAMMA_MAX) {
        return Err(Error::Invalid(format!("gamma {gamma} outside (0, {GAMMA_MAX}]")));
    }
    let sim = Simulator::new(params.clone())?;
    let outcome = run_cycle(&sim, &cycle.scaled(gamma), DEFAULT_DT)?;
    Ok(Measured {
        voltages: outcome.voltages(),
        failure_window: outcome.failure_window,
    })
}

/// Mean |V_pred − V_measured| over the windows before the measured failure
/// (all windows when neither fails), or 0.5 when the predicted failure window
/// differs from the measured one.
pub fn soh_objective<P: Predictor + ?Sized>(
    predictor: &P,
    cycle: &DriveCycle,
    start: &RolloutStart,
    measured: &Measured,
    gamma: f64,
) -> Result<f64> {
    let predicted = rollout(predictor, &cycle.scaled(gamma), start)?;
    if predicted.failure_window != measured.failure_window {
        return Ok(MISMATCH_PENALTY);
    }
    let compared = match measured.failure_window {
        Some(w) => w,
        None => predicted.len().min(measured.voltages.len() - 1),
    };
    if compared == 0 {
        return Ok(0.0);
    }
    let sum: f64 = (0..compared)
        .map(|k| (predicted.voltages[k] - measured.voltages[k + 1]).abs())
        .sum();
    Ok(sum / compared as f64)
}

/// Grid search for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleEstimate {
    pub seed: u64,
    pub measured_failure_window: Option<usize>,
    /// `None` when every candidate hit the mismatch penalty.
    pub estimate: Option<f64>,
    /// `(γ, f)` for every grid candidate.
    pub trace: Vec<(f64, f64)>,
}

impl CycleEstimate {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("gamma,f\n");
        for (g, f) in &self.trace {
            out.push_str(&format!("{g},{f}\n"));
        }
        out
    }
}

/// Minimizes the objective over [`gamma_grid`], first index winning ties.
pub fn search_gamma<P: Predictor + ?Sized>(
    predictor: &P,
    cycle: &DriveCycle,
    start: &RolloutStart,
    measured: &Measured,
) -> Result<CycleEstimate> {
    let grid = gamma_grid();
    let values = grid
        .par_iter()
        .map(|&g| soh_objective(predictor, cycle, start, measured, g))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, &f) in values.iter().enumerate() {
        if f != MISMATCH_PENALTY && best.is_none_or(|(_, b)| f < b) {
            best = Some((i, f));
        }
    }
    Ok(CycleEstimate {
        seed: cycle.seed,
        measured_failure_window: measured.failure_window,
        estimate: best.map(|(i, _)| grid[i]),
        trace: grid.into_iter().zip(values).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SohEstimate {
    pub gamma_true: Option<f64>,
    /// Estimates of the valid cycles, in cycle order.
    pub per_cycle_estimates: Vec<f64>,
    pub cycles: Vec<CycleEstimate>,
    /// Trimmed mean of `per_cycle_estimates`.
    pub final_estimate: f64,
}

impl SohEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Combines per-cycle searches, dropping invalid cycles.
pub fn aggregate(gamma_true: Option<f64>, cycles: Vec<CycleEstimate>) -> Result<SohEstimate> {
    let per_cycle_estimates: Vec<f64> = cycles.iter().filter_map(|c| c.estimate).collect();
    if per_cycle_estimates.len() < 3 {
        return Err(Error::Estimation(format!(
            "only {} of {} cycles produced a valid estimate (need 3)",
            per_cycle_estimates.len(),
            cycles.len()
        )));
    }
    Ok(SohEstimate {
        gamma_true,
        final_estimate: trimmed_mean(&per_cycle_estimates)?,
        per_cycle_estimates,
        cycles,
    })
}

/// Estimates γ from `n_cycles` random cycles seeded `base_seed + i`, each
/// measured on a simulated cell aged to `gamma_true`.
pub fn estimate_gamma<P: Predictor + ?Sized>(
    predictor: &P,
    params: &ParameterSet,
    n_cycles: usize,
    n_windows: usize,
    gamma_true: f64,
    base_seed: u64,
) -> Result<SohEstimate> {
    if !(GAMMA_MIN..=GAMMA_MAX).contains(&gamma_true) {
        return Err(Error::Invalid(format!(
            "gamma {gamma_true} outside [{GAMMA_MIN}, {GAMMA_MAX}]"
        )));
    }
    let sim = Simulator::new(params.clone())?;
    let start = RolloutStart::from_state(&sim.init_full_charge());
    let cycles = (0..n_cycles)
        .map(|i| {
            let cycle = random_cycle(base_seed.wrapping_add(i as u64), n_windows)?;
            let measured = simulate_aged(params, &cycle, gamma_true)?;
            search_gamma(predictor, &cycle, &start, &measured)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(Some(gamma_true), cycles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_71_exact_points() {
        let g = gamma_grid();
        assert_eq!(g.len(), 71);
        assert_eq!(g[0], 0.75);
        assert_eq!(g[70], 1.1);
        assert_eq!(g[30], 0.9);
    }

    #[test]
    fn trimmed_mean_drops_one_per_tail_of_five() {
        assert!((trimmed_mean(&[0.1, 0.2, 0.3, 0.4, 10.0]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(trimmed_mean(&[2.0, 4.0, 3.0]).unwrap(), 3.0);
        assert!(trimmed_mean(&[]).is_err());
    }
}
