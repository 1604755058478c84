//! Finite-volume P2D (Doyle-Fuller-Newman) simulator producing ground-truth
//! voltages, particle concentration images and failure events.

mod band;
mod cell;
mod params;
mod particle;

use std::io::Write;

pub use band::BandMatrix;
pub use cell::{CellState, FailureEvent, Simulator, StepOutcome, E_CELLS, GRID_LEN, R_SHELLS, X_CELLS};
pub use params::{Curve, Electrode, ParameterSet, FARADAY, GAS_CONSTANT};
pub use particle::{ParticleStepper, ShellGrid};

use crate::cycles::{DriveCycle, WINDOW_SECONDS};
use crate::error::{Error, Result};

/// Default implicit sub-step, seconds.
pub const DEFAULT_DT: f64 = 1.0;

/// States recorded every 100 s plus failure information.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    /// States at t = 0, 100, 200, ...; when failed, the last entry is the cutoff state.
    pub trajectory: Vec<CellState>,
    pub failed: bool,
    pub failure_time: Option<f64>,
    /// Window `k` with `failure_time` in `(100 k, 100 (k + 1)]`.
    pub failure_window: Option<usize>,
}

impl SimOutcome {
    pub fn voltages(&self) -> Vec<f64> {
        self.trajectory.iter().map(|s| s.voltage).collect()
    }

    /// Number of windows that produced a recorded end state.
    pub fn windows(&self) -> usize {
        self.trajectory.len() - 1
    }

    /// One row per recorded state: `t, V`, then 400 `c_n` values (x outer, r
    /// inner), then 400 `c_p` values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t,V")?;
        for name in ["c_n", "c_p"] {
            for x in 0..X_CELLS {
                for r in 0..R_SHELLS {
                    write!(out, ",{name}_{x}_{r}")?;
                }
            }
        }
        writeln!(out)?;
        for s in &self.trajectory {
            write!(out, "{},{}", s.time, s.voltage)?;
            for v in s.c_n.iter().chain(&s.c_p) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Fully charged cell at rest.
pub fn init_full_charge(params: &ParameterSet) -> Result<CellState> {
    Ok(Simulator::new(params.clone())?.init_full_charge())
}

/// Runs `cycle` from full charge with the default 1 s sub-step.
pub fn simulate_cycle(params: &ParameterSet, cycle: &DriveCycle) -> Result<SimOutcome> {
    let sim = Simulator::new(params.clone())?;
    run_cycle(&sim, cycle, DEFAULT_DT)
}

/// Runs `cycle` from full charge, recording every 100 s and stopping at the
/// voltage cutoff or at the end of the cycle.
pub fn run_cycle(sim: &Simulator, cycle: &DriveCycle, dt: f64) -> Result<SimOutcome> {
    run_cycle_from(sim, sim.init_full_charge(), &cycle.currents, dt)
}

/// Same as [`run_cycle`] from an arbitrary start state and explicit breakpoints.
pub fn run_cycle_from(sim: &Simulator, start: CellState, currents: &[f64], dt: f64) -> Result<SimOutcome> {
    if currents.len() < 2 {
        return Err(Error::Invalid("drive cycle needs at least two breakpoints".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("sub-step must be positive, got {dt}")));
    }
    let substeps = (WINDOW_SECONDS / dt).round().max(1.0) as usize;
    let h = WINDOW_SECONDS / substeps as f64;
    let mut trajectory = vec![start.clone()];
    let mut state = start;
    for (w, pair) in currents.windows(2).enumerate() {
        let (i0, i1) = (pair[0], pair[1]);
        let t_window = state.time;
        for s in 0..substeps {
            let a = s as f64 / substeps as f64;
            let b = (s + 1) as f64 / substeps as f64;
            let outcome = sim
                .step(&state, i0 + a * (i1 - i0), i0 + b * (i1 - i0), h)
                .map_err(|e| e.at_time(state.time))?;
            match outcome {
                StepOutcome::Advanced(next) => state = next,
                StepOutcome::Failed(event) => {
                    trajectory.push(event.state);
                    return Ok(SimOutcome {
                        trajectory,
                        failed: true,
                        failure_time: Some(event.time),
                        failure_window: Some(w),
                    });
                }
            }
        }
        // pin the recorded time to the window boundary against round-off
        state.time = t_window + WINDOW_SECONDS;
        trajectory.push(state.clone());
    }
    Ok(SimOutcome {
        trajectory,
        failed: false,
        failure_time: None,
        failure_window: None,
    })
}

fn survives_constant(sim: &Simulator, c_rate: f64, duration: f64) -> Result<bool> {
    let dt = DEFAULT_DT.min(duration / 10.0);
    let steps = (duration / dt).ceil() as usize;
    let h = duration / steps as f64;
    let mut state = sim.init_full_charge();
    for _ in 0..steps {
        match sim.step(&state, c_rate, c_rate, h).map_err(|e| e.at_time(state.time))? {
            StepOutcome::Advanced(next) => state = next,
            StepOutcome::Failed(_) => return Ok(false),
        }
    }
    Ok(true)
}

/// Largest constant C-rate a fully charged cell sustains for `duration`
/// seconds without reaching the cutoff, bisected to 0.01C.
pub fn max_sustained_crate(params: &ParameterSet, duration: f64) -> Result<f64> {
    if !(duration > 0.0) {
        return Err(Error::Invalid(format!("duration must be positive, got {duration}")));
    }
    let sim = Simulator::new(params.clone())?;
    let mut low = 0.0;
    let mut high = 1.0;
    while survives_constant(&sim, high, duration)? {
        low = high;
        high *= 2.0;
        if high > 1e4 {
            return Err(Error::Invalid("no failing current found below 10^4 C".into()));
        }
    }
    while high - low > 0.01 {
        let mid = 0.5 * (low + high);
        if survives_constant(&sim, mid, duration)? {
            low = mid;
        } else {
            high = mid;
        }
    }
    Ok(low)
}
