use serde::{Deserialize, Serialize};

use super::predictor::Predictor;
use crate::cycles::{DriveCycle, Sample};
use crate::electrochem::CellState;
use crate::error::{Error, Result};
use crate::surrogate::SurrogateInput;

/// Probability at which a rollout declares failure.
pub const FAILURE_DECISION: f64 = 0.5;

/// The part of a cell state the surrogate sees.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStart {
    pub c_n: Vec<f64>,
    pub c_p: Vec<f64>,
    pub voltage: f64,
}

impl RolloutStart {
    pub fn from_state(state: &CellState) -> Self {
        Self {
            c_n: state.c_n.clone(),
            c_p: state.c_p.clone(),
            voltage: state.voltage,
        }
    }

    /// The input state of a recorded window.
    pub fn from_sample(sample: &Sample) -> Self {
        Self {
            c_n: sample.c_n.iter().map(|&v| v as f64).collect(),
            c_p: sample.c_p.iter().map(|&v| v as f64).collect(),
            voltage: sample.v_t as f64,
        }
    }
}

/// Predicted state after each window; entry `k` is the state at `100 (k + 1)` s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub voltages: Vec<f64>,
    pub c_n: Vec<Vec<f64>>,
    pub c_p: Vec<Vec<f64>>,
    pub p_fail: Vec<f64>,
    /// First window whose failure probability reached the stop threshold.
    pub failure_window: Option<usize>,
    /// Input values clamped into range over the whole rollout.
    pub clamped: usize,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.voltages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltages.is_empty()
    }

    /// The rollout as if it had stopped at the first window with `p_fail >= threshold`.
    pub fn truncated(&self, threshold: f64) -> Rollout {
        match self.p_fail.iter().position(|&p| p >= threshold) {
            None => Rollout {
                failure_window: None,
                ..self.clone()
            },
            Some(k) => Rollout {
                voltages: self.voltages[..=k].to_vec(),
                c_n: self.c_n[..=k].to_vec(),
                c_p: self.c_p[..=k].to_vec(),
                p_fail: self.p_fail[..=k].to_vec(),
                failure_window: Some(k),
                clamped: self.clamped,
            },
        }
    }
}

/// Feeds predictions back as inputs window after window, stopping after
/// `max_windows`, at the end of `cycle`, or when `p_fail >= stop` (if given).
pub fn rollout_with<P: Predictor + ?Sized>(
    predictor: &P,
    cycle: &DriveCycle,
    init: &RolloutStart,
    stop: Option<f64>,
    max_windows: usize,
) -> Result<Rollout> {
    if cycle.currents.len() < 2 {
        return Err(Error::Invalid("a drive cycle needs at least two breakpoints".into()));
    }
    let windows = cycle.windows().min(max_windows);
    let mut out = Rollout {
        voltages: Vec::with_capacity(windows),
        c_n: Vec::with_capacity(windows),
        c_p: Vec::with_capacity(windows),
        p_fail: Vec::with_capacity(windows),
        failure_window: None,
        clamped: 0,
    };
    let mut input = SurrogateInput {
        c_n: init.c_n.clone(),
        c_p: init.c_p.clone(),
        voltage: init.voltage,
        i_t: 0.0,
        i_t100: 0.0,
    };
    for k in 0..windows {
        input.i_t = cycle.currents[k];
        input.i_t100 = cycle.currents[k + 1];
        let p = predictor.predict(&input)?;
        out.clamped += p.clamped;
        out.voltages.push(p.voltage);
        out.p_fail.push(p.p_fail);
        out.c_n.push(p.c_n.clone());
        out.c_p.push(p.c_p.clone());
        input.c_n = p.c_n;
        input.c_p = p.c_p;
        input.voltage = p.voltage;
        if stop.is_some_and(|s| p.p_fail >= s) {
            out.failure_window = Some(k);
            break;
        }
    }
    Ok(out)
}

/// K-step prediction over the whole cycle with the 0.5 failure decision.
pub fn rollout<P: Predictor + ?Sized>(predictor: &P, cycle: &DriveCycle, init: &RolloutStart) -> Result<Rollout> {
    rollout_with(predictor, cycle, init, Some(FAILURE_DECISION), usize::MAX)
}
