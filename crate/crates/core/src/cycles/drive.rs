use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds between current breakpoints (one prediction window).
pub const WINDOW_SECONDS: f64 = 100.0;
/// Upper end of the uniform drive-cycle current distribution, in C.
pub const MAX_CYCLE_CRATE: f64 = 6.0;

/// Piecewise-linear current demand with one C-rate breakpoint per 100 s boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveCycle {
    pub currents: Vec<f64>,
    pub seed: u64,
}

impl DriveCycle {
    pub fn new(currents: Vec<f64>, seed: u64) -> Result<Self> {
        if currents.len() < 2 {
            return Err(Error::Invalid("a drive cycle needs at least two breakpoints".into()));
        }
        if let Some(c) = currents.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Invalid(format!("C-rate {c} is not a finite non-negative value")));
        }
        Ok(Self { currents, seed })
    }

    /// Constant current over `windows` windows.
    pub fn constant(c_rate: f64, windows: usize) -> Self {
        Self {
            currents: vec![c_rate; windows + 1],
            seed: 0,
        }
    }

    pub fn windows(&self) -> usize {
        self.currents.len() - 1
    }

    /// Demanded C-rate at time `t` (seconds from cycle start), held after the last breakpoint.
    pub fn current_at(&self, t: f64) -> f64 {
        let pos = (t / WINDOW_SECONDS).max(0.0);
        let k = pos.floor() as usize;
        if k >= self.windows() {
            return self.currents[self.windows()];
        }
        let frac = pos - k as f64;
        self.currents[k] + frac * (self.currents[k + 1] - self.currents[k])
    }

    /// Every breakpoint divided by `gamma`: the aged-cell equivalent demand.
    pub fn scaled(&self, gamma: f64) -> DriveCycle {
        DriveCycle {
            currents: self.currents.iter().map(|c| c / gamma).collect(),
            seed: self.seed,
        }
    }
}

/// Random drive cycle with `n_windows + 1` breakpoints drawn i.i.d. uniform
/// on `[0, 6]` C.
///
/// The generator is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64(seed)`),
/// each breakpoint being `6 * u` for `u` the next `f64` sample in `[0, 1)`.
pub fn random_cycle(seed: u64, n_windows: usize) -> Result<DriveCycle> {
    if n_windows < 2 {
        return Err(Error::Invalid(format!("need at least 2 windows, got {n_windows}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let currents = (0..=n_windows).map(|_| MAX_CYCLE_CRATE * rng.gen::<f64>()).collect();
    Ok(DriveCycle { currents, seed })
}
