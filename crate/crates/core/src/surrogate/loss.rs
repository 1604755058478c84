use serde::{Deserialize, Serialize};

use super::model::Prediction;
use crate::cycles::Sample;
use crate::electrochem::GRID_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub voltage: f64,
    pub failure: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            voltage: 10.0,
            failure: 1.0,
        }
    }
}

/// Weighted loss terms; [`total`](Self::total) is their plain sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    /// Mean squared error over the 800 concentration values.
    pub concentration: f64,
    /// `w_V · (V̂ − V)²`, volts squared.
    pub voltage: f64,
    /// `w_F · (p − fail)²`.
    pub failure: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.concentration + self.voltage + self.failure
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }

    pub(crate) fn add(&mut self, other: &LossComponents) {
        self.concentration += other.concentration;
        self.voltage += other.voltage;
        self.failure += other.failure;
    }

    pub(crate) fn scaled(&self, s: f64) -> LossComponents {
        LossComponents {
            concentration: self.concentration * s,
            voltage: self.voltage * s,
            failure: self.failure * s,
        }
    }
}

pub fn loss(pred: &Prediction, target: &Sample, weights: LossWeights) -> LossComponents {
    let mut sq = 0.0;
    for (p, t) in pred
        .c_n
        .iter()
        .zip(&target.next_c_n)
        .chain(pred.c_p.iter().zip(&target.next_c_p))
    {
        let d = p - *t as f64;
        sq += d * d;
    }
    let dv = pred.voltage - target.v_t100 as f64;
    let df = pred.p_fail - target.fail as f64;
    LossComponents {
        concentration: sq / (2 * GRID_LEN) as f64,
        voltage: weights.voltage * dv * dv,
        failure: weights.failure * df * df,
    }
}

/// Derivatives of `scale · loss` with respect to the predicted voltage, each
/// predicted concentration (written into `d_conc`, 800 values) and `p_fail`.
pub(crate) fn loss_gradient(
    pred: &Prediction,
    target: &Sample,
    weights: LossWeights,
    scale: f64,
    d_conc: &mut [f64],
) -> (f64, f64) {
    let k = 2.0 * scale / (2 * GRID_LEN) as f64;
    for (d, (p, t)) in d_conc.iter_mut().zip(
        pred.c_n
            .iter()
            .zip(&target.next_c_n)
            .chain(pred.c_p.iter().zip(&target.next_c_p)),
    ) {
        *d = k * (p - *t as f64);
    }
    let d_v = 2.0 * scale * weights.voltage * (pred.voltage - target.v_t100 as f64);
    let d_p = 2.0 * scale * weights.failure * (pred.p_fail - target.fail as f64);
    (d_v, d_p)
}
