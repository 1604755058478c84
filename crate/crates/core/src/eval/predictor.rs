use std::collections::HashMap;

use crate::cycles::{samples_from_outcome, Dataset, Sample};
use crate::electrochem::SimOutcome;
use crate::error::{Error, Result};
use crate::surrogate::{Prediction, Surrogate, SurrogateInput, SurrogateWeights};

/// Anything that maps a window's inputs to the next window's state.
pub trait Predictor: Sync {
    fn predict(&self, input: &SurrogateInput) -> Result<Prediction>;
}

impl Predictor for SurrogateWeights {
    fn predict(&self, input: &SurrogateInput) -> Result<Prediction> {
        SurrogateWeights::predict(self, input)
    }
}

impl Predictor for Surrogate {
    fn predict(&self, input: &SurrogateInput) -> Result<Prediction> {
        Surrogate::predict(self, input)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, input: &SurrogateInput) -> Result<Prediction> {
        (**self).predict(input)
    }
}

type Key = Vec<u32>;

fn key(input: &SurrogateInput) -> Key {
    let mut k = Vec::with_capacity(input.c_n.len() + input.c_p.len() + 3);
    k.extend(input.c_n.iter().chain(&input.c_p).map(|&v| (v as f32).to_bits()));
    k.extend([input.voltage, input.i_t, input.i_t100].map(|v| (v as f32).to_bits()));
    k
}

/// Returns recorded ground truth for inputs it has seen. Because its outputs
/// are exactly the next recorded inputs, rollouts driven by it replay the
/// simulator trajectory and every error metric is zero.
#[derive(Debug, Clone, Default)]
pub struct ReplayOracle {
    table: HashMap<Key, Prediction>,
}

impl ReplayOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut oracle = Self::new();
        oracle.extend(&dataset.samples);
        oracle
    }

    pub fn from_outcome(outcome: &SimOutcome, currents: &[f64]) -> Self {
        let mut oracle = Self::new();
        oracle.extend(&samples_from_outcome(outcome, currents));
        oracle
    }

    pub fn extend<'a>(&mut self, samples: impl IntoIterator<Item = &'a Sample>) {
        for s in samples {
            let target = Prediction {
                voltage: s.v_t100 as f64,
                c_n: s.next_c_n.iter().map(|&v| v as f64).collect(),
                c_p: s.next_c_p.iter().map(|&v| v as f64).collect(),
                p_fail: s.fail as f64,
                clamped: 0,
            };
            self.table.insert(key(&SurrogateInput::from_sample(s)), target);
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Predictor for ReplayOracle {
    fn predict(&self, input: &SurrogateInput) -> Result<Prediction> {
        self.table
            .get(&key(input))
            .cloned()
            .ok_or_else(|| Error::Model("replay oracle has no record for this input".into()))
    }
}
