use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predictor::Predictor;
use super::rollout::{rollout_with, RolloutStart, FAILURE_DECISION};
use crate::cycles::{CycleRecord, Dataset, DriveCycle, Sample, Split, WINDOW_SECONDS};
use crate::error::{Error, Result};
use crate::surrogate::{Prediction, SurrogateInput};

/// Thresholds of the failure table, as probabilities.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Mean squared, mean absolute and maximum absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTriple {
    pub l2: f64,
    pub l1: f64,
    pub linf: f64,
}

impl MetricTriple {
    /// Metrics of a set of scalar errors.
    pub fn from_errors(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self::default();
        }
        let n = errors.len() as f64;
        Self {
            l2: errors.iter().map(|e| e * e).sum::<f64>() / n,
            l1: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
            linf: errors.iter().fold(0.0, |m, e| m.max(e.abs())),
        }
    }

    /// Combines per-interval triples: means of `l2` and `l1`, max of `linf`.
    pub fn combine(parts: &[MetricTriple]) -> Self {
        if parts.is_empty() {
            return Self::default();
        }
        let n = parts.len() as f64;
        Self {
            l2: parts.iter().map(|m| m.l2).sum::<f64>() / n,
            l1: parts.iter().map(|m| m.l1).sum::<f64>() / n,
            linf: parts.iter().fold(0.0, |m, p| m.max(p.linf)),
        }
    }

    fn max(parts: &[MetricTriple]) -> Self {
        parts.iter().fold(Self::default(), |a, p| Self {
            l2: a.l2.max(p.l2),
            l1: a.l1.max(p.l1),
            linf: a.linf.max(p.linf),
        })
    }

    fn mean(parts: &[MetricTriple]) -> Self {
        if parts.is_empty() {
            return Self::default();
        }
        let n = parts.len() as f64;
        Self {
            l2: parts.iter().map(|m| m.l2).sum::<f64>() / n,
            l1: parts.iter().map(|m| m.l1).sum::<f64>() / n,
            linf: parts.iter().map(|m| m.linf).sum::<f64>() / n,
        }
    }

    fn is_consistent(&self) -> bool {
        self.l2 >= 0.0 && self.l1 >= 0.0 && self.l1 <= self.linf * (1.0 + 1e-12)
    }
}

/// One quantity aggregated per cycle and then across cycles, plus pooled over
/// every interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuantityMetrics {
    pub mean_over_cycles: MetricTriple,
    pub max_over_cycles: MetricTriple,
    pub pooled: MetricTriple,
}

impl QuantityMetrics {
    fn from_intervals(per_cycle: &[Vec<MetricTriple>]) -> Self {
        let cycles: Vec<MetricTriple> = per_cycle
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| MetricTriple::combine(c))
            .collect();
        let all: Vec<MetricTriple> = per_cycle.iter().flatten().copied().collect();
        Self {
            mean_over_cycles: MetricTriple::mean(&cycles),
            max_over_cycles: MetricTriple::max(&cycles),
            pooled: MetricTriple::combine(&all),
        }
    }
}

/// Failure outcomes of the test cycles at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub fn_percent: f64,
    pub fp_percent: f64,
}

impl ThresholdRow {
    pub fn total(&self) -> usize {
        self.true_positive + self.true_negative + self.false_negative + self.false_positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    OneStep,
    KStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: EvalKind,
    pub n_cycles: usize,
    pub n_intervals: usize,
    pub voltage: QuantityMetrics,
    pub c_n: QuantityMetrics,
    pub c_p: QuantityMetrics,
    /// Empty for one-step reports.
    pub failure: Vec<ThresholdRow>,
    pub clamped: usize,
}

impl EvalReport {
    /// Checks the invariants every report must satisfy.
    pub fn check(&self) -> Result<()> {
        let fail = |what: String| Err(Error::Integrity(what));
        for (name, q) in [("voltage", &self.voltage), ("c_n", &self.c_n), ("c_p", &self.c_p)] {
            for m in [q.mean_over_cycles, q.max_over_cycles, q.pooled] {
                if !m.is_consistent() {
                    return fail(format!("{name}: inconsistent metric triple {m:?}"));
                }
            }
            if q.mean_over_cycles.linf > q.max_over_cycles.linf * (1.0 + 1e-12) {
                return fail(format!("{name}: mean of per-cycle maxima exceeds the global max"));
            }
            if q.max_over_cycles.linf != q.pooled.linf {
                return fail(format!("{name}: pooled max differs from the max over cycles"));
            }
        }
        for row in &self.failure {
            if row.total() != self.n_cycles {
                return fail(format!("confusion counts at {} sum to {}", row.threshold, row.total()));
            }
            for r in [row.fn_percent, row.fp_percent] {
                if !(0.0..=100.0).contains(&r) {
                    return fail(format!("rate {r} outside [0, 100]"));
                }
            }
        }
        for pair in self.failure.windows(2) {
            if pair[0].threshold <= pair[1].threshold
                && (pair[1].false_negative < pair[0].false_negative || pair[1].false_positive > pair[0].false_positive)
            {
                return fail(format!(
                    "FN/FP not monotone between thresholds {} and {}",
                    pair[0].threshold, pair[1].threshold
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct IntervalErrors {
    voltage: MetricTriple,
    c_n: MetricTriple,
    c_p: MetricTriple,
}

fn grid_errors(pred: &[f64], truth: &[f32]) -> MetricTriple {
    let errors: Vec<f64> = pred.iter().zip(truth).map(|(p, &t)| p - t as f64).collect();
    MetricTriple::from_errors(&errors)
}

fn interval_errors(voltage: f64, c_n: &[f64], c_p: &[f64], target: &Sample) -> IntervalErrors {
    IntervalErrors {
        voltage: MetricTriple::from_errors(&[voltage - target.v_t100 as f64]),
        c_n: grid_errors(c_n, &target.next_c_n),
        c_p: grid_errors(c_p, &target.next_c_p),
    }
}

fn report(kind: EvalKind, per_cycle: &[Vec<IntervalErrors>], failure: Vec<ThresholdRow>, clamped: usize) -> EvalReport {
    let pick = |f: fn(&IntervalErrors) -> MetricTriple| {
        let v: Vec<Vec<MetricTriple>> = per_cycle.iter().map(|c| c.iter().map(f).collect()).collect();
        QuantityMetrics::from_intervals(&v)
    };
    EvalReport {
        kind,
        n_cycles: per_cycle.len(),
        n_intervals: per_cycle.iter().map(Vec::len).sum(),
        voltage: pick(|e| e.voltage),
        c_n: pick(|e| e.c_n),
        c_p: pick(|e| e.c_p),
        failure,
        clamped,
    }
}

fn split_cycles(dataset: &Dataset, split: Split) -> Result<Vec<(&CycleRecord, &[Sample])>> {
    let cycles: Vec<_> = dataset.cycles_in(split).filter(|(_, s)| !s.is_empty()).collect();
    if cycles.is_empty() {
        return Err(Error::Invalid(format!("dataset has no {split:?} cycles to evaluate")));
    }
    Ok(cycles)
}

/// Predicts every interval of `split` from its true inputs.
pub fn one_step_eval<P: Predictor + ?Sized>(predictor: &P, dataset: &Dataset, split: Split) -> Result<EvalReport> {
    let cycles = split_cycles(dataset, split)?;
    let results = cycles
        .par_iter()
        .map(|(_, samples)| {
            let mut clamped = 0;
            let errors = samples
                .iter()
                .map(|s| {
                    let p: Prediction = predictor.predict(&SurrogateInput::from_sample(s))?;
                    clamped += p.clamped;
                    Ok(interval_errors(p.voltage, &p.c_n, &p.c_p, s))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((errors, clamped))
        })
        .collect::<Result<Vec<_>>>()?;
    let clamped = results.iter().map(|r| r.1).sum();
    let per_cycle: Vec<_> = results.into_iter().map(|r| r.0).collect();
    Ok(report(EvalKind::OneStep, &per_cycle, Vec::new(), clamped))
}

/// True and predicted voltage of one rollout, both starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageTrace {
    pub cycle_id: u64,
    pub v_true: Vec<f64>,
    pub v_pred: Vec<f64>,
    pub true_failure_window: Option<usize>,
    pub predicted_failure_window: Option<usize>,
}

impl VoltageTrace {
    /// Rows `t, V_true, V_pred`; a column is left empty past its trajectory's end.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,V_true,V_pred\n");
        let fmt = |v: Option<&f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for k in 0..self.v_true.len().max(self.v_pred.len()) {
            out.push_str(&format!(
                "{},{},{}\n",
                k as f64 * WINDOW_SECONDS,
                fmt(self.v_true.get(k)),
                fmt(self.v_pred.get(k))
            ));
        }
        out
    }
}

struct CycleRollout {
    errors: Vec<IntervalErrors>,
    p_fail: Vec<f64>,
    truth: Option<usize>,
    clamped: usize,
    trace: VoltageTrace,
}

/// Rolls out one recorded cycle over its true length without stopping; the
/// decision-rule trajectory is the prefix up to the first `p_fail >= 0.5`.
fn roll_cycle<P: Predictor + ?Sized>(predictor: &P, record: &CycleRecord, samples: &[Sample]) -> Result<CycleRollout> {
    let cycle = DriveCycle::new(record.currents.clone(), record.seed)?;
    let start = RolloutStart::from_sample(&samples[0]);
    let full = rollout_with(predictor, &cycle, &start, None, samples.len())?;
    let decided = full.truncated(FAILURE_DECISION);
    let errors = (0..decided.len())
        .map(|k| interval_errors(decided.voltages[k], &decided.c_n[k], &decided.c_p[k], &samples[k]))
        .collect();
    let mut v_true = vec![samples[0].v_t as f64];
    v_true.extend(samples.iter().map(|s| s.v_t100 as f64));
    let mut v_pred = vec![start.voltage];
    v_pred.extend(&decided.voltages);
    Ok(CycleRollout {
        errors,
        p_fail: full.p_fail,
        truth: record.failure_window,
        clamped: decided.clamped,
        trace: VoltageTrace {
            cycle_id: record.id,
            v_true,
            v_pred,
            true_failure_window: record.failure_window,
            predicted_failure_window: decided.failure_window,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    TruePositive,
    TrueNegative,
    FalseNegative,
    FalsePositive,
}

fn classify(p_fail: &[f64], truth: Option<usize>, threshold: f64) -> Outcome {
    let flag = p_fail.iter().position(|&p| p >= threshold);
    match (truth, flag) {
        (Some(w), Some(f)) if f < w => Outcome::FalsePositive,
        (Some(w), Some(f)) if f == w => Outcome::TruePositive,
        (Some(_), _) => Outcome::FalseNegative,
        (None, Some(_)) => Outcome::FalsePositive,
        (None, None) => Outcome::TrueNegative,
    }
}

fn threshold_rows(cycles: &[(&[f64], Option<usize>)], thresholds: &[f64]) -> Vec<ThresholdRow> {
    let n = cycles.len();
    thresholds
        .iter()
        .map(|&threshold| {
            let mut row = ThresholdRow {
                threshold,
                true_positive: 0,
                true_negative: 0,
                false_negative: 0,
                false_positive: 0,
                fn_percent: 0.0,
                fp_percent: 0.0,
            };
            for (p, truth) in cycles {
                match classify(p, *truth, threshold) {
                    Outcome::TruePositive => row.true_positive += 1,
                    Outcome::TrueNegative => row.true_negative += 1,
                    Outcome::FalseNegative => row.false_negative += 1,
                    Outcome::FalsePositive => row.false_positive += 1,
                }
            }
            if n > 0 {
                row.fn_percent = 100.0 * row.false_negative as f64 / n as f64;
                row.fp_percent = 100.0 * row.false_positive as f64 / n as f64;
            }
            row
        })
        .collect()
}

fn roll_split<P: Predictor + ?Sized>(predictor: &P, dataset: &Dataset, split: Split) -> Result<Vec<CycleRollout>> {
    let cycles = split_cycles(dataset, split)?;
    cycles
        .par_iter()
        .map(|(record, samples)| roll_cycle(predictor, record, samples))
        .collect()
}

/// K-step rollout of every cycle in `split` from its fully charged start,
/// compared with the recorded trajectory, plus the failure threshold table.
pub fn kstep_eval<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    split: Split,
    thresholds: &[f64],
) -> Result<(EvalReport, Vec<VoltageTrace>)> {
    let rolled = roll_split(predictor, dataset, split)?;
    let per_cycle: Vec<_> = rolled.iter().map(|r| r.errors.clone()).collect();
    let flags: Vec<_> = rolled.iter().map(|r| (r.p_fail.as_slice(), r.truth)).collect();
    let failure = threshold_rows(&flags, thresholds);
    let clamped = rolled.iter().map(|r| r.clamped).sum();
    let report = report(EvalKind::KStep, &per_cycle, failure, clamped);
    Ok((report, rolled.into_iter().map(|r| r.trace).collect()))
}

/// FN/FP percentages over the cycles of `split` when failure is flagged at
/// the first window with `p_fail >= threshold`.
pub fn failure_threshold_table<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    split: Split,
    thresholds: &[f64],
) -> Result<Vec<ThresholdRow>> {
    let rolled = roll_split(predictor, dataset, split)?;
    let flags: Vec<_> = rolled.iter().map(|r| (r.p_fail.as_slice(), r.truth)).collect();
    Ok(threshold_rows(&flags, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_of_scalar_errors() {
        let m = MetricTriple::from_errors(&[0.1, -0.3]);
        assert!((m.l2 - 0.05).abs() < 1e-15);
        assert!((m.l1 - 0.2).abs() < 1e-15);
        assert_eq!(m.linf, 0.3);
    }

    #[test]
    fn classification_rules() {
        let p = [0.05, 0.15, 0.6];
        assert_eq!(classify(&p, Some(2), 0.1), Outcome::FalsePositive);
        assert_eq!(classify(&p, Some(2), 0.5), Outcome::TruePositive);
        assert_eq!(classify(&p, Some(2), 0.7), Outcome::FalseNegative);
        assert_eq!(classify(&p, None, 0.5), Outcome::FalsePositive);
        assert_eq!(classify(&p, None, 0.7), Outcome::TrueNegative);
        assert_eq!(classify(&p, Some(2), 0.0), Outcome::FalsePositive);
    }
}
