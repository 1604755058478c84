use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::predictor::Predictor;
use super::rollout::{rollout_with, RolloutStart};
use crate::cycles::DriveCycle;
use crate::electrochem::{run_cycle, ParameterSet, Simulator, DEFAULT_DT};
use crate::error::{Error, Result};

/// Where a benchmark ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub cpu_model: Option<String>,
    pub simd: Vec<String>,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        });
        #[allow(unused_mut)]
        let mut simd = Vec::new();
        #[cfg(target_arch = "x86_64")]
        for (name, present) in [
            ("sse4.2", is_x86_feature_detected!("sse4.2")),
            ("avx2", is_x86_feature_detected!("avx2")),
            ("fma", is_x86_feature_detected!("fma")),
            ("avx512f", is_x86_feature_detected!("avx512f")),
        ] {
            if present {
                simd.push(name.to_string());
            }
        }
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
            simd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cycle_seed: u64,
    /// Windows covered by both the simulation and the rollout.
    pub windows: usize,
    pub repetitions: usize,
    pub simulator_runs: Vec<f64>,
    pub rollout_runs: Vec<f64>,
    /// Median wall times in seconds.
    pub simulator_seconds: f64,
    pub rollout_seconds: f64,
    pub ratio: f64,
    pub machine: MachineInfo,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time<T>(job: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let start = Instant::now();
    let out = job()?;
    Ok((start.elapsed().as_secs_f64(), out))
}

/// Times the simulator and a surrogate rollout on the same cycle and the
/// same number of windows. One warm-up run of each is discarded; the
/// reported times are medians of `repetitions` runs.
pub fn bench_compare<P: Predictor + ?Sized>(
    predictor: &P,
    params: &ParameterSet,
    cycle: &DriveCycle,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Invalid("need at least one repetition".into()));
    }
    let sim = Simulator::new(params.clone())?;
    let outcome = run_cycle(&sim, cycle, DEFAULT_DT)?;
    let windows = outcome.windows().max(1);
    let start = RolloutStart::from_state(&sim.init_full_charge());
    rollout_with(predictor, cycle, &start, None, windows)?;

    let mut simulator_runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        simulator_runs.push(time(|| run_cycle(&sim, cycle, DEFAULT_DT))?.0);
    }
    let mut rollout_runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        rollout_runs.push(time(|| rollout_with(predictor, cycle, &start, None, windows))?.0);
    }
    let simulator_seconds = median(&simulator_runs);
    let rollout_seconds = median(&rollout_runs);
    Ok(BenchReport {
        cycle_seed: cycle.seed,
        windows,
        repetitions,
        simulator_runs,
        rollout_runs,
        simulator_seconds,
        rollout_seconds,
        ratio: simulator_seconds / rollout_seconds,
        machine: MachineInfo::detect(),
    })
}
