use rayon::prelude::*;
use serde::Serialize;

use super::dataset::{digest_hex, samples_from_outcome, CycleRecord, Dataset, Manifest, Sample, Split, FORMAT_VERSION};
use super::drive::{random_cycle, DriveCycle, MAX_CYCLE_CRATE, WINDOW_SECONDS};
use crate::electrochem::{run_cycle, ParameterSet, Simulator, DEFAULT_DT};
use crate::error::{Error, Result};

/// Knobs shared by the dataset builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenConfig {
    /// Windows per random drive cycle.
    pub n_windows: usize,
    /// Worker threads; output does not depend on this.
    pub threads: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_windows: 40,
            threads: 1,
        }
    }
}

pub(crate) fn with_threads<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

struct Simulated {
    record: CycleRecord,
    samples: Vec<Sample>,
}

fn simulate_one(sim: &Simulator, id: u64, split: Split, cycle: &DriveCycle) -> Simulated {
    let mut record = CycleRecord {
        id,
        seed: cycle.seed,
        split,
        currents: cycle.currents.clone(),
        n_samples: 0,
        failure_window: None,
        failure_time: None,
        skipped: None,
    };
    match run_cycle(sim, cycle, DEFAULT_DT) {
        Ok(outcome) => {
            let samples = samples_from_outcome(&outcome, &cycle.currents);
            record.n_samples = samples.len();
            record.failure_window = outcome.failure_window;
            record.failure_time = outcome.failure_time;
            Simulated { record, samples }
        }
        Err(e) => {
            record.skipped = Some(e.to_string());
            Simulated {
                record,
                samples: Vec::new(),
            }
        }
    }
}

fn assemble(
    params: &ParameterSet,
    kind: &str,
    base_seed: u64,
    n_windows: usize,
    digest: String,
    parts: Vec<Simulated>,
) -> Dataset {
    let mut manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        base_seed,
        n_windows,
        n_train_cycles: 0,
        n_test_cycles: 0,
        n_train_samples: 0,
        n_test_samples: 0,
        n_failure_samples: 0,
        skipped_cycles: 0,
        config_digest: digest,
        v_cut: params.V_cut,
        v_full: params.ocv_full(),
        cycles: Vec::with_capacity(parts.len()),
    };
    let mut samples = Vec::new();
    for part in parts {
        let r = &part.record;
        if r.skipped.is_some() {
            manifest.skipped_cycles += 1;
        } else {
            match r.split {
                Split::Train => {
                    manifest.n_train_cycles += 1;
                    manifest.n_train_samples += r.n_samples;
                }
                Split::Test => {
                    manifest.n_test_cycles += 1;
                    manifest.n_test_samples += r.n_samples;
                }
            }
        }
        manifest.n_failure_samples += part.samples.iter().filter(|s| s.failed()).count();
        manifest.cycles.push(part.record);
        samples.extend(part.samples);
    }
    Dataset { manifest, samples }
}

#[derive(Serialize)]
struct DriveDigest<'a> {
    kind: &'a str,
    params: &'a ParameterSet,
    n_train_cycles: usize,
    n_test_cycles: usize,
    base_seed: u64,
    n_windows: usize,
    dt: f64,
}

/// Simulates `n_train_cycles + n_test_cycles` random drive cycles seeded
/// `base_seed + index`; the first `n_train_cycles` form the train split.
pub fn build_dataset(
    params: &ParameterSet,
    n_train_cycles: usize,
    n_test_cycles: usize,
    base_seed: u64,
    config: GenConfig,
) -> Result<Dataset> {
    if n_train_cycles == 0 || n_test_cycles == 0 {
        return Err(Error::Invalid("need at least one train and one test cycle".into()));
    }
    let sim = Simulator::new(params.clone())?;
    let total = n_train_cycles + n_test_cycles;
    let cycles = (0..total)
        .map(|i| random_cycle(base_seed.wrapping_add(i as u64), config.n_windows))
        .collect::<Result<Vec<_>>>()?;
    let parts = with_threads(config.threads, || {
        cycles
            .par_iter()
            .enumerate()
            .map(|(i, cycle)| {
                let split = if i < n_train_cycles { Split::Train } else { Split::Test };
                simulate_one(&sim, i as u64, split, cycle)
            })
            .collect::<Vec<_>>()
    });
    let digest = digest_hex(
        serde_json::to_string(&DriveDigest {
            kind: "drive",
            params,
            n_train_cycles,
            n_test_cycles,
            base_seed,
            n_windows: config.n_windows,
            dt: DEFAULT_DT,
        })?
        .as_bytes(),
    );
    Ok(assemble(params, "drive", base_seed, config.n_windows, digest, parts))
}

#[derive(Serialize)]
struct ConstantDigest<'a> {
    kind: &'a str,
    params: &'a ParameterSet,
    crates: &'a [f64],
    repeats: usize,
    dt: f64,
}

/// One full constant-current discharge per C-rate (repeated `repeats` times),
/// all placed in the train split.
pub fn constant_current_dataset(
    params: &ParameterSet,
    crates: &[f64],
    repeats: usize,
    config: GenConfig,
) -> Result<Dataset> {
    if crates.is_empty() || repeats == 0 {
        return Err(Error::Invalid("need at least one C-rate and one repeat".into()));
    }
    if let Some(c) = crates.iter().find(|c| !(**c > 0.0 && **c <= MAX_CYCLE_CRATE)) {
        return Err(Error::Invalid(format!("C-rate {c} outside (0, 6]")));
    }
    let sim = Simulator::new(params.clone())?;
    // long enough to outlast a discharge at the given rate
    let windows_for = |c: f64| ((1.5 * 3600.0 / c) / WINDOW_SECONDS).ceil() as usize + 2;
    let unique = with_threads(config.threads, || {
        crates
            .par_iter()
            .enumerate()
            .map(|(i, &c)| simulate_one(&sim, i as u64, Split::Train, &DriveCycle::constant(c, windows_for(c))))
            .collect::<Vec<_>>()
    });
    let mut parts = Vec::with_capacity(unique.len() * repeats);
    for r in 0..repeats {
        for u in &unique {
            let mut record = u.record.clone();
            record.id = (r * crates.len()) as u64 + u.record.id;
            parts.push(Simulated {
                record,
                samples: u.samples.clone(),
            });
        }
    }
    let digest = digest_hex(
        serde_json::to_string(&ConstantDigest {
            kind: "constant-current",
            params,
            crates,
            repeats,
            dt: DEFAULT_DT,
        })?
        .as_bytes(),
    );
    let max_windows = crates.iter().map(|&c| windows_for(c)).max().unwrap_or(0);
    Ok(assemble(params, "constant-current", 0, max_windows, digest, parts))
}
