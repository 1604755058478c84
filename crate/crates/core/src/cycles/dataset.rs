//! Windowed training samples and the on-disk dataset format.
//!
//! A dataset lives in a directory holding `manifest.json` and `samples.bin`.
//! The payload is a sequence of records of 1605 little-endian `f32` values:
//! `c_n[400], c_p[400], V_t, I_t, I_t100, fail, c_n'[400], c_p'[400], V_t100`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::electrochem::{CellState, SimOutcome, GRID_LEN};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const RECORD_VALUES: usize = 4 * GRID_LEN + 5;
pub const RECORD_BYTES: usize = RECORD_VALUES * 4;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "samples.bin";

/// One 100-s training record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub c_n: Vec<f32>,
    pub c_p: Vec<f32>,
    pub v_t: f32,
    pub i_t: f32,
    pub i_t100: f32,
    pub fail: f32,
    pub next_c_n: Vec<f32>,
    pub next_c_p: Vec<f32>,
    pub v_t100: f32,
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

impl Sample {
    pub fn from_states(start: &CellState, end: &CellState, i_t: f64, i_t100: f64, failed: bool) -> Self {
        Self {
            c_n: to_f32(&start.c_n),
            c_p: to_f32(&start.c_p),
            v_t: start.voltage as f32,
            i_t: i_t as f32,
            i_t100: i_t100 as f32,
            fail: if failed { 1.0 } else { 0.0 },
            next_c_n: to_f32(&end.c_n),
            next_c_p: to_f32(&end.c_p),
            v_t100: end.voltage as f32,
        }
    }

    pub fn failed(&self) -> bool {
        self.fail == 1.0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
        self.c_n.iter().for_each(|&v| put(v));
        self.c_p.iter().for_each(|&v| put(v));
        put(self.v_t);
        put(self.i_t);
        put(self.i_t100);
        put(self.fail);
        self.next_c_n.iter().for_each(|&v| put(v));
        self.next_c_p.iter().for_each(|&v| put(v));
        put(self.v_t100);
    }

    /// Decodes one record; `offset` is the record's byte position for error reporting.
    fn read_le(bytes: &[u8], offset: usize) -> Result<Self> {
        debug_assert_eq!(bytes.len(), RECORD_BYTES);
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format {
                offset: offset + 4 * k,
                reason: "non-finite value".into(),
            });
        }
        let grid_check = |start: usize| -> Result<()> {
            for (k, v) in values[start..start + GRID_LEN].iter().enumerate() {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Format {
                        offset: offset + 4 * (start + k),
                        reason: format!("scaled concentration {v} outside [0, 1]"),
                    });
                }
            }
            Ok(())
        };
        let g = GRID_LEN;
        for start in [0, g, 2 * g + 4, 3 * g + 4] {
            grid_check(start)?;
        }
        let fail = values[2 * g + 3];
        if fail != 0.0 && fail != 1.0 {
            return Err(Error::Format {
                offset: offset + 4 * (2 * g + 3),
                reason: format!("failure flag {fail} is not 0 or 1"),
            });
        }
        Ok(Self {
            c_n: values[0..g].to_vec(),
            c_p: values[g..2 * g].to_vec(),
            v_t: values[2 * g],
            i_t: values[2 * g + 1],
            i_t100: values[2 * g + 2],
            fail,
            next_c_n: values[2 * g + 4..3 * g + 4].to_vec(),
            next_c_p: values[3 * g + 4..4 * g + 4].to_vec(),
            v_t100: values[4 * g + 4],
        })
    }
}

/// Samples for consecutive recorded states of one simulated cycle.
pub fn samples_from_outcome(outcome: &SimOutcome, currents: &[f64]) -> Vec<Sample> {
    outcome
        .trajectory
        .windows(2)
        .enumerate()
        .map(|(k, pair)| {
            let failed = outcome.failure_window == Some(k);
            Sample::from_states(&pair[0], &pair[1], currents[k], currents[k + 1], failed)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Provenance of one simulated cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub id: u64,
    pub seed: u64,
    pub split: Split,
    pub currents: Vec<f64>,
    pub n_samples: usize,
    pub failure_window: Option<usize>,
    pub failure_time: Option<f64>,
    /// Simulator error message when the cycle was skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub base_seed: u64,
    pub n_windows: usize,
    pub n_train_cycles: usize,
    pub n_test_cycles: usize,
    pub n_train_samples: usize,
    pub n_test_samples: usize,
    pub n_failure_samples: usize,
    /// Cycles dropped because the simulator errored.
    pub skipped_cycles: usize,
    pub config_digest: String,
    pub v_cut: f64,
    pub v_full: f64,
    pub cycles: Vec<CycleRecord>,
}

impl Manifest {
    pub fn total_samples(&self) -> usize {
        self.n_train_samples + self.n_test_samples
    }

    fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let count = |split: Split| -> (usize, usize) {
            let cycles = self.cycles.iter().filter(|c| c.split == split && c.skipped.is_none());
            cycles.fold((0, 0), |(n, s), c| (n + 1, s + c.n_samples))
        };
        let (train_cycles, train_samples) = count(Split::Train);
        let (test_cycles, test_samples) = count(Split::Test);
        let skipped = self.cycles.iter().filter(|c| c.skipped.is_some()).count();
        if train_cycles != self.n_train_cycles
            || test_cycles != self.n_test_cycles
            || train_samples != self.n_train_samples
            || test_samples != self.n_test_samples
            || skipped != self.skipped_cycles
        {
            return Err(Error::Integrity("manifest counts disagree with the cycle table".into()));
        }
        for c in &self.cycles {
            if c.skipped.is_some() && c.n_samples != 0 {
                return Err(Error::Integrity(format!("skipped cycle {} lists samples", c.id)));
            }
            if let Some(w) = c.failure_window {
                if c.n_samples != w + 1 {
                    return Err(Error::Integrity(format!(
                        "cycle {} fails in window {w} but lists {} samples",
                        c.id, c.n_samples
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples plus the manifest describing where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Samples grouped by cycle in manifest order.
    pub samples: Vec<Sample>,
}

/// Hex SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Dataset {
    /// Per-cycle sample slices, skipping cycles without samples.
    pub fn cycles(&self) -> impl Iterator<Item = (&CycleRecord, &[Sample])> {
        let mut start = 0;
        self.manifest
            .cycles
            .iter()
            .filter(|c| c.skipped.is_none())
            .map(move |c| {
                let slice = &self.samples[start..start + c.n_samples];
                start += c.n_samples;
                (c, slice)
            })
    }

    pub fn cycles_in(&self, split: Split) -> impl Iterator<Item = (&CycleRecord, &[Sample])> {
        self.cycles().filter(move |(c, _)| c.split == split)
    }

    pub fn samples_in(&self, split: Split) -> Vec<&Sample> {
        self.cycles_in(split).flat_map(|(_, s)| s.iter()).collect()
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.failed()).count() as f64 / self.samples.len() as f64
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.samples.len() * RECORD_BYTES);
        for s in &self.samples {
            s.write_le(&mut out);
        }
        out
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serializes")
    }

    /// Parses a manifest and payload, checking that they agree.
    pub fn from_parts(manifest: &[u8], payload: &[u8]) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(manifest).map_err(|e| Error::Format {
            offset: json_byte_offset(manifest, e.line(), e.column()),
            reason: format!("manifest: {e}"),
        })?;
        manifest.check()?;
        let expected = manifest.total_samples();
        if !payload.len().is_multiple_of(RECORD_BYTES) || payload.len() / RECORD_BYTES != expected {
            return Err(Error::Integrity(format!(
                "payload holds {} bytes, manifest expects {} records of {RECORD_BYTES} bytes",
                payload.len(),
                expected
            )));
        }
        let samples = payload
            .chunks_exact(RECORD_BYTES)
            .enumerate()
            .map(|(k, rec)| Sample::read_le(rec, k * RECORD_BYTES))
            .collect::<Result<Vec<_>>>()?;
        let dataset = Self { manifest, samples };
        let mut start = 0;
        for c in dataset.manifest.cycles.iter().filter(|c| c.skipped.is_none()) {
            let slice = &dataset.samples[start..start + c.n_samples];
            let fails = slice.iter().filter(|s| s.failed()).count();
            let expected_fails = usize::from(c.failure_window.is_some());
            if fails != expected_fails || (expected_fails == 1 && !slice[slice.len() - 1].failed()) {
                return Err(Error::Integrity(format!(
                    "cycle {} failure flags disagree with its manifest entry",
                    c.id
                )));
            }
            start += c.n_samples;
        }
        let fail_total = dataset.samples.iter().filter(|s| s.failed()).count();
        if fail_total != dataset.manifest.n_failure_samples {
            return Err(Error::Integrity("failure sample count disagrees with payload".into()));
        }
        Ok(dataset)
    }
}

fn json_byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    for (i, b) in text.iter().enumerate() {
        if current == line {
            return (i + column.saturating_sub(1)).min(text.len());
        }
        if *b == b'\n' {
            current += 1;
        }
    }
    text.len()
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(PAYLOAD_FILE), dataset.payload_bytes())?;
    fs::write(dir.join(MANIFEST_FILE), dataset.manifest_json())?;
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = fs::read(dir.join(MANIFEST_FILE))?;
    let payload = fs::read(dir.join(PAYLOAD_FILE))?;
    Dataset::from_parts(&manifest, &payload)
}
