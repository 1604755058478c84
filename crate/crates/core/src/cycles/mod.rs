//! Drive-cycle generation and dataset assembly.

mod dataset;
mod drive;
mod generate;

pub use dataset::{
    digest_hex, read_dataset, samples_from_outcome, write_dataset, CycleRecord, Dataset, Manifest, Sample, Split,
    FORMAT_VERSION, MANIFEST_FILE, PAYLOAD_FILE, RECORD_BYTES, RECORD_VALUES,
};
pub use drive::{random_cycle, DriveCycle, MAX_CYCLE_CRATE, WINDOW_SECONDS};
pub use generate::{build_dataset, constant_current_dataset, GenConfig};
