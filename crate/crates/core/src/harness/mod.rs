//! Scenario files, the closed-loop simulation, telemetry and summaries.

pub mod reference;
pub mod run;
pub mod scenario;
pub mod summary;
pub mod telemetry;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub use reference::{CubicSpline, Reference, ReferenceSpec};
pub use run::{run, run_file_stem, run_with, RunEvent, RunRecord, StepDiagnostics};
pub use scenario::{
    BarrierConfig, ControllerSpec, InitialState, ObstacleSpec, PlantSpec, Scenario,
};
pub use summary::{
    percentile, summarize_dir, with_aggregates, write_summary, RunSummary, SUMMARY_COLUMNS,
};
pub use telemetry::{read_telemetry, write_telemetry, TelemetryRow, TELEMETRY_COLUMNS};

use crate::error::Result;

/// Writes `<stem>.csv` telemetry into `dir` and returns its path.
pub fn write_run_telemetry(dir: impl AsRef<Path>, record: &RunRecord) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.as_ref())?;
    let path = dir.as_ref().join(format!("{}.csv", record.file_stem()));
    write_telemetry(BufWriter::new(File::create(&path)?), &record.rows)?;
    Ok(path)
}

/// Writes the learner dataset as `<stem>.dataset.csv` into `dir`.
pub fn write_run_dataset(dir: impl AsRef<Path>, record: &RunRecord) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.as_ref())?;
    let path = dir
        .as_ref()
        .join(format!("{}.dataset.csv", record.file_stem()));
    record
        .dataset
        .write_csv(BufWriter::new(File::create(&path)?))?;
    Ok(path)
}
