//! Datasets, persistence, run configuration and reporting.

mod checkpoint;
mod config;
mod data;
mod ensemble;
mod experiment;
mod synthetic;

use std::path::Path;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{DatasetConfig, ModelConfig, RunConfig, TaskConfig};
pub use data::{read_csv, write_csv, Dataset, Evaluation, Split};
pub use ensemble::{ensemble_accuracy, ensemble_predict, ensemble_probabilities};
pub use experiment::{execute, metrics_csv, run_experiment, write_reports, Experiment, Summary, TaskSummary};
pub use synthetic::{downsample_8x8, gen_synthetic_task, TaskKind};

use crate::error::{Error, Result};

/// Writes to a sibling temporary file, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
