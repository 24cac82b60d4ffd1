//! Configuration, dataset ingestion, PNG output and reproducibility records.

pub mod config;
pub mod dataset;
pub mod png;
pub mod toy;

pub use config::{ModelKind, RunConfig};
pub use dataset::{load_images, read_manifest, Dataset, ManifestEntry};

use std::path::Path;

use crate::error::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `repro.txt` (seed, config hash, code version) into `dir`.
pub fn write_repro(dir: &Path, seed: u64, config: &RunConfig) -> Result<()> {
    let text = format!(
        "seed={seed}\nconfig_hash={}\ncode_version={CODE_VERSION}\n",
        config.hash()
    );
    let path = dir.join("repro.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
