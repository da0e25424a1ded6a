//! File formats. All text outputs are UTF-8 with LF line endings and
//! deterministic row order; floats print in Rust's shortest round-trip form
//! so files are byte-stable and parse back exactly.

pub mod checkpoint;
pub mod pairs;
pub mod reports;
pub mod scores;

use crate::error::CliError;
use std::path::Path;

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
