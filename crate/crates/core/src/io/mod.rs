//! File formats and the synthetic dataset generator.

pub mod checkpoint;
pub mod cube;
pub mod pnm;
pub mod synthetic;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, EntryKind};
pub use cube::{read_cube, write_cube, HyperCube};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm, LabelMask};
pub use synthetic::{generate_synthetic_dataset, Sample, SyntheticSpec};

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Write `bytes` to a temporary file beside `path`, then rename it into
/// place. A failed write leaves no file at `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
