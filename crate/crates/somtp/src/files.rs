//! Small file helpers shared by every on-disk format.

use std::path::Path;

use crate::{Error, Result};

/// Writes `contents` to `path` atomically: the bytes land in a temporary
/// sibling file first and are renamed into place, so a crash never leaves a
/// half-written file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    if !parent.as_os_str().is_empty() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(&display, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(&display, "path has no file name"))?;
    let tmp = parent.join(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(&display, e))?;
    Ok(())
}

/// Reads a file into a string, annotating errors with the path.
pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a file into bytes, annotating errors with the path.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}
