use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fault;

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

pub(crate) fn sync_parent(path: &Path) {
    // directory fsync is best effort; not every platform allows opening dirs
    #[cfg(unix)]
    if let Some(dir) = path.parent() {
        let dir = if dir.as_os_str().is_empty() {
            Path::new(".")
        } else {
            dir
        };
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
}

/// Replaces the file at `path` with `bytes`: write a sibling temp file,
/// sync it, rename it over the target, sync the directory. Readers see the
/// old content or the new content, never a mixture.
pub fn atomic_rewrite(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = write_and_rename(path, &tmp, bytes);
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_and_rename(path: &Path, tmp: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = File::create(tmp).map_err(|e| Error::storage(tmp, e))?;
    if fault::armed("mid_rewrite") {
        let _ = file.write_all(&bytes[..bytes.len() / 2]);
        let _ = file.sync_all();
        fault::crash();
    }
    file.write_all(bytes).map_err(|e| Error::storage(tmp, e))?;
    file.sync_all().map_err(|e| Error::storage(tmp, e))?;
    drop(file);
    fault::point("before_rename");
    fs::rename(tmp, path).map_err(|e| Error::storage(path, e))?;
    sync_parent(path);
    Ok(())
}
