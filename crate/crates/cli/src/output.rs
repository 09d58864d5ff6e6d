use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::CliError;

/// Report files keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportBundle {
    pub files: BTreeMap<PathBuf, Vec<u8>>,
}

impl ReportBundle {
    pub fn insert(&mut self, path: impl Into<PathBuf>, contents: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), contents.into());
    }

    pub fn get(&self, path: impl AsRef<Path>) -> Option<&[u8]> {
        self.files.get(path.as_ref()).map(Vec::as_slice)
    }

    /// Writes every file to a temporary sibling first, then renames them all
    /// into place, so a failure while writing leaves no report behind.
    pub fn write_to(&self, out_dir: &Path) -> Result<(), CliError> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (rel, contents) in &self.files {
            let target = out_dir.join(rel);
            let dir = target.parent().unwrap_or(out_dir).to_path_buf();
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
            tmp.write_all(contents).map_err(|e| CliError::io(&target, e))?;
            tmp.as_file().sync_all().map_err(|e| CliError::io(&target, e))?;
            staged.push((tmp, target));
        }
        for (tmp, target) in staged {
            tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        }
        Ok(())
    }
}
