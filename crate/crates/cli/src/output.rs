//! All-or-nothing output directories: everything is written into a sibling
//! temp directory that is renamed into place only once it is complete.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

pub struct StagedDir {
    staging: TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: &Path) -> io::Result<Self> {
        if target.exists() && !target.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::AlreadyExists,
                format!("{} exists and is not a directory", target.display()),
            ));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let staging = tempfile::Builder::new()
            .prefix(".autorank-staging-")
            .tempdir_in(&parent)?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.staging.path()
    }

    /// Moves the staged tree to the target, replacing an existing directory.
    /// Dropping a `StagedDir` without committing deletes the staged files.
    pub fn commit(self) -> io::Result<()> {
        let staged = self.staging.keep();
        if self.target.exists() {
            let old = staged.with_file_name(format!(
                "{}.replaced",
                staged
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or(".autorank-staging")
            ));
            fs::rename(&self.target, &old)?;
            if let Err(e) = fs::rename(&staged, &self.target) {
                let _ = fs::rename(&old, &self.target);
                let _ = fs::remove_dir_all(&staged);
                return Err(e);
            }
            fs::remove_dir_all(&old)
        } else {
            fs::rename(&staged, &self.target).inspect_err(|_| {
                let _ = fs::remove_dir_all(&staged);
            })
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
