//! Run directories: staged writes, an atomic rename into place, and a
//! manifest listing every artifact with its checksum.

use std::fs;
use std::path::{Path, PathBuf};

use megsim::checkpoint::sha256_hex;
use megsim::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the resolved settings document.
    pub config_sha256: String,
    pub megsim_version: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    /// Run directories this run consumed, as given on the command line.
    pub upstream: Vec<String>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name == name)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Output directory under construction. Nothing appears at the final path
/// until [`RunDir::finish`].
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    force: bool,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(target: &Path, force: bool) -> Result<Self> {
        if target.exists() && !force {
            return Err(Error::Invalid {
                key: "--out".into(),
                reason: format!("{} exists; pass --force to replace it", target.display()),
            });
        }
        let name = target.file_name().ok_or_else(|| Error::Invalid {
            key: "--out".into(),
            reason: "needs a final path component".into(),
        })?;
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(io(&parent))?;
        let staging = parent.join(format!(
            ".{}.partial-{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io(&staging))?;
        }
        fs::create_dir(&staging).map_err(io(&staging))?;
        Ok(RunDir {
            target: target.to_path_buf(),
            staging,
            force,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.staging.join(name);
        fs::write(&path, bytes).map_err(io(&path))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_csv<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes the manifest and moves the directory into place.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.files = std::mem::take(&mut self.files);
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format {
            what: "manifest",
            reason: e.to_string(),
        })?;
        let path = self.staging.join(MANIFEST);
        fs::write(&path, json).map_err(io(&path))?;
        if self.target.exists() && self.force {
            fs::remove_dir_all(&self.target).map_err(io(&self.target))?;
        }
        fs::rename(&self.staging, &self.target).map_err(io(&self.target))?;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        // a failed run leaves nothing behind
        let _ = fs::remove_dir_all(&self.staging);
    }
}

/// Reads a run's manifest and checks every listed file against it.
pub fn open_verified(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(io(&path))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Format {
        what: "manifest",
        reason: format!("{}: {e}", path.display()),
    })?;
    for f in &m.files {
        let p = dir.join(&f.name);
        let bytes = fs::read(&p).map_err(io(&p))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::Checksum(p.display().to_string()));
        }
    }
    Ok(m)
}

/// Reads a manifested file, refusing anything the manifest does not list.
pub fn read_listed(dir: &Path, m: &Manifest, name: &str) -> Result<Vec<u8>> {
    let entry = m.file(name).ok_or_else(|| Error::Format {
        what: "run directory",
        reason: format!("{} is not listed in {}", name, dir.join(MANIFEST).display()),
    })?;
    let p = dir.join(name);
    let bytes = fs::read(&p).map_err(io(&p))?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::Checksum(p.display().to_string()));
    }
    Ok(bytes)
}
