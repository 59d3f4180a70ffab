//! Provenance record written next to every pipeline output. Downstream
//! stages look for the manifest beside each input and refuse files whose
//! hash no longer matches.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{sha256_bytes, sha256_file};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// File name relative to the manifest's directory, or the path as given
    /// for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub started: String,
    pub finished: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    /// `config` is any serializable view of the effective configuration.
    pub fn start<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        let text = serde_json::to_vec(config)?;
        Ok(RunManifest {
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: sha256_bytes(&text),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
            finished: String::new(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Verifies `path` against any manifest beside it, then records it.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = verify_against_manifest(path)?;
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.outputs.push(FileEntry {
            path: name,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Appends this run to `manifest.json` in `dir`. Earlier runs keep their
    /// entries except for outputs this run has replaced; runs left without
    /// outputs are dropped.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished = now();
        let path = dir.join(MANIFEST_FILE);
        let mut file = if path.exists() { ManifestFile::read(&path)? } else { ManifestFile::default() };
        for run in &mut file.runs {
            run.outputs.retain(|e| !self.outputs.iter().any(|o| o.path == e.path));
        }
        file.runs.retain(|r| !r.outputs.is_empty());
        file.runs.push(self);
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// On-disk form of `manifest.json`: every run that wrote into the directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub runs: Vec<RunManifest>,
}

impl ManifestFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The output entry named `name`, from the latest run that wrote it.
    pub fn output(&self, name: &str) -> Option<&FileEntry> {
        self.runs.iter().rev().flat_map(|r| &r.outputs).find(|e| e.path == name)
    }
}

/// Hash of `path`; errors when a manifest in the same directory lists the
/// file under a different hash.
pub fn verify_against_manifest(path: &Path) -> Result<String> {
    let found = sha256_file(path)?;
    let Some(name) = path.file_name().map(|n| n.to_string_lossy().into_owned()) else {
        return Ok(found);
    };
    let manifest_path = path.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    if manifest_path.exists() {
        let m = ManifestFile::read(&manifest_path)?;
        if let Some(entry) = m.output(&name) {
            if entry.sha256 != found {
                return Err(Error::HashMismatch {
                    path: path.to_path_buf(),
                    expected: entry.sha256.clone(),
                    found,
                });
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampered_input_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.bin");
        std::fs::write(&f, b"one").unwrap();
        let mut m = RunManifest::start("x", &1).unwrap();
        m.output(&f).unwrap();
        m.finish(dir.path()).unwrap();
        let mut next = RunManifest::start("y", &2).unwrap();
        next.input(&f).unwrap();
        std::fs::write(&f, b"two").unwrap();
        assert!(matches!(next.input(&f), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn manifests_of_different_stages_merge() {
        let dir = tempfile::tempdir().unwrap();
        for (cmd, name) in [("a", "x.txt"), ("b", "y.txt")] {
            let f = dir.path().join(name);
            std::fs::write(&f, name).unwrap();
            let mut m = RunManifest::start(cmd, &0).unwrap();
            m.output(&f).unwrap();
            m.finish(dir.path()).unwrap();
        }
        let m = ManifestFile::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.runs.len(), 2);
        let f = dir.path().join("x.txt");
        let mut again = RunManifest::start("a", &0).unwrap();
        again.output(&f).unwrap();
        again.finish(dir.path()).unwrap();
        let m = ManifestFile::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.runs.len(), 2);
        assert_eq!(m.runs[1].command, "a");
    }
}
