//! Run output directory: files are staged through a writer that records
//! their SHA-256 and size, and `finish` drops a `manifest.json` tying the
//! artifacts to the command and the exact config document that produced
//! them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use mixcert_core::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest: [u8; 32] = h.finalize().into();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: &'a str,
    files: Vec<ManifestEntry>,
}

#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes one artifact produced into an in-memory buffer, recording
    /// its hash and size for the manifest.
    pub fn write<F>(&mut self, name: &str, produce: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        assert!(
            !name.contains('/') && !name.is_empty(),
            "artifact names are flat file names"
        );
        let mut buf = Vec::new();
        produce(&mut buf)?;
        fs::write(self.dir.join(name), &buf)?;
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            sha256: sha256_hex(&buf),
            bytes: buf.len() as u64,
        });
        Ok(())
    }

    /// Writes `manifest.json` listing every artifact, sorted by path.
    pub fn finish(mut self, command: &str, config_sha256: &str) -> Result<()> {
        if self.entries.iter().any(|e| e.path == "manifest.json") {
            return Err(Error::InvalidArgument(
                "manifest.json is reserved for the manifest itself".into(),
            ));
        }
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command,
            config_sha256,
            files: self.entries,
        };
        let body = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
        fs::write(self.dir.join("manifest.json"), body)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_sorted_with_hashes() {
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = RunWriter::create(tmp.path()).unwrap();
        writer
            .write("b.txt", |w| {
                w.extend_from_slice(b"hello");
                Ok(())
            })
            .unwrap();
        writer
            .write("a.txt", |w| {
                w.extend_from_slice(b"");
                Ok(())
            })
            .unwrap();
        writer.finish("bound", "cafe").unwrap();

        assert_eq!(fs::read(tmp.path().join("b.txt")).unwrap(), b"hello");
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["command"], "bound");
        assert_eq!(manifest["config_sha256"], "cafe");
        let files = manifest["files"].as_array().unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(files[0]["path"], "a.txt");
        assert_eq!(files[1]["path"], "b.txt");
        assert_eq!(files[1]["bytes"], 5);
        assert_eq!(
            files[1]["sha256"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824",
            "sha256 of 'hello'"
        );
    }

    #[test]
    fn failed_producer_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = RunWriter::create(tmp.path()).unwrap();
        let result = writer.write("x.json", |_| Err(Error::Format("boom".into())));
        assert!(result.is_err());
        assert!(!tmp.path().join("x.json").exists());
    }
}
