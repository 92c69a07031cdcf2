//! Run directories: atomic single-writer outputs and the run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce and audit a run.
///
/// `digest` is the SHA-256 of the lines `"<sha256>  <path>\n"` over
/// `outputs` in path order, i.e. of the `sha256sum` listing of the files.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub outputs: Vec<OutputEntry>,
    pub digest: String,
}

pub struct RunDir {
    dir: PathBuf,
    outputs: Vec<OutputEntry>,
    started: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// The manifest digest over `(path, sha256)` entries.
pub fn listing_digest(outputs: &[OutputEntry]) -> String {
    let mut sorted: Vec<&OutputEntry> = outputs.iter().collect();
    sorted.sort_by(|a, b| a.path.cmp(&b.path));
    let listing: String = sorted.iter().map(|o| format!("{}  {}\n", o.sha256, o.path)).collect();
    sha256_hex(listing.as_bytes())
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

impl RunDir {
    /// Creates the directory and drops any manifest left by an earlier run,
    /// so stale outputs are never vouched for.
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        match fs::remove_file(dir.join(MANIFEST)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
            started: now(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        write_atomic(&self.dir, name, bytes)?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest, last.
    pub fn finish(
        mut self,
        command: &str,
        config: Value,
        seed: Option<u64>,
        status: &str,
        exit_code: i32,
        message: Option<String>,
    ) -> io::Result<()> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started.clone(),
            finished: now(),
            status: status.to_string(),
            exit_code,
            message,
            digest: listing_digest(&self.outputs),
            outputs: self.outputs.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        text.push('\n');
        write_atomic(&self.dir, MANIFEST, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_digest_is_the_listing_hash() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join(MANIFEST), "stale").unwrap();
        let mut run = RunDir::create(tmp.path()).unwrap();
        assert!(!tmp.path().join(MANIFEST).exists());
        run.write("b.txt", b"two").unwrap();
        run.write("a.txt", b"one").unwrap();
        run.finish("test", Value::Null, Some(1), "pass", 0, None).unwrap();
        let m: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join(MANIFEST)).unwrap()).unwrap();
        let listing = format!("{}  a.txt\n{}  b.txt\n", sha256_hex(b"one"), sha256_hex(b"two"));
        assert_eq!(m["digest"], sha256_hex(listing.as_bytes()));
        assert_eq!(m["outputs"][0]["path"], "a.txt");
    }
}
