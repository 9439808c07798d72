//! Output directory bookkeeping: every file a command writes is listed in
//! `manifest.json` with its digest and the config hash that produced it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub command: String,
    pub config_hash: String,
    /// Hash of the extraction settings behind the file.
    pub data_hash: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub files: BTreeMap<String, FileEntry>,
}

fn file_digest(path: &Path) -> std::io::Result<(String, u64)> {
    let mut hasher = Sha256::new();
    let bytes = std::io::copy(&mut BufReader::new(File::open(path)?), &mut hasher)?;
    Ok((hex::encode(hasher.finalize()), bytes))
}

impl Manifest {
    /// Reads `dir/manifest.json`, or an empty manifest when there is none.
    pub fn load(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        serde_json::from_reader(BufReader::new(File::open(&path)?))
            .map_err(|e| Failure::Data(format!("unreadable manifest {}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), Failure> {
        let mut w = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn hash_of(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(|e| e.config_hash.as_str())
    }

    pub fn data_hash_of(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(|e| e.data_hash.as_str())
    }
}

/// The output directory of one command run.
pub struct OutDir {
    path: PathBuf,
    command: &'static str,
    config_hash: String,
    data_hash: String,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(path: &Path, command: &'static str, config_hash: String, data_hash: String) -> Result<Self, Failure> {
        std::fs::create_dir_all(path)
            .map_err(|e| Failure::Data(format!("cannot create output directory {}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf(), command, config_hash, data_hash, written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Marks a file written by other means as part of this run.
    pub fn track(&mut self, name: impl Into<String>) {
        self.written.push(name.into());
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), Failure>,
    {
        let mut w = BufWriter::new(File::create(self.file(name))?);
        f(&mut w)?;
        w.flush()?;
        self.track(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// Records every written file in the manifest.
    pub fn finish(self) -> Result<Manifest, Failure> {
        let mut manifest = Manifest::load(&self.path)?;
        manifest.tool = format!("loadclust {}", env!("CARGO_PKG_VERSION"));
        for name in self.written {
            let (sha256, bytes) = file_digest(&self.path.join(&name))?;
            let entry = FileEntry {
                command: self.command.to_string(),
                config_hash: self.config_hash.clone(),
                data_hash: self.data_hash.clone(),
                sha256,
                bytes,
            };
            manifest.files.insert(name, entry);
        }
        manifest.save(&self.path)?;
        Ok(manifest)
    }
}
