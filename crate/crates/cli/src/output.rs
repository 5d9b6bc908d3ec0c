//! Artifact writing and the `manifest.json` index.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use llp_core::rng::fnv1a;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    /// FNV-1a of the file contents, hex.
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize, X: Serialize> {
    pub command: &'static str,
    pub seed: u64,
    pub config: C,
    pub files: Vec<FileEntry>,
    #[serde(flatten)]
    pub extra: X,
}

/// Collects the files written under one output directory.
pub struct OutDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn ensure_dir(&self, rel: &str) -> Result<()> {
        fs::create_dir_all(self.path(rel)).with_context(|| format!("creating {rel}"))
    }

    /// Records a file written by someone else.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.path(rel)).with_context(|| format!("reading back {rel}"))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            hash: format!("{:016x}", fnv1a(&bytes)),
        });
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        fs::write(self.path(rel), text).with_context(|| format!("writing {rel}"))?;
        self.register(rel)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    /// Writes `manifest.json` listing every registered file.
    pub fn finish<C: Serialize, X: Serialize>(
        mut self,
        command: &'static str,
        seed: u64,
        config: C,
        extra: X,
    ) -> Result<()> {
        let manifest = Manifest {
            command,
            seed,
            config,
            files: std::mem::take(&mut self.files),
            extra,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.path("manifest.json"), text).context("writing manifest.json")
    }
}
