use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use soc_pinn::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Audit record of one invocation, written last into the output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileHash>,
    pub output_dir: String,
    pub outputs: Vec<FileHash>,
    pub wall_time_s: f64,
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every regular file under `root`, sorted, skipping manifests.
fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if root.is_file() {
        out.push(root.to_path_buf());
        return Ok(out);
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        for entry in entries {
            let path = entry.map_err(|e| Error::Io { path: dir.clone(), source: e })?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST_NAME) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn hashes(paths: &[PathBuf], relative_to: Option<&Path>) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            let shown = relative_to
                .and_then(|base| p.strip_prefix(base).ok())
                .unwrap_or(p);
            Ok(FileHash {
                path: shown.display().to_string(),
                sha256: hash_file(p)?,
            })
        })
        .collect()
}

pub struct ManifestBuilder {
    subcommand: &'static str,
    started: Instant,
    inputs: Vec<FileHash>,
    seeds: Vec<u64>,
    config: serde_json::Value,
}

impl ManifestBuilder {
    pub fn start(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            started: Instant::now(),
            inputs: Vec::new(),
            seeds: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    /// Records the content hash of a file, or of every file in a directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let files = files_under(path)?;
        self.inputs.extend(hashes(&files, None)?);
        Ok(())
    }

    pub fn seeds(&mut self, seeds: &[u64]) {
        self.seeds = seeds.to_vec();
    }

    pub fn config<T: Serialize>(&mut self, value: &T) {
        self.config = serde_json::to_value(value).expect("config serializes");
    }

    /// Hashes everything now in `out_dir` and writes the manifest there.
    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir).map_err(|e| Error::Io { path: out_dir.into(), source: e })?;
        let files = files_under(out_dir)?;
        let manifest = RunManifest {
            subcommand: self.subcommand.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            output_dir: out_dir.display().to_string(),
            outputs: hashes(&files, Some(out_dir))?,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = out_dir.join(MANIFEST_NAME);
        let tmp = out_dir.join(format!(".{MANIFEST_NAME}.tmp"));
        fs::write(&tmp, text).map_err(|e| Error::Io { path: tmp.clone(), source: e })?;
        fs::rename(&tmp, &path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(path)
    }
}
