//! Run manifests: what went in, what came out, and how long each step took.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTime {
    pub step: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub steps: Vec<StepTime>,
    /// Paths relative to the output directory, sorted.
    pub outputs: Vec<FileDigest>,
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs: Vec::new(),
            steps: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: file_sha256(path)? });
        Ok(())
    }

    /// Runs `f` and records its wall time under `step`.
    pub fn time<T>(&mut self, step: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.steps.push(StepTime { step: step.to_string(), seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }

    /// Digests the outputs `rels` (files, or directories walked recursively),
    /// given relative to `root`.
    pub fn collect_outputs(&mut self, root: &Path, rels: &[&str]) -> Result<()> {
        let mut files = Vec::new();
        for rel in rels {
            let p = root.join(rel);
            if p.is_dir() {
                walk(root, &p, &mut files)?;
            } else {
                files.push(rel.to_string());
            }
        }
        files.sort();
        files.dedup();
        self.outputs = files
            .into_iter()
            .map(|rel| Ok(FileDigest { sha256: file_sha256(root.join(&rel))?, path: rel }))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Writes the manifest as `<root>/<command>.manifest.toml`.
    pub fn save_in(&self, root: &Path) -> Result<std::path::PathBuf> {
        let p = root.join(format!("{}.manifest.toml", self.command));
        self.save(&p)?;
        Ok(p)
    }

    /// One digest over all output paths and contents; equal for reproduced runs.
    pub fn output_digest(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.outputs {
            h.update(format!("{} {}\n", f.path, f.sha256));
        }
        hex::encode(h.finalize())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.message().to_string()))
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("below root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trip_and_output_digest() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), "one").unwrap();
        fs::write(dir.path().join("sub/b.txt"), "two").unwrap();
        let mut m = RunManifest::new("fit", &RunConfig::default());
        m.add_input(dir.path().join("a.txt")).unwrap();
        m.time("noop", || Ok(())).unwrap();
        m.collect_outputs(dir.path(), &["sub", "a.txt"]).unwrap();
        assert_eq!(m.outputs.iter().map(|f| f.path.as_str()).collect::<Vec<_>>(), ["a.txt", "sub/b.txt"]);
        let p = dir.path().join("x.manifest.toml");
        m.save(&p).unwrap();
        let back = RunManifest::load(&p).unwrap();
        assert_eq!(back, m);
        let before = m.output_digest();
        fs::write(dir.path().join("sub/b.txt"), "changed").unwrap();
        m.collect_outputs(dir.path(), &["sub", "a.txt"]).unwrap();
        assert_ne!(m.output_digest(), before);
    }
}
