//! Run directory layout, atomic writes and the artifact manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::EpisodeRecord;

pub const CONFIG: &str = "config.json";
pub const EPISODES: &str = "episodes.jsonl";
pub const POLICY: &str = "policy.json";
pub const CRITIC: &str = "critic.json";
pub const AVF: &str = "avf.json";
pub const GMM: &str = "gmm.json";
pub const GMM_DATA: &str = "gmm_data.jsonl";
pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_MD: &str = "bench.md";
pub const MANIFEST: &str = "manifest.json";

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    /// File name to hex SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One run's output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn open(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.file(name).is_file()
    }

    /// Writes `bytes` to a sibling temp file, then renames it over `name`,
    /// and records the new hash in the manifest.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write_raw(name, bytes)?;
        let mut manifest = self.manifest()?.unwrap_or_else(|| Manifest {
            tool_version: TOOL_VERSION.to_string(),
            artifacts: BTreeMap::new(),
        });
        manifest.tool_version = TOOL_VERSION.to_string();
        manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        let text = serde_json::to_string_pretty(&manifest)?;
        self.write_raw(MANIFEST, text.as_bytes())
    }

    fn write_raw(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.file(name);
        let tmp = self.file(&format!(".{name}.tmp"));
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
    }

    /// Reads an artifact; a missing file names the stage that produces it.
    pub fn read(&self, name: &str, stage: &'static str) -> Result<String> {
        let path = self.file(name);
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                file: name.to_string(),
                stage,
            });
        }
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    pub fn manifest(&self) -> Result<Option<Manifest>> {
        let path = self.file(MANIFEST);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    /// Checks every hash in the manifest against the file on disk.
    pub fn verify(&self) -> Result<()> {
        let manifest = self.manifest()?.ok_or_else(|| Error::MissingArtifact {
            file: MANIFEST.to_string(),
            stage: "train",
        })?;
        for (name, expected) in &manifest.artifacts {
            let path = self.file(name);
            let bytes = fs::read(&path).map_err(|_| Error::ManifestMismatch(format!("{name} is missing")))?;
            if &sha256_hex(&bytes) != expected {
                return Err(Error::ManifestMismatch(name.clone()));
            }
        }
        Ok(())
    }

    pub fn write_log(&self, log: &[EpisodeRecord]) -> Result<()> {
        self.write(EPISODES, encode_jsonl(log)?.as_bytes())
    }

    pub fn read_log(&self) -> Result<Vec<EpisodeRecord>> {
        decode_jsonl(&self.read(EPISODES, "train")?)
    }
}

pub fn encode_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
