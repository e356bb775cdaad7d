use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, IoContext, Result};

pub const ARTIFACT_FILE: &str = "artifact.json";
pub const CONFIG_FILE: &str = "config.json";
pub const FAILURE_MARKER: &str = "FAILED";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    /// Model run directories (each loadable with `checkpoint::load_bundle`).
    pub checkpoints: Vec<PathBuf>,
    pub logs: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).at(path)?)))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir).at(dir)?.collect::<std::io::Result<_>>().at(dir)?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if p.strip_prefix(root).map(|r| r != Path::new(ARTIFACT_FILE)).unwrap_or(true) {
            out.push(p);
        }
    }
    Ok(())
}

fn relative(root: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(root).unwrap_or(p);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Hashes every file under `dir` except the artifact file itself, in
/// sorted path order.
pub fn hash_tree(dir: &Path) -> Result<Vec<FileEntry>> {
    let mut paths = Vec::new();
    walk(dir, dir, &mut paths)?;
    paths
        .iter()
        .map(|p| {
            Ok(FileEntry {
                path: relative(dir, p),
                sha256: sha256_file(p)?,
                bytes: fs::metadata(p).at(p)?.len(),
            })
        })
        .collect()
}

impl RunArtifact {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(ARTIFACT_FILE);
        Ok(serde_json::from_slice(&fs::read(&path).at(&path)?)?)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.dir.join(ARTIFACT_FILE);
        fs::write(&path, serde_json::to_vec_pretty(self)?).at(&path)
    }

    /// Every listed file exists and still hashes to its recorded digest.
    pub fn verify(&self) -> Result<()> {
        for f in &self.files {
            let p = self.dir.join(&f.path);
            let got = sha256_file(&p)?;
            if got != f.sha256 {
                return Err(Error::Invalid(format!("{} changed since the run (hash mismatch)", f.path)));
            }
        }
        Ok(())
    }

    pub fn file(&self, rel: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == rel)
    }
}
