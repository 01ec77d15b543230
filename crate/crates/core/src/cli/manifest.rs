use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

/// Files whose content depends on wall-clock time; listed but not hashed.
const TIMING_FILES: [&str; 1] = ["timing.tsv"];

/// Record of one command invocation, written last into its run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    /// Config key → `flag`, `config` or `default`.
    pub config_sources: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// Input path → sha256 (directories hash their files in name order).
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory → sha256.
    pub artifacts: BTreeMap<String, String>,
    pub timing_files: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Single digest over every artifact hash.
    pub fn artifact_digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.artifacts {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn files_under(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(&p, base, out)?;
        } else {
            out.push(p.strip_prefix(base).expect("under base").to_path_buf());
        }
    }
    Ok(())
}

/// Hash of a file, or of a directory's relative names and file hashes.
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::Input(format!("{} does not exist", path.display())));
    }
    if path.is_file() {
        return sha256_file(path);
    }
    let mut files = Vec::new();
    files_under(path, path, &mut files)?;
    let mut h = Sha256::new();
    for f in files {
        let name = f.to_string_lossy().replace('\\', "/");
        if name == MANIFEST || TIMING_FILES.iter().any(|t| name.ends_with(t)) {
            continue;
        }
        h.update(name.as_bytes());
        h.update([0]);
        h.update(sha256_file(&path.join(&f))?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

/// Picks the run directory: `out` when given (must be absent or empty),
/// otherwise the first free `<root>/<command>-<n>`.
pub fn create_run_dir(out: Option<&Path>, root: &Path, command: &str) -> Result<PathBuf> {
    if let Some(dir) = out {
        if dir.exists() && fs::read_dir(dir)?.next().is_some() {
            return Err(Error::Config(format!("output directory {} is not empty", dir.display())));
        }
        fs::create_dir_all(dir)?;
        return Ok(dir.to_path_buf());
    }
    fs::create_dir_all(root)?;
    for n in 1.. {
        let dir = root.join(format!("{command}-{n:03}"));
        if fs::create_dir(&dir).is_ok() {
            return Ok(dir);
        }
    }
    unreachable!()
}

/// Hashes every file in `dir` (timing files listed separately) and writes
/// the manifest.
pub fn finish(dir: &Path, mut manifest: RunManifest) -> Result<RunManifest> {
    let mut files = Vec::new();
    files_under(dir, dir, &mut files)?;
    for f in files {
        let name = f.to_string_lossy().replace('\\', "/");
        if name == MANIFEST {
            continue;
        }
        if TIMING_FILES.iter().any(|t| name.ends_with(t)) {
            manifest.timing_files.push(name);
        } else {
            manifest.artifacts.insert(name, sha256_file(&dir.join(&f))?);
        }
    }
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
