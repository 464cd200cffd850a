use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{sha256_hex, ExperimentConfig};
use crate::error::{Error, Result};

/// Source revision stamped into every artifact. Set `MOEDM_REVISION` at
/// build time to embed a VCS id.
pub fn revision() -> String {
    match option_env!("MOEDM_REVISION") {
        Some(r) => format!("{}+{r}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Sidecar written next to every artifact as `<file>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub stage: String,
    pub config_hash: String,
    pub revision: String,
    pub seed: u64,
    pub sha256: String,
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn read_meta(artifact: &Path) -> Result<Meta> {
    let p = meta_path(artifact);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `runs/<name>/` with its four subdirectories.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(runs: &Path, name: &str) -> Self {
        RunDir { root: runs.join(name) }
    }

    pub fn create(&self) -> Result<()> {
        for sub in ["models", "data", "reports", "fixtures"] {
            let p = self.root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn fixtures(&self) -> PathBuf {
        self.root.join("fixtures")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    /// Append one line to the timing sidecar; the only place wall-clock
    /// values are written.
    pub fn log_timing(&self, stage: &str, started: Instant) -> Result<()> {
        let p = self.root.join("timing.log");
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        writeln!(f, "{now} {stage} {:.3}s", started.elapsed().as_secs_f64()).map_err(|e| Error::io(&p, e))
    }
}

/// Write `bytes` to `path` and its meta sidecar.
pub fn write_artifact(path: &Path, bytes: &[u8], stage: &str, hash: &str, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    stamp(path, stage, hash, cfg)
}

/// Write the meta sidecar of an artifact already on disk.
pub fn stamp(path: &Path, stage: &str, hash: &str, cfg: &ExperimentConfig) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = Meta {
        stage: stage.to_string(),
        config_hash: hash.to_string(),
        revision: revision(),
        seed: cfg.seed,
        sha256: sha256_hex(&bytes),
    };
    let p = meta_path(path);
    std::fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&p, e))
}

/// An upstream artifact must exist and carry the expected stage hash.
/// With `force` a hash mismatch is tolerated but a missing file is not.
pub fn require(path: &Path, expected: &str, upstream: &'static str, force: bool) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite {
            path: path.to_path_buf(),
            upstream,
        });
    }
    let meta = match read_meta(path) {
        Ok(m) => m,
        Err(_) if force => return Ok(()),
        Err(_) => {
            return Err(Error::MissingPrerequisite {
                path: meta_path(path),
                upstream,
            })
        }
    };
    if meta.config_hash != expected && !force {
        return Err(Error::ConfigMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: meta.config_hash,
        });
    }
    Ok(())
}

/// True when `path` exists with a sidecar carrying `hash`.
pub fn up_to_date(path: &Path, hash: &str) -> bool {
    path.exists() && read_meta(path).map(|m| m.config_hash == hash).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn require_reports_missing_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let p = dir.path().join("a.json");
        assert!(matches!(
            require(&p, "h", "gen-data", false),
            Err(Error::MissingPrerequisite { upstream: "gen-data", .. })
        ));
        write_artifact(&p, b"{}", "gen-data", "h1", &cfg).unwrap();
        assert!(require(&p, "h1", "gen-data", false).is_ok());
        assert!(matches!(require(&p, "h2", "gen-data", false), Err(Error::ConfigMismatch { .. })));
        assert!(require(&p, "h2", "gen-data", true).is_ok());
        let m = read_meta(&p).unwrap();
        assert_eq!(m.sha256, sha256_hex(b"{}"));
        assert_eq!(m.seed, cfg.seed);
        assert!(up_to_date(&p, "h1"));
    }
}
