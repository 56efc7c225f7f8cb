use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use constrained_rep::algo::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Write through a sibling temp file and rename, so readers never see a
/// truncated file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// SHA-256 over git's blob framing: `"blob <len>\0" + contents`.
pub fn content_hash(contents: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", contents.len()).as_bytes());
    h.update(contents.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `key = value` echo of the effective config.
    pub config: String,
    pub seed: u64,
    pub config_hash: String,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

impl RunManifest {
    pub fn new(cfg: &TrainConfig, outputs: Vec<PathBuf>) -> Self {
        let config = cfg.to_kv_string();
        Self {
            config_hash: content_hash(&config),
            config,
            seed: cfg.seed,
            outputs,
            started_unix: unix_now(),
            finished_unix: None,
        }
    }

    pub fn config(&self) -> constrained_rep::Result<TrainConfig> {
        TrainConfig::from_kv_str(&self.config)
    }
}
