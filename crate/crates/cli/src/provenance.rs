use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// What a run consumed and produced, enough to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Effective arguments after config expansion, without the program name.
    pub argv: Vec<String>,
    pub seed: u64,
    pub parallelism: u64,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_of: Option<PathBuf>,
}

pub fn hash_file(path: &Path) -> io::Result<InputFile> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputFile {
        path: path.to_owned(),
        sha256: format!("{:x}", hasher.finalize()),
        bytes,
    })
}

pub fn write(dir: &Path, record: &RunRecord) -> Result<()> {
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(record)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
