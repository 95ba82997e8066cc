use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::InvalidData;

/// Everything needed to repeat a run: the fully resolved command and the
/// hashes of every file it read.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: Option<u64>,
    /// Input path to lowercase hex SHA-256. Directories hash the sorted
    /// relative paths and contents of every file below them.
    pub inputs: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        walk(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            h.update((rel.len() as u64).to_le_bytes());
            h.update(rel.as_bytes());
            let data = std::fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            h.update((data.len() as u64).to_le_bytes());
            h.update(&data);
        }
    } else {
        h.update(std::fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex(&h.finalize()))
}

/// Files the command reads.
pub fn inputs(cmd: &Command) -> Vec<PathBuf> {
    let mut v: Vec<Option<&PathBuf>> = Vec::new();
    match cmd {
        Command::Interpolate(a) => {
            v.extend([Some(&a.first), Some(&a.second), Some(&a.weights), a.flow_fwd.as_ref(), a.flow_bwd.as_ref()])
        }
        Command::Flow(a) => v.extend([Some(&a.first), Some(&a.second)]),
        Command::Train(a) => v.extend([
            a.data.as_ref(),
            a.resume.as_ref(),
            a.init.as_ref(),
            a.context_weights.as_ref(),
            a.feature_weights.as_ref(),
        ]),
        Command::Eval(a) => v.extend([Some(&a.pairs), Some(&a.weights)]),
        Command::Rerun(a) => v.push(Some(&a.manifest)),
    }
    v.into_iter().flatten().cloned().collect()
}

/// Where the manifest of a command is written: next to its primary output.
pub fn manifest_path(cmd: &Command) -> Option<PathBuf> {
    let out = match cmd {
        Command::Interpolate(a) => &a.out,
        Command::Flow(a) => &a.out_fwd,
        Command::Train(a) => &a.out,
        Command::Eval(a) => &a.out_csv,
        Command::Rerun(_) => return None,
    };
    let mut s = out.clone().into_os_string();
    s.push(".manifest");
    Some(PathBuf::from(s))
}

impl Manifest {
    pub fn for_command(cmd: &Command) -> Result<Self> {
        let mut inputs_map = BTreeMap::new();
        for p in inputs(cmd) {
            inputs_map.insert(p.to_string_lossy().into_owned(), hash_path(&p)?);
        }
        let seed = match cmd {
            Command::Train(a) => Some(a.seed),
            _ => None,
        };
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: cmd.clone(),
            seed,
            inputs: inputs_map,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::Error::new(InvalidData(format!("{}: {e}", path.display()))))
    }

    /// Fails if any input changed since the manifest was written.
    pub fn verify(&self) -> Result<()> {
        if matches!(self.command, Command::Rerun(_)) {
            bail!(InvalidData("a manifest cannot describe a rerun".into()));
        }
        for (path, want) in &self.inputs {
            let got = hash_path(Path::new(path))?;
            if &got != want {
                bail!(InvalidData(format!("{path} changed since the manifest was written")));
            }
        }
        Ok(())
    }
}
