//! Run manifests: the resolved configuration of a command plus the digests of
//! everything it read, written before any output artifact.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clusd_core::kv::KvMap;
use sha2::{Digest, Sha256};

use crate::failure::Failure;
use crate::settings::MANIFEST_PREFIX;

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: KvMap,
    /// `(label, sha256 hex)` for every input file.
    pub inputs: Vec<(String, String)>,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` when set.
    pub created: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: KvMap) -> Result<Self, Failure> {
        Ok(Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            created: timestamp()?,
        })
    }

    pub fn add_input(&mut self, label: &str, path: &Path) -> Result<(), Failure> {
        self.inputs.push((label.to_string(), sha256_file(path)?));
        Ok(())
    }

    /// Config keys as-is, metadata under the `manifest.` prefix so the file
    /// doubles as a config file.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.config.clone();
        let meta = |k: &str| format!("{MANIFEST_PREFIX}{k}");
        kv.set(meta("command"), &self.command);
        kv.set(meta("version"), env!("CARGO_PKG_VERSION"));
        kv.set(meta("created"), self.created);
        for (label, digest) in &self.inputs {
            kv.set(meta(&format!("input.{label}.sha256")), digest);
        }
        kv
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, Failure> {
        let path = dir.join(format!("manifest.{}.txt", self.command));
        std::fs::write(&path, self.to_kv().to_string())?;
        Ok(path)
    }
}

fn timestamp() -> Result<u64, Failure> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Failure::new(
                "config",
                format!("SOURCE_DATE_EPOCH is not an integer: `{v}`"),
            )
        }),
        Err(_) => Ok(SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let mut file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Failure::missing(path),
        _ => e.into(),
    })?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
