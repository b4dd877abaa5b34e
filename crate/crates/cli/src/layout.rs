use std::path::{Path, PathBuf};

use crate::failure::Failure;

/// File names inside a data directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.dir.join("corpus.clsd")
    }

    pub fn queries(&self) -> PathBuf {
        self.dir.join("queries.clsd")
    }

    pub fn qrels(&self) -> PathBuf {
        self.dir.join("qrels.txt")
    }

    pub fn index(&self) -> PathBuf {
        self.dir.join("index.clsi")
    }

    pub fn clusters(&self) -> PathBuf {
        self.dir.join("clusters.clsc")
    }

    pub fn store(&self) -> PathBuf {
        self.dir.join("store.clss")
    }

    pub fn pq(&self) -> PathBuf {
        self.dir.join("pq.clsp")
    }

    pub fn selector(&self) -> PathBuf {
        self.dir.join("selector.clsl")
    }

    /// Selector layout the parameters were trained for.
    pub fn selector_conf(&self) -> PathBuf {
        self.dir.join("selector.txt")
    }

    pub fn train_loss(&self) -> PathBuf {
        self.dir.join("train_loss.txt")
    }

    pub fn run_file(&self, label: &str) -> PathBuf {
        self.dir.join(format!("run.{label}.txt"))
    }

    pub fn bench_dir(&self) -> PathBuf {
        self.dir.join("bench")
    }

    pub fn ensure(&self) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.dir)?;
        Ok(())
    }
}

/// Fails with `missing_artifact` unless `path` is an existing file.
pub fn require(path: &Path) -> Result<&Path, Failure> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::missing(path))
    }
}
