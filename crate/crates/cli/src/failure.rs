use std::fmt;
use std::path::Path;

/// Command failure rendered as a single `error kind=... message=...` line.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn missing(path: &Path) -> Self {
        Self::new(
            "missing_artifact",
            format!("{} does not exist", path.display()),
        )
    }
}

impl From<clusd_core::Error> for Failure {
    fn from(e: clusd_core::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Debug formatting quotes the message and escapes newlines.
        write!(f, "error kind={} message={:?}", self.kind, self.message)
    }
}
