use std::fmt;
use std::path::{Path, PathBuf};

use crate::config::ConfigError;

/// Process exit status for a failed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags, bad config, or a missing prerequisite.
    Usage = 2,
    /// The command started but failed, e.g. diverged training.
    Runtime = 1,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: ExitKind,
    pub kind: &'static str,
    pub path: Option<PathBuf>,
    pub message: String,
}

impl CliError {
    pub fn usage(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            exit: ExitKind::Usage,
            kind,
            path: None,
            message: message.into(),
        }
    }

    pub fn missing(path: &Path, what: &str) -> Self {
        Self {
            exit: ExitKind::Usage,
            kind: "missing_path",
            path: Some(path.to_path_buf()),
            message: format!("{what} not found: {}", path.display()),
        }
    }

    pub fn code(&self) -> i32 {
        self.exit as i32
    }

    /// One line: `error kind=<kind> code=<n> path=<json> message=<json>`.
    pub fn line(&self) -> String {
        let quote = |s: &str| serde_json::to_string(s).expect("string serializes");
        let path = self
            .path
            .as_ref()
            .map(|p| quote(&p.display().to_string()))
            .unwrap_or_else(|| "null".into());
        format!(
            "error kind={} code={} path={} message={}",
            self.kind,
            self.code(),
            path,
            quote(&self.message)
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Read { .. } => "config_read",
            ConfigError::Parse { .. } => "config_parse",
            ConfigError::UnknownKey { .. } => "config_unknown_key",
            ConfigError::Invalid(_) => "config_invalid",
        };
        let path = match &e {
            ConfigError::Read { path, .. } => Some(path.clone()),
            _ => None,
        };
        Self {
            exit: ExitKind::Usage,
            kind,
            path,
            message: e.to_string(),
        }
    }
}

impl From<acdl::Error> for CliError {
    fn from(e: acdl::Error) -> Self {
        use acdl::Error as E;
        let (exit, kind, path) = match &e {
            E::MissingDir(p) => (ExitKind::Usage, "missing_path", Some(p.clone())),
            E::Invalid(_) | E::Shape { .. } => (ExitKind::Usage, "invalid_argument", None),
            E::Diverged { .. } => (ExitKind::Runtime, "diverged", None),
            E::Checkpoint(_) | E::Integrity(_) => (ExitKind::Runtime, "checkpoint", None),
            E::Dataset(_) | E::Format(_) | E::Unsupported(_) => (ExitKind::Runtime, "dataset", None),
            E::Io(_) => (ExitKind::Runtime, "io", None),
            _ => (ExitKind::Runtime, "runtime", None),
        };
        Self {
            exit,
            kind,
            path,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        acdl::Error::Io(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;
