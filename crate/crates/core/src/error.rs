use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: usize, key: String },

    #[error("corpus alignment failed with {} violation(s):\n{}", .0.len(), render_violations(.0))]
    Alignment(Vec<Violation>),

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("unknown member `{member}` in group `{group}`")]
    UnknownMember { group: String, member: String },

    #[error("member `{0}` cannot be paired with itself")]
    SelfPair(String),

    #[error("group `{group}` has {members} member(s); agreement needs at least 2")]
    SingletonEnsemble { group: String, members: usize },

    #[error("group `{0}` has no gold labels")]
    NoGold(String),

    #[error("label coverage incomplete for group `{group}`: {missing} instance(s) unlabeled")]
    IncompleteLabels { group: String, missing: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate regression: {0}")]
    Degenerate(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("invalid model file: {0}")]
    Model(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The error with any file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by the numbers rather than the data or the filesystem.
    pub fn is_degenerate_math(&self) -> bool {
        matches!(
            self.root(),
            Error::Degenerate(_) | Error::SingletonEnsemble { .. }
        )
    }
}

fn render_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}
