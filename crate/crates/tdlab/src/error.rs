use std::path::PathBuf;

use serde::Serialize;
use tdlab_core::sa_checks::AssumptionReport;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("assumptions violated: {}", .0.failures().join("; "))]
    Assumptions(AssumptionReport),
    #[error("{0}")]
    Core(#[from] tdlab_core::Error),
    #[error("{context} {}: {source}", path.display())]
    Io {
        context: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// 1 for bad input, 2 for failed numerical assertions, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        use tdlab_core::Error as E;
        match self {
            Self::Parse { .. } | Self::Validation { .. } | Self::Assumptions(_) => 1,
            Self::Io { .. } => 3,
            Self::Core(e) => match e {
                E::InvalidStochastic { .. }
                | E::NotIrreducible
                | E::DimensionMismatch { .. }
                | E::InvalidParameter(_)
                | E::AssumptionViolation(_) => 1,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Parse { .. } => "ParseError",
            Self::Validation { .. } => "ValidationError",
            Self::Assumptions(_) => "AssumptionError",
            Self::Core(_) => "ComputationError",
            Self::Io { .. } => "IoError",
        }
    }

    /// JSON body written to stderr by the CLI.
    pub fn to_report(&self) -> ErrorReport<'_> {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            field: match self {
                Self::Validation { field, .. } => Some(field),
                _ => None,
            },
            assumptions: match self {
                Self::Assumptions(report) => Some(report),
                _ => None,
            },
            exit_code: self.exit_code(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<&'a AssumptionReport>,
    pub exit_code: i32,
}

pub type Result<T> = std::result::Result<T, HarnessError>;
