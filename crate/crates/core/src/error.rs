use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, stable across releases so scripts can branch on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Format,
    DegenerateGeometry,
    Domain,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Format => "format",
            ErrorCategory::DegenerateGeometry => "degenerate-geometry",
            ErrorCategory::Domain => "domain",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated data: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("truncated `{element}` records: expected {expected}, found {actual}")]
    TruncatedRecords {
        element: String,
        expected: usize,
        actual: usize,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error(
        "no dominant plane found (best inlier fraction {inlier_fraction:.4}); \
         use the perspective fallback (`orthoforge warp`) instead"
    )]
    NoPlane { inlier_fraction: f64 },
    #[error("{0}")]
    Domain(String),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn csv(path: &std::path::Path, e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line() as usize);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                line,
                message: format!("{other:?}"),
            },
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::Truncated { .. } | Error::TruncatedRecords { .. } => ErrorCategory::Io,
            Error::Image(image::ImageError::IoError(_)) => ErrorCategory::Io,
            Error::Parse { .. } | Error::Schema(_) | Error::Format(_) | Error::Image(_) => ErrorCategory::Format,
            Error::DegenerateGeometry(_) | Error::NoPlane { .. } => ErrorCategory::DegenerateGeometry,
            Error::Domain(_) => ErrorCategory::Domain,
        }
    }
}
