use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0:?} is equidistant to two primitive surfaces")]
    SeamAmbiguity([f64; 3]),

    #[error("no scan ray hit any surface")]
    EmptyScan,

    #[error("non-finite value in field output at {0:?}")]
    NonFiniteOutput([f64; 3]),

    #[error("point {0:?} lies on a feature-grid cell face")]
    CellBoundary([f64; 3]),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFiniteLoss { step: Option<u64> },

    #[error("sampling pool `{0}` has no candidates")]
    EmptyPool(&'static str),

    #[error("isosurface extraction produced no triangles")]
    EmptyMesh,

    #[error("grid specs do not match")]
    SpecMismatch,

    #[error("no pixel is valid in both depth maps")]
    NoValidPixels,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that come from the numerics rather than from inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteOutput(_)
                | Error::NonFiniteGradient
                | Error::NonFiniteLoss { .. }
                | Error::EmptyMesh
                | Error::NoValidPixels
                | Error::CellBoundary(_)
        )
    }
}
