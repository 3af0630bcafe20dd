use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("degenerate grid: dims {0:?} below the 8^3 minimum")]
    DegenerateGrid([usize; 3]),

    #[error("zero variance")]
    ZeroVariance,

    #[error("roi center {0:?} lies outside the volume bounds")]
    RoiOutOfBounds([f64; 3]),

    #[error("rasterization requires closed surface")]
    NotClosed,

    #[error("no foreground")]
    NoForeground,

    #[error("face {face} index {index} out of range for {vertex_count} vertices")]
    IndexOutOfRange { face: usize, index: usize, vertex_count: usize },

    #[error("face {0} is degenerate (repeated vertex index)")]
    DegenerateFace(usize),

    #[error("template must be spherical topology (g = 0): {0}")]
    TemplateTopology(String),

    #[error("template vertex {index} at {position:?} lies outside [-1,1]^3")]
    TemplateOutOfRange { index: usize, position: [f64; 3] },

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("{what} requires a nonempty input")]
    Empty { what: &'static str },

    #[error("vertex {0} has no neighbors")]
    IsolatedVertex(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite energy in term `{term}` at stage {stage}, iteration {iteration}")]
    NonFiniteEnergy { term: &'static str, stage: usize, iteration: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("units: {0}")]
    Units(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("export refused: {0}")]
    ExportRefused(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
