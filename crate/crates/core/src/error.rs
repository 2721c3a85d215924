use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape is empty")]
    EmptyShape,
    #[error("shape invariant violated: {0}")]
    InvalidShape(String),
    #[error("edge-connected neighborhood requested on a pure point cloud")]
    NoEdges,
    #[error("k must be positive for k-nearest neighborhoods")]
    BadK,
    #[error("vertex {0} has an empty neighbor list")]
    EmptyNeighborList(usize),
    #[error("vertex {0} has degenerate (all-coincident) neighbors")]
    DegenerateNeighbors(usize),
    #[error("normals required but not available")]
    MissingNormals,
    #[error("vertex count mismatch: {0} vs {1}")]
    VertexCountMismatch(usize, usize),
    #[error("icosphere subdivision level {0} exceeds guard (max {1})")]
    LevelTooHigh(u32, u32),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("non-finite gradient at vertex {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite energy at trajectory frame {0}")]
    NonFiniteEnergy(usize),
    #[error("non-finite loss at training iteration {0}")]
    NonFiniteLoss(u64),
    #[error("non-finite model output")]
    NonFiniteOutput,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model shape mismatch: {0}")]
    ModelMismatch(String),
    #[error("equispaced intervals differ across trajectories: {0} vs {1}")]
    IntervalMismatch(usize, usize),
    #[error("point counts must match for EMD: {0} vs {1}")]
    EmdCountMismatch(usize, usize),
    #[error("point count {0} exceeds the EMD solver cap ({1})")]
    EmdTooLarge(usize, usize),
    #[error("metric sets too small: need at least 2 shapes per side")]
    MetricSetsTooSmall,
    #[error("histogram resolution must be >= 2")]
    BadResolution,
    #[error("unsupported file extension: {0}")]
    UnknownExtension(String),
    #[error("{path}:{line}: malformed record: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("trajectory frame file missing: {0}")]
    MissingFrame(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
