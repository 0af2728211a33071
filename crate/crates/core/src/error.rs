use crate::autodiff::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{file}:{line}: {reason}")]
    Json {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{file}: line {line}: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}: line {line}: unknown node type `{token}`")]
    UnknownNodeType {
        file: String,
        line: usize,
        token: String,
    },
    #[error("{file}: line {line}: edge references undeclared node `{key}`")]
    UndeclaredNode {
        file: String,
        line: usize,
        key: String,
    },
    #[error("{file}: line {line}: self-edge on `{key}`")]
    SelfEdge {
        file: String,
        line: usize,
        key: String,
    },
    #[error("node key `{0}` declared twice")]
    DuplicateNode(String),
    #[error("node {node} out of range (graph has {count} nodes)")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("invalid subgraph export: {0}")]
    InvalidExport(String),
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("hop count must be at least 1")]
    ZeroHops,
    #[error("none of the {0} phenotype IDs is a phenotype node of the graph")]
    NoValidPhenotypes(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameter shapes do not match the model configuration: {0}")]
    ParamShape(String),
    #[error("model has {params} embedding rows but the graph has {graph} nodes")]
    GraphSize { params: usize, graph: usize },
    #[error("subgraph is empty")]
    EmptySubgraph,
    #[error("patient has no phenotype nodes in the subgraph")]
    NoPhenotypes,
    #[error("candidate gene {0:?} has no incoming arcs")]
    IsolatedGene(crate::graph::NodeId),
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training cohort is empty")]
    EmptyCohort,
    #[error("non-finite loss on patient `{patient}` (epoch {epoch})")]
    NonFiniteLoss { patient: String, epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("patient `{patient}`: {reason}")]
    Patient { patient: String, reason: String },
    #[error("checkpoint does not match the run: {0}")]
    ResumeMismatch(String),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint entry `{0}` missing")]
    MissingEntry(String),
    #[error("malformed checkpoint entry `{name}`: {reason}")]
    BadEntry { name: String, reason: String },
}
