//! Phenotype-driven gene prioritization over a biomedical knowledge graph:
//! graph store, subgraph sampling, a tape autodiff engine, the attention
//! model and its losses, training, explanation extraction, metrics and a
//! synthetic data generator.

pub mod autodiff;
pub mod cohort;
pub mod digest;
pub mod error;
pub mod eval;
pub mod extract;
pub mod graph;
pub mod model;
pub mod objective;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod trainer;

pub use autodiff::{Tape, Tensor, TensorError};
pub use cohort::{PatientEntry, PatientRecord};
pub use error::{Error, Result};
pub use eval::{MetricReport, Ranking, TiePolicy};
pub use extract::{ExtractionConfig, PatientGraph};
pub use graph::{ArcId, KnowledgeGraph, NodeId, NodeType, SubgraphExport};
pub use model::{ModelConfig, ModelParams, ScoreBundle};
pub use objective::{LossConfig, LossReport};
pub use sampler::{SampledSubgraph, SupervisionLabels};
pub use synth::{SplitMode, SynthConfig};
pub use trainer::{Checkpoint, EpochReport, TrainConfig, TrainOutcome};
