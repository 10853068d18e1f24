//! Core library for mapping bill-of-materials components to LCA activities.
//!
//! Numeric code that touches embeddings is generic over [`Scalar`] (`f32` or
//! `f64`). Persisted indexes are always `f32`.

pub mod decisions;
pub mod docmatch;
pub mod embedding;
pub mod eval;
pub mod fixtures;
pub mod http;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod scalar;

pub use embedding::{
    cosine, EmbedError, Embedding, EmbeddingBackend, EmbeddingBackendDescriptor, LocalHashEmbedder,
    RemoteEmbedder,
};
pub use index::{build_index, ActivityIndex, IndexError};
pub use llm::{CannedLlm, LlmBackend, LlmBackendDescriptor, LlmError, RemoteChat};
pub use model::{
    ActivityId, BomEntry, Candidate, CandidateRanking, ComponentId, Datasheet, DecisionSource,
    LcaActivity, MappingDecision, Mode, PipelineConfig,
};
pub use pipeline::{Backends, Pipeline, RunReport};
pub use scalar::Scalar;

pub type Embedding32 = Embedding<f32>;
pub type Embedding64 = Embedding<f64>;
pub type ActivityIndex32 = ActivityIndex<f32>;
pub type ActivityIndex64 = ActivityIndex<f64>;
pub type Pipeline32<'a> = Pipeline<'a, f32>;
pub type Pipeline64<'a> = Pipeline<'a, f64>;
