//! Training-free composed image retrieval: dual-path search over an
//! embedding index, verifier-confidence fusion, and gated self-reflective
//! refinement, with every model role behind a pluggable backend.

pub mod backends;
pub mod config;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod index;
pub mod pipeline;
pub mod refine;
pub mod synth;
pub mod types;

pub use config::{validate_config, FusionMode, PipelineConfig};
pub use error::{Error, Result};
pub use index::{build_index, EmbeddingIndex, EmbeddingRecord, RankedCandidate, UnionPool};
pub use pipeline::{run_batch, run_query, Database, QueryOutcome, QueryTrace};
pub use types::{ComposedQuery, Pathway};
