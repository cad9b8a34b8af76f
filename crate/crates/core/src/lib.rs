//! Multi-relational embeddings of counted household knowledge triples.
//!
//! The crate covers the whole experimental pipeline: a typed vocabulary and
//! observation bag, a seeded synthetic corpus generator, fold construction
//! for three evaluation protocols, closed-world negative sampling, a bilinear
//! model with block-diagonal normal relation maps, a training loop, ranking
//! metrics (including count-aware variants) with significance tests, and the
//! comparison baselines.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); metric functions
//! are generic over any numeric type, so they also run on exact rationals.

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod generate;
pub mod kv;
pub mod model;
pub mod negatives;
pub mod scalar;
pub mod seed;
pub mod splits;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use eval::{evaluate, rank_answers, QueryPattern, RankingReport, Scorer, Slot};
pub use generate::{generate_corpus, Corpus, GenParams};
pub use model::{memory_bytes, EmbeddingModel, RelationForm};
pub use negatives::{NegativeSampler, SamplerConfig};
pub use scalar::Scalar;
pub use splits::{FoldSpec, Protocol};
pub use train::{train, TrainConfig, TrainHistory};
pub use vocab::{ingest, EntityId, RelationId, Triple, TripleBag, VocabPolicy, Vocabulary};

/// Double-precision model.
pub type Model = EmbeddingModel<f64>;
/// Single-precision model.
pub type Model32 = EmbeddingModel<f32>;
