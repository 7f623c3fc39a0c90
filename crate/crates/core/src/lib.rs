//! Temporal-aware claim verification: date normalization and encoding,
//! event extraction, graph-attention evidence scoring, triplet training,
//! verdict aggregation, claim augmentation and evaluation.

pub mod augment;
pub mod autodiff;
pub mod corpus;
pub mod encoder;
pub mod evalkit;
pub mod events;
pub mod model;
pub mod pipeline;
pub mod relevance;
pub mod synth;
pub mod temporal;
pub mod tensor;
pub mod text;
pub mod training;
pub mod verdict;

pub use augment::{ClaimRecord, GoldEvidence, Provenance};
pub use corpus::{Document, DocumentStore, SentenceRef};
pub use encoder::{EmbeddingProvider, HashStubProvider, Representation};
pub use evalkit::{Prediction, Report};
pub use events::{Event, EventPair, EventSet, EventSource};
pub use model::ModelParams;
pub use relevance::{GatParams, ScoredSentence};
pub use temporal::{Granularity, Predicate, TemporalArgument, TimePoint};
pub use tensor::Matrix;
pub use training::TrainConfig;
pub use verdict::Verdict;
