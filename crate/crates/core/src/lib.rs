//! Two-phase span-based joint entity and relation extraction.
//!
//! Phase one decides which spans are entities and which ordered entity pairs
//! are related; phase two assigns types. Representations from several sources
//! are combined with a learned gated fusion, and relation typing is
//! conditioned on the predicted entity types and their distance.

pub mod candidates;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod graph;
pub mod math;
pub mod model;
pub mod training;

pub use candidates::{Polarity, RelationCandidate, Span, SpanSample};
pub use checkpoint::{load_checkpoint, save_checkpoint, Fingerprint};
pub use config::RunConfig;
pub use corpus::{EntityMention, LabelCounts, LabelVocab, RelationMention, Sentence};
pub use encoder::{Encoder, EncoderAdapter, EncoderKind, TokenEmbeddingSequence};
pub use error::{Error, Result};
pub use evaluation::{MatchPolicy, Preset, Prf, Scores};
pub use model::{Ablation, Model, ModelConfig, ModelFlags, Prediction};
pub use training::{train, LossReport, TrainConfig, TrainOutcome};
