//! Machine-behavior pipeline for affective representations.
//!
//! The crate covers the full path from a stimulus corpus to an analyzed
//! embedding space:
//!
//! - [`corpus`]: rating matrices and caption sets, CSV/JSONL ingestion.
//! - [`triplets`]: odd-one-out trial sampling, deterministic oracles, prompt
//!   rendering and reply parsing for external agents, positional-bias audits.
//! - [`spose`]: sparse positive similarity embeddings trained from triplet
//!   choices, plus held-out evaluation and reproducibility scoring.
//! - [`geometry`]: similarity matrices, reliability-corrected consistency,
//!   nearest-centroid classification and component labeling.
//! - [`neuro`]: synthetic voxel volumes, nested-CV ridge encoding and
//!   spherical searchlight RSA.
//! - [`graph`]: component correlation graphs, Louvain communities, PageRank,
//!   cross-system cluster overlap and per-stimulus component pruning.

pub mod corpus;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod neuro;
pub mod spose;
pub mod stats;
pub mod triplets;

pub use corpus::{CaptionSet, Corpus, RatingKind, RatingMatrix, StimulusId};
pub use error::{Error, ErrorClass, Result};
pub use spose::{Embedding, TrainConfig};
pub use triplets::{Judgment, JudgmentSource, Observation, Position, TieRule, TripletTrial};
