//! # tagweave
//!
//! Genre tag embeddings derived from an audio classifier, and their use for
//! taxonomy induction, duplicate-tag detection and translation between tag
//! systems that share no tracks.
//!
//! A monolabel classifier is trained on excerpts whose single label is drawn
//! per album with probability inversely proportional to tag popularity. Its
//! confusions then define four tag embeddings (last-layer weight columns,
//! posterior columns, per-tag mean posteriors, and plain occurrence columns as
//! a non-audio baseline) compared with cosine similarity.
//!
//! ```text
//! annotations ─ split ─ sample/balance ─ train ─ predict ─ embed ─ similarity ─ evaluate
//! ```
//!
//! The [`synthgen`] module generates corpora with a known hierarchy so every
//! stage can be checked against ground truth; [`pipeline`] wires the stages
//! into the three experiments.

pub mod classifier;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod matrix_file;
pub mod pipeline;
pub mod sampling;
pub mod synthgen;

pub use classifier::{Classifier, MlpClassifier, OutputMatrix, TrainingConfig};
pub use dataset::{AnnotationSet, DatasetSplit, TagSystem, TaxonomyEdge, TrackRef};
pub use embeddings::{EmbeddingKind, SimilarityMatrix, TagEmbedding};
pub use error::{Error, Result};
pub use evaluation::{EvalSettings, RankedEvaluation, RankedQuery};
pub use features::FeatureMatrix;
