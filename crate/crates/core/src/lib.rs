//! Probing harness for contextual token embeddings.
//!
//! The crate generates controlled five-word (and distance-extended) probing
//! datasets from a feature-annotated lexicon, aligns externally exported token
//! embeddings to sentence roles, trains multilayer-perceptron probes on one
//! probed role at a time, and aggregates repeated runs into accuracies with
//! bootstrap confidence intervals.
//!
//! Module map:
//!
//! - [`lexicon`]: vocabulary file loading, encoder filtering, pool sampling.
//! - [`genset`]: task specifications and dataset generation.
//! - [`embedstore`]: `CTXEMB1` containers, role alignment, GloVe lookup.
//! - [`probe`]: MLP probe training, evaluation and gradient checking.
//! - [`stats`]: outlier filtering, bootstrap intervals, chance tests.
//! - [`config`], [`matrix`], [`report`]: the experiment runner and its outputs.

pub mod config;
pub mod embedstore;
pub mod genset;
pub mod lexicon;
pub mod matrix;
pub mod probe;
pub mod report;
pub mod rng;
pub mod stats;

pub use config::ExperimentConfig;
pub use embedstore::{EmbeddingSet, FeatureTable};
pub use genset::{Dataset, InfoType, Role, SentenceItem, Split, TaskSpec, Template};
pub use lexicon::{LexicalEntry, Lexicon};
pub use probe::{ProbeConfig, TrainedProbe};
pub use stats::{ProbeResult, RunSet};
