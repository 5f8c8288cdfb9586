//! Bi-level multi-interest learning for sequential recommendation.
//!
//! The crate is organized around an offline/online split. Offline, user
//! histories are embedded as text, clustered with affinity propagation, and
//! the cluster exemplars are sent to a language model that names the
//! interests behind them (`textenc`, `apcluster`, `esim`). Those semantic
//! interests supervise the training of a behavioral multi-interest model
//! through auxiliary prediction and alignment losses (`ibim`, `objectives`,
//! `trainer`). Online, retrieval runs on the trained item embeddings alone:
//! no text encoding and no language-model calls (`retrieval`, `metrics`).

pub mod apcluster;
pub mod dataset;
pub mod error;
pub mod esim;
pub mod ibim;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod textenc;
pub mod trainer;

pub use error::{Error, Result};
