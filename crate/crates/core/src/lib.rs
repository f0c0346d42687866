//! Regularized Best-of-N reranking.
//!
//! Candidate sets carry proxy rewards, embeddings and optional log-probabilities.
//! Selection rules range from plain Best-of-N to rules regularized by the
//! minimum-Bayes-risk objective or by the reference log-probability, with an
//! exact transport solver to check the MBR/Wasserstein correspondence.

pub mod candidate;
pub mod error;
pub mod io;
pub mod proximity;
pub mod selection;
pub mod stats;
pub mod synthetic;
pub mod transport;
pub mod tuning;
pub mod utility;

#[cfg(any(test, feature = "test-oracles"))]
pub mod oracles;

pub use candidate::{validate_set, Candidate, CandidateSet, PreferencePair};
pub use error::{Error, Result};
pub use selection::{Beta, Method, PairChooser, SelectionResult, Selector};
pub use utility::{mbr_objectives, utility_matrix, MbrScores, UtilityMatrix};
