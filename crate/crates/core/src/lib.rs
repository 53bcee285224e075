//! Generative recommendation over hierarchical semantic IDs with
//! representation-aware token pruning inside the encoder.
//!
//! Pipeline: [`sid`] quantizes item embeddings into code tuples, [`data`]
//! turns interaction logs into token sequences, [`model`] is a small
//! encoder–decoder trained on them, [`pruner`] drops low-importance tokens
//! mid-encoder, and [`trainer`] runs training and Recall/NDCG evaluation.

pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod pruner;
pub mod sid;
pub mod tensor;
pub mod tokens;
pub mod trainer;

pub use error::{Error, Result};
