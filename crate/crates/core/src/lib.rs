//! Screening conversations for early signs of depression.
//!
//! Conversations are cut into overlapping windows of consecutive
//! utterances, each window is classified by a bidirectional recurrent
//! network over frozen utterance embeddings, and the share of positive
//! windows is compared with a threshold chosen on validation data. A
//! bag-of-words logistic regression serves as the baseline, and models can
//! be pretrained on a large source corpus before fine-tuning on a small
//! target corpus.

pub mod calibration;
pub mod checkpoint;
pub mod chunking;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod transfer;

pub use error::{Error, Result};
