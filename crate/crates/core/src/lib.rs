//! Detection of synthetic speech inserted into real recordings.
//!
//! The pipeline runs log linear-filterbank features through a speech
//! activity mask, extracts sliding-window x-ResNet embeddings, scores them
//! with a PLDA (or GMM) backend and pools the window scores into one
//! utterance score.

pub mod archive;
pub mod audio;
pub mod augment;
pub mod backend;
pub mod config;
pub mod error;
pub mod features;
pub mod nnet;
pub mod pipeline;
pub mod sad;
pub mod scoring;
pub mod toy;

pub use error::{Error, Result};
