//! Supervised feature selection with sparse adaptive bottleneck
//! centroid-encoders.
//!
//! The model family trains an encoder/decoder network to map every sample to
//! its class centroid, with extra bottleneck terms pulling samples toward
//! their centroid embedding and repelling centroid embeddings from each
//! other. A diagonal sparsity-promoting layer between the input and the
//! first hidden layer carries an elastic-net penalty; input features are
//! ranked by the absolute value of its weights and cut with an elbow rule.
//! The adaptive variant re-sparsifies the centroid targets from the current
//! sparse weights at every main-phase epoch.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod numerics;
pub mod objective;
pub mod optimizer;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
