//! Label-dependent attention model (LDAM) for multimodal risk prediction.
//!
//! Clinical notes and multichannel time series are weighted by
//! cross-attention against embeddings of the risk-label names, fused, and
//! scored with one sigmoid per label.

pub mod cli;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{LdamError, Result};
