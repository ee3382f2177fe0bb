//! Cross-layer divergence signatures for estimating LLM answer correctness.
//!
//! Per-instance activations (`[token][layer][dim]`) are turned into `L × L`
//! maps of directed divergences between layer-wise softmax distributions,
//! flattened, and fed to a histogram gradient-boosted tree classifier. The
//! [`eval`] module holds the metrics and the experiment protocols that compare
//! it against a linear probe on raw hidden states.

pub mod dataset;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod numeric;
pub mod probe;
pub mod seed;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    ActivationStack, ConfidenceScore, DivergenceKind, FeatureVector, InstanceRecord,
    ModelGeometry, SignatureConfig, SignatureMap, Split, TokenAggregation,
};
