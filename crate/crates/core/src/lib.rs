//! Multi-scope nested named entity recognition.
//!
//! Nested mentions are encoded as per-token (anchor, length) labels under
//! several scopes, predicted by a character-level Bi-LSTM tagger, decoded
//! per scope and merged back into one mention set.

pub mod corpus;
pub mod eval;
pub mod scalar;
pub mod scope_codec;
pub mod tagger;
pub mod toy;

pub use corpus::{Corpus, Mention, Sentence};
pub use scalar::Scalar;
pub use scope_codec::{Labeling, Scope};

/// Single-precision parameters, used for training and checkpoints.
pub type Params = tagger::ModelParams<f32>;
/// Double-precision parameters, used for gradient checks.
pub type Params64 = tagger::ModelParams<f64>;
pub type Prediction = scope_codec::ScopePrediction<f32>;
