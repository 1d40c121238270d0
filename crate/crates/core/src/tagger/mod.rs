//! The trainable multi-scope tagger: a character-embedding Bi-LSTM encoder
//! feeding per-scope anchor and length classifiers.

mod checkpoint;
mod embeddings;
mod network;
mod optim;
mod params;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_params, params_from_bytes, params_to_bytes, save_params, Checkpoint, FORMAT_VERSION, MAGIC};
pub use embeddings::{load_vectors, parse_vectors};
pub use network::{backward, forward, forward_trace, gradients, loss, Dropout, Input, Logits, Sample, Trace};
pub use optim::{clip_global_norm, AdamW};
pub use params::{Architecture, Group, HeadLayout, Linear, LstmCell, Matrix, ModelParams, Vocab, Weights, PAD, UNK};
pub use train::{
    build_examples, evaluate, extract, predict, train, train_split, train_with_validation, Example, OwnedInput,
    SplitVectors, TrainReport,
};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint checksum failure")]
    Checksum,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("embedding file: {0}")]
    Embeddings(String),
}

/// Training hyperparameters. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_heads: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub max_len: usize,
    pub seed: u64,
    pub use_recurrent_encoder: bool,
    /// Share of the training corpus held out for validation when no
    /// separate validation corpus is given.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr_encoder: 0.01,
            lr_heads: 0.01,
            dropout: 0.1,
            weight_decay: 0.01,
            clip_norm: 5.0,
            embed_dim: 32,
            hidden: 32,
            layers: 1,
            max_len: 63,
            seed: 42,
            use_recurrent_encoder: true,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        let unit = [
            ("lr_encoder", self.lr_encoder),
            ("lr_heads", self.lr_heads),
            ("dropout", self.dropout),
            ("weight_decay", self.weight_decay),
            ("validation_fraction", self.validation_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..1.0).contains(&v) {
                return Err(TaggerError::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TaggerError::Config(format!("{name} must be positive")));
            }
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(TaggerError::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, heads: HeadLayout) -> Architecture {
        Architecture {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            layers: self.layers,
            recurrent: self.use_recurrent_encoder,
            max_len: self.max_len,
            heads,
            external_embeddings: false,
        }
    }
}

/// Named random streams derived from one seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Toy = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
