//! Two-stage misinformation detection: finetune a transformer encoder, pool
//! its hidden states into sentence vectors, then classify the vectors with a
//! small neural head.

pub mod autograd;
pub mod benchmark;
pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod heads;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use optim::{adam_step, AdamState};
pub use params::ParamStore;
pub use rng::SeedTree;
pub use tensor::Tensor;
