//! Compact differentiable model: a terrain CNN branch, a rain CNN +
//! Transformer branch, mean pooling into a unified embedding, and an MLP
//! prediction head — all with hand-written, finite-difference-verified
//! backward passes, plus AdamW and checkpointing.

pub mod adamw;
pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod real;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint};
pub use encoder::{
    encode_backward, encode_batch, encode_one, head_backward, predict_batch, predict_one,
    BatchInput, Embedding, EncoderCache, HeadCache,
};
pub use params::{layer_specs, EncoderConfig, GradMap, ModelParams, ParamKind};
pub use real::Real;
