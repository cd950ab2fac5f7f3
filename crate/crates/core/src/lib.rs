//! Short-term landslide early warning pipeline on gridded rainfall data.
//!
//! The crate covers the full chain at desk scale: grid data model and file
//! formats ([`geogrid`]), dense optical-flow motion estimation ([`motion`]),
//! semi-Lagrangian rainfall nowcasting ([`nowcast`]), displacement-based
//! training-view augmentation ([`augment`]), a compact CNN + Transformer
//! encoder with hand-written backward passes ([`neural`]), contrastive and
//! focal objectives ([`losses`]), synthetic scenario generation and the
//! training procedures ([`pipeline`]), and precision-recall evaluation with
//! the robustness ablation harness ([`evalkit`]).

pub mod augment;
pub mod error;
// TEMP: modules under construction
// pub mod evalkit;
pub mod geogrid;
pub mod losses;
pub mod motion;
pub mod neural;
pub mod nowcast;
// pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
