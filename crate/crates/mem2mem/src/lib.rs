//! Memory-to-memory hierarchical encoder-decoder for abstractive
//! summarization.
//!
//! The model encodes a document with word- and sentence-level GRUs,
//! compresses the sentence states into a small multi-head memory bank,
//! transfers that bank to the decoder, and lets the decoder read and
//! rewrite it while generating with hierarchical attention, a
//! pointer-generator output layer and coverage. Two regularizers shape the
//! memory: a diversity penalty on the compression attention and a read
//! penalty tying memory readouts to the sentence-attention context.
//!
//! Everything runs on a small tape-based reverse-mode autodiff core
//! ([`graph`]), so the whole stack — compression, transfer, gated writes,
//! both regularizers, pointer mixing — trains end to end.
//!
//! Start with the runnable examples: `cargo run --example <name>`, e.g.
//! `train_synthetic`, `memory_inspection`, `gradient_check`. The `mem2mem`
//! binary wraps the same library calls as subcommands (`train`,
//! `summarize`, `evaluate`, `inspect`, `synth`).

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod memory;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Op, TensorId};
pub use tensor::Tensor;
