//! Few-shot classification with trainable class prototypes.
//!
//! Given precomputed embedding vectors for an N-way k-shot episode, the
//! pipeline in this crate
//!
//! 1. builds a sparsified cosine-similarity graph over support and query
//!    features and propagates features through it ([`taskgraph`]),
//! 2. trains a linear softmax head on the (mixup-augmented) support rows
//!    ([`headcls`]),
//! 3. trains one prototype per class against a classification + entropy +
//!    cosine-metric objective, or falls back to class means ([`prototrain`]),
//! 4. classifies queries by cosine similarity to the prototypes, optionally
//!    after reweighting query channels with a prototype-derived attention
//!    mask ([`metriccls`]).
//!
//! [`pipeline::run_episode`] ties the steps together for one sampled episode.
//! Everything here is `no_std` + `alloc`; file formats, the parallel
//! evaluation loop and the CLI live in the `protoshot` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod diag;
pub mod embedset;
pub mod error;
pub mod headcls;
pub mod linalg;
pub mod math;
pub mod metriccls;
pub mod optim;
pub mod pipeline;
pub mod prototrain;
pub mod rng;
pub mod stats;
pub mod taskgraph;
pub mod verify;

pub use diag::Diagnostics;
pub use embedset::{EmbeddingSet, Episode};
pub use error::{Error, Result};
pub use linalg::{Matrix, SparseMatrix};
pub use pipeline::{run_episode, PipelineConfig};
