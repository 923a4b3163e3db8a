//! Desk-scale deep speaker verification workbench.
//!
//! Two systems are built on a shared acoustic front-end and a small
//! differentiable-layer engine:
//!
//! * a frame-level speaker classifier whose last hidden layer is averaged
//!   into utterance-level d-vectors, scored with cosine, LDA or PLDA
//!   back-ends ([`dvector`], [`backends`]);
//! * a pairwise end-to-end network with time-delay network-in-network
//!   layers, mean pooling and a bilinear same/different scorer ([`e2e`]).
//!
//! [`eval`] builds gender-matched trial lists and computes equal error rates;
//! [`datagen`] synthesizes a deterministic source-filter speaker corpus.

pub mod backends;
pub mod container;
pub mod corpus;
pub mod datagen;
pub mod dvector;
pub mod e2e;
pub mod eval;
pub mod error;
pub mod exec;
pub mod frontend;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
pub use exec::Exec;
