//! Federated embedding learning over disjoint label spaces.
//!
//! Each client trains an embedding network together with a private
//! classification head and a local expert that regularises the client through
//! temperature-scaled distillation. The server only ever sees embedding
//! parameters, averages them over a random fraction of clients and can mask
//! the result with white noise.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: feed-forward networks with manual backpropagation and SGD.
//! * [`losses`]: cross-entropy and distillation kernels.
//! * [`data`]: synthetic multi-domain datasets, augmentation and persistence.
//! * [`eval`]: retrieval metrics (CMC, mAP) and classification accuracy.
//! * [`federation`]: the client/server protocol and the in-process simulator.
//! * [`baselines`]: individual, centralised and ensemble reference models.
//!
//! Data-parallel loops (client rounds, distance matrices, experiment sweeps)
//! go through [`exec`], which uses rayon when the `parallel` feature is on
//! and falls back to plain iteration otherwise.

pub mod baselines;
pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod losses;
pub mod nn;
pub mod params;
pub mod presets;
pub mod rng;

pub use error::{Error, FormatError, Result};
pub use exec::ExecMode;
pub use params::{LayerShape, ParamBlock};
