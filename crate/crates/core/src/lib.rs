//! Gradient attribution maps filtered by artificial class distancing.
//!
//! The crate covers a minimal CNN with hand-written forward/backward rules,
//! five gradient attribution methods, support-regression distancing that
//! keeps only pixels which stay positive across increasingly separated
//! models, and convex-hull complexity/occlusion-sensitivity evaluation.

pub mod error;
pub mod loss;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use error::{GadError, Result};
pub use network::{Architecture, LayerSpec, Model};
pub use ops::ReluBackwardMode;
pub use tensor::Tensor;
pub mod attribution;
pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod gad;
pub mod par;
pub mod pipeline;
pub mod zoo;
