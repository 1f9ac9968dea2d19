//! FastGRNN-FCN flood classifier.
//!
//! * [`tensor`]: dense f64 arrays with a reverse-mode tape and gradient checker.
//! * [`fastgrnn`] / [`fcn`]: the two network branches.
//! * [`hybrid`]: model assembly, weighted loss, training and model files.
//! * [`eval`]: confusion counts, PR / F-measure curves and weight sweeps.
//! * [`floodgen`]: synthetic channel-network simulator, windowing and CSV IO.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fastgrnn;
pub mod fcn;
pub mod floodgen;
pub mod hybrid;
pub mod rng;
pub mod tensor;

pub use dataset::Dataset;
pub use error::{Error, LoadError, Result};
pub use hybrid::{Model, ModelConfig, Variant};
pub use rng::RngState;
pub use tensor::{Mode, Tape, Tensor, Var};
